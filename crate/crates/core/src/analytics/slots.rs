//! Slot statistics: convergence opportunities (Y) and everything else (Z)
//! over slots ((i−1)Δ, iΔ], plus the typical-execution test.

use crate::chain::{MinerKind, SimTime};
use crate::trace::{RecordKind, Trace};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotStats {
    /// 1-based slot index.
    pub slot: u64,
    pub honest: u32,
    pub adversarial: u32,
    pub y: u8,
    pub z: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Error)]
#[error("λΔ = {lambda_delta} is outside the λΔ < 1 regime")]
pub struct RegimeWarning {
    pub lambda_delta: f64,
}

/// Slot holding time `t`; a block exactly on a boundary belongs to the earlier slot.
fn slot_of(t: SimTime, delta: f64) -> usize {
    ((t / delta).ceil() as usize).max(1)
}

/// Per-slot honest and adversarial mining counts from the opportunity records.
///
/// Honest opportunities count only when a miner was online to take them;
/// adversarial ones always count, whether or not the strategy used them.
pub fn slot_counts(trace: &Trace) -> (Vec<u32>, Vec<u32>) {
    let cfg = &trace.header.config;
    let n = (cfg.horizon() / cfg.delta).ceil() as usize;
    let mut honest = vec![0u32; n];
    let mut adversarial = vec![0u32; n];
    for r in &trace.records {
        if let RecordKind::MiningOpportunity { miner_kind, assigned } = &r.kind {
            let i = slot_of(r.time, cfg.delta);
            if i > n {
                continue;
            }
            match miner_kind {
                MinerKind::Honest if assigned.is_some() => honest[i - 1] += 1,
                MinerKind::Honest => {}
                MinerKind::Adversarial => adversarial[i - 1] += 1,
            }
        }
    }
    (honest, adversarial)
}

/// Classifies slots given per-slot counts (index 0 is slot 1).
pub fn compute_yz_counts(honest: &[u32], adversarial: &[u32]) -> Vec<SlotStats> {
    let h = |i: usize| if i < honest.len() { honest[i] } else { 0 };
    (0..honest.len())
        .map(|i| {
            let before = if i == 0 { 0 } else { h(i - 1) };
            let y = u8::from(h(i) == 1 && before == 0 && h(i + 1) == 0);
            let a = adversarial.get(i).copied().unwrap_or(0);
            SlotStats { slot: i as u64 + 1, honest: h(i), adversarial: a, y, z: a + h(i) - u32::from(y) }
        })
        .collect()
}

pub fn compute_yz(trace: &Trace) -> Vec<SlotStats> {
    let (h, a) = slot_counts(trace);
    compute_yz_counts(&h, &a)
}

fn regime(lambda: f64, delta: f64) -> Option<RegimeWarning> {
    let ld = lambda * delta;
    (ld >= 1.0).then_some(RegimeWarning { lambda_delta: ld })
}

/// ȳ = (1−β)λΔ·exp(−3(1−β)λΔ), with a warning outside λΔ < 1.
pub fn expected_ybar(beta: f64, lambda: f64, delta: f64) -> (f64, Option<RegimeWarning>) {
    let h = (1.0 - beta) * lambda * delta;
    (h * (-3.0 * h).exp(), regime(lambda, delta))
}

/// z̄ = λΔ − ȳ.
pub fn expected_zbar(beta: f64, lambda: f64, delta: f64) -> (f64, Option<RegimeWarning>) {
    let (y, w) = expected_ybar(beta, lambda, delta);
    (lambda * delta - y, w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypicalParams {
    pub epsilon: f64,
    pub tau: usize,
    pub ybar: f64,
    pub zbar: f64,
}

/// A window `(t1, t2]` of slots failing condition 1 (Y), 2 (Z) or 3 (Y+Z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypicalViolation {
    pub t1: usize,
    pub t2: usize,
    pub condition: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypicalResult {
    pub typical: bool,
    pub first_violation: Option<TypicalViolation>,
}

/// Checks every window of at least `tau` slots against the three
/// concentration bounds. `y` and `z` are per-slot values, slot 1 first.
///
/// Windows are scanned by increasing `t1`, then increasing `t2`.
pub fn check_typical(y: &[f64], z: &[f64], p: &TypicalParams) -> TypicalResult {
    let n = y.len().min(z.len());
    let prefix = |v: &[f64]| {
        let mut out = Vec::with_capacity(n + 1);
        out.push(0.0);
        let mut acc = 0.0;
        for x in &v[..n] {
            acc += x;
            out.push(acc);
        }
        out
    };
    let (py, pz) = (prefix(y), prefix(z));
    let total_rate = p.ybar + p.zbar;
    let eps = p.epsilon;
    // Tolerance for the fractional synthetic case, where sums land exactly on the mean.
    let slack = 1e-9;
    for t1 in 0..n.saturating_sub(p.tau.saturating_sub(1)) {
        for t2 in (t1 + p.tau.max(1))..=n {
            let len = (t2 - t1) as f64;
            let (ey, ez) = (p.ybar * len, p.zbar * len);
            let (wy, wz) = (py[t2] - py[t1], pz[t2] - pz[t1]);
            let condition = if (wy - ey).abs() > eps * ey + slack {
                1
            } else if (wz - ez).abs() > eps * ey + slack {
                2
            } else if (wy + wz - total_rate * len).abs() > eps * total_rate * len + slack {
                3
            } else {
                continue;
            };
            return TypicalResult { typical: false, first_violation: Some(TypicalViolation { t1, t2, condition }) };
        }
    }
    TypicalResult { typical: true, first_violation: None }
}
