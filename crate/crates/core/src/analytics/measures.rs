//! Measurements that feed distributions rather than pass/fail verdicts:
//! checkpoint cadence, halt latency and recency.

use super::TraceIndex;
use crate::chain::{BlockId, NodeId, SimTime};
use crate::trace::RecordKind;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: u64,
    /// Earliest honest start of the iteration.
    pub start: Option<SimTime>,
    pub first_halt: SimTime,
    pub last_halt: SimTime,
    pub halted_nodes: usize,
    /// Period of the certificate.
    pub period: u64,
    pub checkpoint: BlockId,
    /// Time since the previous iteration's first halt.
    pub gap: Option<SimTime>,
    pub first_leader_honest: Option<bool>,
    /// Largest own-clock delay from entering the halting period to halting.
    pub latency: Option<SimTime>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderPeriodRow {
    pub iteration: u64,
    pub period: u64,
    pub leader: NodeId,
    pub honest: bool,
    /// Largest own-clock time an honest checkpointer spent in this period
    /// before moving to the next one; halts are not counted.
    pub max_advance: Option<SimTime>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cadence {
    pub iterations: Vec<IterationRow>,
    pub periods: Vec<LeaderPeriodRow>,
}

impl Cadence {
    /// Inter-checkpoint gaps among iterations whose first halt is at or after `from`.
    pub fn gaps_after(&self, from: SimTime) -> Vec<SimTime> {
        self.iterations.iter().filter(|r| r.first_halt >= from).filter_map(|r| r.gap).collect()
    }
}

pub fn measure_cadence(ix: &TraceIndex) -> Cadence {
    let honest_ckpt = |n: Option<NodeId>| n.filter(|n| ix.honest_checkpointers.contains(n));
    let mut starts: BTreeMap<u64, SimTime> = BTreeMap::new();
    let mut halts: BTreeMap<u64, Vec<(SimTime, u64, BlockId)>> = BTreeMap::new();
    let mut latency: BTreeMap<u64, SimTime> = BTreeMap::new();
    let mut leaders: BTreeMap<(u64, u64), (NodeId, bool)> = BTreeMap::new();
    let mut current: HashMap<NodeId, (u64, u64, SimTime)> = HashMap::new();
    let mut advance: BTreeMap<(u64, u64), SimTime> = BTreeMap::new();
    for r in &ix.trace.records {
        match &r.kind {
            RecordKind::LeaderChosen { iteration, period, leader, honest } => {
                leaders.entry((*iteration, *period)).or_insert((*leader, *honest));
            }
            RecordKind::IterationStart { iteration } if honest_ckpt(r.node).is_some() => {
                starts.entry(*iteration).or_insert(r.time);
            }
            RecordKind::PeriodStart { iteration, period, .. } => {
                let Some(n) = honest_ckpt(r.node) else { continue };
                if let Some((i, p, t0)) = current.insert(n, (*iteration, *period, r.time)) {
                    if i == *iteration && *period == p + 1 {
                        let a = advance.entry((i, p)).or_insert(0.0);
                        *a = a.max(r.time - t0);
                    }
                }
            }
            RecordKind::IterationHalt { iteration, period, checkpoint, .. } => {
                let Some(n) = honest_ckpt(r.node) else { continue };
                halts.entry(*iteration).or_default().push((r.time, *period, *checkpoint));
                if let Some((i, _, t0)) = current.remove(&n) {
                    if i == *iteration {
                        let l = latency.entry(i).or_insert(0.0);
                        *l = l.max(r.time - t0);
                    }
                }
            }
            _ => {}
        }
    }
    let mut iterations = Vec::new();
    let mut prev: Option<SimTime> = None;
    for (&i, hs) in &halts {
        let first = hs.iter().map(|h| h.0).fold(f64::INFINITY, f64::min);
        let last = hs.iter().map(|h| h.0).fold(f64::NEG_INFINITY, f64::max);
        iterations.push(IterationRow {
            iteration: i,
            start: starts.get(&i).copied(),
            first_halt: first,
            last_halt: last,
            halted_nodes: hs.len(),
            period: hs.iter().map(|h| h.1).max().unwrap_or(0),
            checkpoint: hs[0].2,
            gap: prev.map(|p| first - p),
            first_leader_honest: leaders.get(&(i, 1)).map(|l| l.1),
            latency: latency.get(&i).copied(),
        });
        prev = Some(first);
    }
    let periods = leaders
        .iter()
        .map(|(&(iteration, period), &(leader, honest))| LeaderPeriodRow {
            iteration,
            period,
            leader,
            honest,
            max_advance: advance.get(&(iteration, period)).copied(),
        })
        .collect();
    Cadence { iterations, periods }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecencyRow {
    pub iteration: u64,
    pub block: BlockId,
    /// First honest halt on this checkpoint.
    pub appear: SimTime,
    pub after_gst: bool,
    /// `appear` minus the latest earlier time the block sat exactly at
    /// checkpoint depth in some honest chain; `None` if it never did.
    pub recency: Option<SimTime>,
}

/// Latest time ≤ `until` at which `block` was exactly `depth` deep in `node`'s chain.
fn last_at_depth(ix: &TraceIndex, node: NodeId, block: BlockId, depth: u64, until: SimTime) -> Option<SimTime> {
    let target = ix.tree.height(block).ok()? + depth;
    let hist = &ix.tips[node.0 as usize];
    let held_from = hist.partition_point(|h| h.0 <= until);
    for j in (0..held_from).rev() {
        let (_, _, tip) = hist[j];
        if ix.tree.height(tip).ok() == Some(target) && ix.descends(block, tip) {
            let left = hist.get(j + 1).map_or(until, |h| h.0.min(until));
            return Some(left);
        }
    }
    None
}

pub fn measure_recency(ix: &TraceIndex) -> Vec<RecencyRow> {
    let depth = ix.cfg.checkpoint_depth();
    let gst = ix.cfg.gst();
    let mut first: BTreeMap<u64, (SimTime, BlockId)> = BTreeMap::new();
    for r in &ix.trace.records {
        if let RecordKind::IterationHalt { iteration, checkpoint, .. } = r.kind {
            if r.node.is_some_and(|n| ix.is_honest(n)) {
                first.entry(iteration).or_insert((r.time, checkpoint));
            }
        }
    }
    first
        .into_iter()
        .map(|(iteration, (appear, block))| {
            let latest = ix
                .honest
                .iter()
                .filter_map(|&n| last_at_depth(ix, n, block, depth, appear))
                .fold(None, |acc: Option<SimTime>, t| Some(acc.map_or(t, |a| a.max(t))));
            RecencyRow { iteration, block, appear, after_gst: appear >= gst, recency: latest.map(|t| appear - t) }
        })
        .collect()
}
