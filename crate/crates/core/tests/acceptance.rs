//! Acceptance battery: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so the lines always reach
//! stdout. Exits non-zero if any criterion fails.

mod common;

use clc_sim::analytics::{
    analyze_with, check_rule_safety, check_typical, compute_yz, replay_witness, IterationRow, Report, Rule, TraceIndex,
    TypicalParams,
};
use clc_sim::library;
use clc_sim::runner::{self, steady, Quantiles};
use clc_sim::scenario::{Checker, NetworkMode, ScenarioConfig};
use clc_sim::sim;
use clc_sim::trace::Trace;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

const SEEDS: u64 = 100;
const MINING_SEEDS: u64 = 200;
const MICRO_TRACES: u64 = 50;
const MICRO_EVENTS: usize = 200;

/// Checkers every acceptance run evaluates on top of the scenario's own.
const ALWAYS: [Checker; 4] = [Checker::Cp0, Checker::FinSafety, Checker::AdaSafety, Checker::Nesting];

struct Run<T> {
    report: Report,
    /// A second simulation of the same config produced the same bytes.
    deterministic: bool,
    extra: T,
}

struct Battery<T> {
    cfg: ScenarioConfig,
    runs: Vec<Run<T>>,
}

impl<T> Battery<T> {
    fn reports(&self) -> impl Iterator<Item = &Report> {
        self.runs.iter().map(|r| &r.report)
    }

    fn seeds_with(&self, checker: Checker) -> usize {
        self.reports().filter(|r| r.violations(checker) > 0).count()
    }

    fn total(&self, checker: Checker) -> usize {
        self.reports().map(|r| r.violations(checker)).sum()
    }
}

fn battery<T: Send>(cfg: ScenarioConfig, count: u64, extra: impl Fn(&Trace) -> T + Sync) -> Battery<T> {
    let mut checkers: Vec<Checker> = ALWAYS.to_vec();
    checkers.extend(&cfg.checkers.enabled);
    checkers.extend(&cfg.checkers.must_pass);
    let runs = runner::par_seeds(&cfg, count, |c| {
        let trace = sim::run(&c);
        let bytes = trace.to_jsonl();
        let deterministic = sim::run(&c).to_jsonl() == bytes;
        let report = analyze_with(&trace, Some(&checkers)).expect("simulated traces analyse");
        Run { report, deterministic, extra: extra(&trace) }
    });
    Battery { cfg, runs }
}

fn load(name: &str, overrides: &[&str]) -> ScenarioConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    library::load(name, &o).expect("bundled scenario")
}

struct Verdicts {
    failed: usize,
}

impl Verdicts {
    fn line(&mut self, n: u32, title: &str, pass: bool, detail: String) {
        self.failed += usize::from(!pass);
        println!("{} criterion {n:>2} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

/// Every ada-safety violation in the trace, and how many replay from their witness.
fn replayed_ada(trace: &Trace) -> (usize, usize) {
    let ix = TraceIndex::new(trace).expect("simulated traces index");
    let v = check_rule_safety(&ix, Rule::Ada);
    let ok = v.iter().filter(|w| replay_witness(trace, w).is_ok()).count();
    (v.len(), ok)
}

/// Typicality at ε = 0.2 for each τ.
fn typicality(trace: &Trace, taus: &[usize]) -> Vec<bool> {
    let cfg = &trace.header.config;
    let stats = compute_yz(trace);
    let y: Vec<f64> = stats.iter().map(|s| s.y as f64).collect();
    let z: Vec<f64> = stats.iter().map(|s| s.z as f64).collect();
    let (ybar, _) = clc_sim::analytics::expected_ybar(cfg.beta, cfg.lambda, cfg.delta);
    let (zbar, _) = clc_sim::analytics::expected_zbar(cfg.beta, cfg.lambda, cfg.delta);
    taus.iter().map(|&tau| check_typical(&y, &z, &TypicalParams { epsilon: 0.2, tau, ybar, zbar }).typical).collect()
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut out = Verdicts { failed: 0 };
    let rollback = ["grandpa-rollback", "grandpa-rollback-p3"];

    let mut all: Vec<Battery<(usize, usize)>> = Vec::new();
    for name in library::names() {
        let t = Instant::now();
        let cfg = load(name, &[]);
        let witnesses = name == "partition-private-attack";
        all.push(battery(cfg, SEEDS, |tr| if witnesses { replayed_ada(tr) } else { (0, 0) }));
        eprintln!("ran {name} x{SEEDS} in {:.1?}", t.elapsed());
    }
    let get = |name: &str| all.iter().find(|b| b.cfg.name == name).expect("bundled");

    // 1. CP0 and checkpoint-rule safety everywhere.
    let cp0: usize = all.iter().map(|b| b.total(Checker::Cp0)).sum();
    let fin: usize = all.iter().map(|b| b.total(Checker::FinSafety)).sum();
    out.line(
        1,
        "CP0 / fin safety",
        cp0 == 0 && fin == 0,
        format!("{cp0} cp0 and {fin} fin-safety violations over {} scenarios x {SEEDS} seeds", all.len()),
    );

    // 2. Ada safety and common prefix under synchrony with churn.
    let churn = get("sync-unsized-churn");
    let (cp, ada) = (churn.seeds_with(Checker::CommonPrefix), churn.seeds_with(Checker::AdaSafety));
    out.line(
        2,
        "ada safety (m2, u2)",
        cp == 0 && ada == 0,
        format!(
            "beta {}, k {}: common-prefix violated in {cp}/{SEEDS} seeds, ada-safety in {ada}/{SEEDS}",
            churn.cfg.beta, churn.cfg.k_prime
        ),
    );

    // 3. Ada breaks under partitions; every violation replays.
    let attack = get("partition-private-attack");
    let broken = attack.seeds_with(Checker::AdaSafety);
    let (total, replayed) = attack.runs.iter().fold((0, 0), |acc, r| (acc.0 + r.extra.0, acc.1 + r.extra.1));
    out.line(
        3,
        "ada unsafety under m1",
        broken * 2 >= SEEDS as usize && total > 0 && replayed == total,
        format!(
            "k' {}: ada-safety violated in {broken}/{SEEDS} seeds; {replayed}/{total} witnesses replay",
            attack.cfg.k_prime
        ),
    );

    // 4. Nesting with k' = k.
    let mut nesting = Vec::new();
    let mut rerun = Vec::new();
    for b in &all {
        if rollback.contains(&b.cfg.name.as_str()) {
            continue;
        }
        if b.cfg.k_prime == b.cfg.k {
            nesting.push((b.cfg.name.clone(), b.total(Checker::Nesting)));
        } else {
            let t = Instant::now();
            let cfg = runner::resolve(&b.cfg.name, &[format!("k-prime={}", b.cfg.k)]).expect("bundled");
            let r = battery(cfg, SEEDS, |_| ());
            eprintln!("ran {} with k'=k x{SEEDS} in {:.1?}", b.cfg.name, t.elapsed());
            nesting.push((format!("{}[k'=k]", b.cfg.name), r.total(Checker::Nesting)));
            rerun.push(r);
        }
    }
    let bad: Vec<String> = nesting.iter().filter(|n| n.1 > 0).map(|n| format!("{} ({})", n.0, n.1)).collect();
    out.line(
        4,
        "nesting",
        bad.is_empty(),
        if bad.is_empty() {
            format!("0 violations over {} scenarios x {SEEDS} seeds", nesting.len())
        } else {
            format!("violations in {}", bad.join(", "))
        },
    );

    // 5. Checkpoint cadence after GST.
    let mut notes = Vec::new();
    let mut ok5 = true;
    for b in all.iter().filter(|b| b.cfg.network.mode == NetworkMode::M1) {
        let cfg = &b.cfg;
        let (e, delta, horizon) = (cfg.e(), cfg.delta, cfg.horizon());
        let start = 4.0 * cfg.gst() + cfg.checkers.recovery_offset;
        fn after(r: &Report, start: f64) -> Vec<&IterationRow> {
            r.cadence.iterations.iter().filter(|i| i.first_halt >= start).collect()
        }
        let periods =
            Quantiles::of(b.reports().flat_map(|r| after(r, start).into_iter().map(|i| i.period as f64)).collect());
        let upper = e + 10.0 * delta * periods.p95;
        let need = ((horizon - start) / (e + 20.0 * delta)).floor() - 1.0;
        let mut passing = 0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut fewest = usize::MAX;
        for r in b.reports() {
            let gaps = r.cadence.gaps_after(start);
            let count = after(r, start).iter().filter(|i| i.first_halt <= horizon).count();
            lo = gaps.iter().copied().fold(lo, f64::min);
            hi = gaps.iter().copied().fold(hi, f64::max);
            fewest = fewest.min(count);
            passing += usize::from(gaps.iter().all(|&g| g >= e && g <= upper) && count as f64 >= need);
        }
        ok5 &= passing == b.runs.len();
        notes.push(if need < 0.0 {
            format!("{} vacuous (start {start} past horizon {horizon}) {passing}/{SEEDS}", cfg.name)
        } else {
            format!(
                "{} {passing}/{SEEDS} (gaps [{lo:.1}, {hi:.1}] vs [{e}, {upper}], >= {need} checkpoints, fewest {fewest})",
                cfg.name
            )
        });
    }
    out.line(5, "fin liveness after GST", ok5, notes.join("; "));

    // 6. BA latency in synchronous full-participation runs.
    let sync: Vec<_> = all
        .iter()
        .filter(|b| {
            b.cfg.network.mode == NetworkMode::M2
                && b.cfg.participation.mode == clc_sim::scenario::ParticipationMode::U1
        })
        .collect();
    let mut latency = Vec::new();
    let mut slow_honest = 0;
    let mut advances = Vec::new();
    let mut periods = Vec::new();
    let mut spread = Vec::new();
    for b in &sync {
        let delta = b.cfg.delta;
        for r in b.reports() {
            for it in steady(&r.cadence) {
                periods.push(it.period as f64);
                spread.push(it.last_halt - it.first_halt);
                if it.first_leader_honest == Some(true) {
                    let l = it.latency.unwrap_or(f64::INFINITY);
                    latency.push(l);
                    slow_honest += usize::from(it.period != 1 || l > 6.0 * delta);
                }
            }
            advances.extend(
                r.cadence.periods.iter().filter(|p| !p.honest && p.iteration > 1).filter_map(|p| p.max_advance),
            );
        }
    }
    let lat = Quantiles::of(latency);
    let adv = Quantiles::of(advances);
    let mean_periods = periods.iter().sum::<f64>() / periods.len().max(1) as f64;
    let spr = Quantiles::of(spread);
    let delta = sync.first().map_or(1.0, |b| b.cfg.delta);
    out.line(
        6,
        "BA latency",
        slow_honest == 0 && adv.max <= 8.0 * delta && mean_periods <= 1.7 && spr.max <= delta && lat.count > 0,
        format!(
            "honest-leader halts max {:.2} over {} ({slow_honest} late); byzantine-leader advance max {:.2} over {}; mean periods {mean_periods:.3}; halt spread max {:.3}",
            lat.max, lat.count, adv.max, adv.count, spr.max
        ),
    );

    // 7. Recency tail against the measured adversarial-leader frequency,
    // pooled over scenarios whose honest committee can reach a quorum alone.
    let mut recency = Vec::new();
    let mut never = 0;
    let (mut leaders, mut byzantine) = (0usize, 0usize);
    let mut stalled = Vec::new();
    for b in &all {
        if !honest_quorum(&b.cfg) {
            stalled.push(b.cfg.name.clone());
            continue;
        }
        for r in b.reports() {
            for row in r.recency.iter().filter(|x| x.after_gst) {
                match row.recency {
                    Some(x) => recency.push(x),
                    None => never += 1,
                }
            }
            leaders += r.cadence.periods.len();
            byzantine += r.cadence.periods.iter().filter(|p| !p.honest).count();
        }
    }
    let beta_leader = byzantine as f64 / leaders.max(1) as f64;
    let mut ok7 = !recency.is_empty();
    let mut tail = Vec::new();
    for m in 1..=5 {
        let over = recency.iter().filter(|&&x| x > 8.0 * m as f64).count() as f64 / recency.len().max(1) as f64;
        let bound = 1.5 * beta_leader.powi(m);
        ok7 &= over <= bound;
        tail.push(format!("m={m} {over:.4}<={bound:.4}"));
    }
    out.line(
        7,
        "recency tail",
        ok7,
        format!(
            "{} post-GST checkpoints ({never} never at depth), beta' {beta_leader:.3}: {}; without an honest quorum: {}",
            recency.len(),
            tail.join(", "),
            stalled.join(" ")
        ),
    );

    // 8. Deadlock freedom under maximal pre-GST delay and a flush.
    let flush = get("deadlock-flush");
    let stuck = flush.seeds_with(Checker::DeadlockFreedom);
    let ran = flush.reports().all(|r| r.check(Checker::DeadlockFreedom).is_some());
    out.line(
        8,
        "deadlock freedom",
        ran && stuck == 0,
        format!(
            "{}/{SEEDS} seeds clean (gst {}, flush {})",
            SEEDS as usize - stuck,
            flush.cfg.gst(),
            flush.cfg.flush.unwrap_or(0.0)
        ),
    );

    // 9. Mining statistics and typical executions.
    let t = Instant::now();
    let taus = [250usize, 500, 1000];
    let honest = battery(load("honest-mining-stats", &[]), MINING_SEEDS, |tr| typicality(tr, &taus));
    eprintln!("ran honest-mining-stats x{MINING_SEEDS} in {:.1?}", t.elapsed());
    let slots: usize = honest.reports().map(|r| r.slots.slots).sum();
    let y = honest.reports().map(|r| r.slots.y_mean * r.slots.slots as f64).sum::<f64>() / slots as f64;
    let yz =
        honest.reports().map(|r| (r.slots.y_mean + r.slots.z_mean) * r.slots.slots as f64).sum::<f64>() / slots as f64;
    let ybar = honest.runs[0].report.slots.ybar;
    let ld = honest.cfg.lambda_delta();
    let (ey, eyz) = ((y - ybar) / ybar, (yz - ld) / ld);
    let fractions: Vec<f64> = (0..taus.len())
        .map(|i| honest.runs.iter().filter(|r| r.extra[i]).count() as f64 / honest.runs.len() as f64)
        .collect();
    let monotone = fractions.windows(2).all(|w| w[0] <= w[1]);
    out.line(
        9,
        "mining statistics",
        slots >= 1_000_000 && ey.abs() <= 0.02 && eyz.abs() <= 0.01 && fractions[1] >= 0.95 && monotone,
        format!(
            "{slots} slots: Y {y:.5} vs {ybar:.5} ({:+.2}%), Y+Z {yz:.5} vs {ld} ({:+.2}%); typical at tau 250/500/1000: {:.3}/{:.3}/{:.3}",
            100.0 * ey,
            100.0 * eyz,
            fractions[0],
            fractions[1],
            fractions[2]
        ),
    );

    // 10. Rollback attack against the k-deep rule, and P3 stopping it.
    let (attack, guarded) = (get(rollback[0]), get(rollback[1]));
    let hit = attack.seeds_with(Checker::AdaSafety);
    let guarded_hit = guarded.seeds_with(Checker::AdaSafety);
    // The guarded arm only counts if checkpoints still happen there.
    let fewest = guarded.reports().map(|r| r.cadence.iterations.len()).min().unwrap_or(0);
    out.line(
        10,
        "rollback negative test",
        hit * 2 >= SEEDS as usize && guarded_hit == 0 && fewest > 0,
        format!(
            "without P3 {hit}/{SEEDS} seeds violate the {}-deep rule; with P3 {guarded_hit}/{SEEDS} (fewest checkpoints in a seed {fewest})",
            attack.cfg.k_prime
        ),
    );

    // 11. Oracle agreement on micro-traces, and byte-identical reruns.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut disagreements = Vec::new();
    for i in 0..MICRO_TRACES {
        let len = rand::Rng::random_range(&mut rng, 1..=MICRO_EVENTS);
        let ops = common::random_ops(&mut rng, len);
        let trace = common::micro_trace(&ops);
        let k = rand::Rng::random_range(&mut rng, 1..=4);
        let from = rand::Rng::random_range(&mut rng, 0..=len / 2) as f64;
        for (name, (got, want)) in common::compare(&trace, k, from) {
            if got != want {
                disagreements.push(format!("trace {i} {name}"));
            }
        }
    }
    let runs = all.iter().map(|b| b.runs.len()).sum::<usize>()
        + rerun.iter().map(|b| b.runs.len()).sum::<usize>()
        + honest.runs.len();
    let same = all.iter().flat_map(|b| &b.runs).filter(|r| r.deterministic).count()
        + rerun.iter().flat_map(|b| &b.runs).filter(|r| r.deterministic).count()
        + honest.runs.iter().filter(|r| r.deterministic).count();
    out.line(
        11,
        "oracles and determinism",
        disagreements.is_empty() && same == runs,
        format!(
            "{MICRO_TRACES} micro-traces, {} disagreements{}; {same}/{runs} reruns byte-identical",
            disagreements.len(),
            if disagreements.is_empty() { String::new() } else { format!(" ({})", disagreements.join(", ")) }
        ),
    );

    println!("{} of 11 criteria passed in {:.0?}", 11 - out.failed, started.elapsed());
    if out.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// Whether the honest checkpointers that are never scheduled offline can
/// form a quorum without byzantine votes.
fn honest_quorum(cfg: &ScenarioConfig) -> bool {
    let honest = cfg.n_miners..cfg.n_miners + cfg.n_checkpointers - cfg.byzantine_checkpointers;
    let away: BTreeSet<usize> =
        cfg.participation.offline.iter().map(|o| o.node as usize).filter(|n| honest.contains(n)).collect();
    honest.len() - away.len() >= cfg.quorum()
}
