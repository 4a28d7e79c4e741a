//! Micro-traces and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use clc_sim::analytics::{check_chain_quality, check_common_prefix, TraceIndex};
use clc_sim::chain::{BlockId, MinerKind, NodeId, SimTime};
use clc_sim::scenario::ScenarioConfig;
use clc_sim::trace::{RecordKind, Trace, TraceHeader, TraceRecord, TRACE_SCHEMA};
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Three miners and four checkpointers (one byzantine): six honest nodes.
const MICRO: &str = r#"
schema-version = 1
name = "micro"
seed = 1
duration = 1
lambda = 0.1
beta = 0.3
n-miners = 3
n-checkpointers = 4
t = 1
byzantine-checkpointers = 1
k = 3
k-prime = 3

[network]
mode = "m2"

[participation]
mode = "u2"
"#;

pub const HONEST: u32 = 6;

#[derive(Clone, Copy, Debug)]
pub enum Op {
    /// Mine on the `parent % len`-th block so far.
    Mine {
        parent: usize,
        adversarial: bool,
    },
    Adopt {
        node: u32,
        block: usize,
    },
    /// Flip a node between online and offline.
    Toggle {
        node: u32,
    },
}

pub fn random_ops(rng: &mut impl Rng, len: usize) -> Vec<Op> {
    (0..len)
        .map(|_| match rng.random_range(0..10) {
            0..4 => Op::Mine { parent: rng.random_range(0..usize::MAX), adversarial: rng.random_bool(0.4) },
            4..9 => Op::Adopt { node: rng.random_range(0..HONEST), block: rng.random_range(0..usize::MAX) },
            _ => Op::Toggle { node: rng.random_range(0..HONEST) },
        })
        .collect()
}

/// One op per time unit, starting at time 1.
pub fn micro_trace(ops: &[Op]) -> Trace {
    let config = ScenarioConfig::from_toml_with_overrides(MICRO, &[format!("duration={}", ops.len().max(1))]).unwrap();
    let roster = clc_sim::sim::roster(&config);
    let mut records = vec![TraceRecord { time: 0.0, seq: 0, node: None, kind: RecordKind::Genesis }];
    let mut heights = vec![0u64];
    let mut online = [true; HONEST as usize];
    let mut tips = [BlockId::GENESIS; HONEST as usize];
    for (i, op) in ops.iter().enumerate() {
        let time = (i + 1) as f64;
        let (node, kind) = match *op {
            Op::Mine { parent, adversarial } => {
                let parent = parent % heights.len();
                let height = heights[parent] + 1;
                let block = BlockId(heights.len() as u64);
                heights.push(height);
                let miner_kind = if adversarial { MinerKind::Adversarial } else { MinerKind::Honest };
                let node = (!adversarial).then_some(NodeId(0));
                (node, RecordKind::BlockMined { block, parent: BlockId(parent as u64), height, miner_kind })
            }
            Op::Adopt { node, block } => {
                let b = block % heights.len();
                tips[node as usize] = BlockId(b as u64);
                (
                    Some(NodeId(node)),
                    RecordKind::ChainAdopt { tip: BlockId(b as u64), height: heights[b], old_tip: BlockId::GENESIS },
                )
            }
            Op::Toggle { node } => {
                let up = &mut online[node as usize];
                *up = !*up;
                (Some(NodeId(node)), if *up { RecordKind::Online } else { RecordKind::Offline })
            }
        };
        records.push(TraceRecord { time, seq: records.len() as u64, node, kind });
    }
    let end = ops.len() as f64;
    for (n, &tip) in tips.iter().enumerate() {
        let kind = RecordKind::FinalState { tip, checkpoint_iteration: 0, iteration: 0, period: 0, halted: false };
        records.push(TraceRecord { time: end, seq: records.len() as u64, node: Some(NodeId(n as u32)), kind });
    }
    Trace { header: TraceHeader { trace_schema: TRACE_SCHEMA, config, roster }, records }
}

/// The block tree as parent pointers, with kinds and mine times.
struct Tree {
    parent: Vec<usize>,
    adversarial: Vec<bool>,
    mined: Vec<SimTime>,
}

impl Tree {
    fn of(trace: &Trace) -> Self {
        let mut t = Tree { parent: vec![0], adversarial: vec![false], mined: vec![0.0] };
        for r in &trace.records {
            if let RecordKind::BlockMined { block, parent, miner_kind, .. } = r.kind {
                assert_eq!(block.0 as usize, t.parent.len());
                t.parent.push(parent.0 as usize);
                t.adversarial.push(miner_kind == MinerKind::Adversarial);
                t.mined.push(r.time);
            }
        }
        t
    }

    /// Genesis-first path to `tip`.
    fn path(&self, tip: usize) -> Vec<usize> {
        let mut out = vec![tip];
        let mut cur = tip;
        while cur != 0 {
            cur = self.parent[cur];
            out.push(cur);
        }
        out.reverse();
        out
    }
}

type Flagged = BTreeSet<(u32, u64)>;

/// All-pairs k-common-prefix: every snapshot of online nodes' chains at or
/// after `from` (plus the one in force at `from`) against every later one.
pub fn oracle_common_prefix(trace: &Trace, k: u64, from: SimTime) -> Flagged {
    let tree = Tree::of(trace);
    let mut chain = vec![0usize; HONEST as usize];
    let mut online = vec![true; HONEST as usize];
    let snapshot = |chain: &[usize], online: &[bool]| -> Vec<(u32, usize)> {
        (0..HONEST).filter(|&n| online[n as usize]).map(|n| (n, chain[n as usize])).collect()
    };
    let mut states = vec![(0.0, snapshot(&chain, &online))];
    for r in &trace.records {
        let Some(n) = r.node.map(|n| n.0 as usize) else { continue };
        match r.kind {
            RecordKind::ChainAdopt { tip, .. } => chain[n] = tip.0 as usize,
            RecordKind::Online => online[n] = true,
            RecordKind::Offline => online[n] = false,
            _ => continue,
        }
        states.push((r.time, snapshot(&chain, &online)));
    }
    let first = states.iter().rposition(|s| s.0 < from).unwrap_or(0);
    let states = &states[first..];
    let mut out = Flagged::new();
    for (i, (_, earlier)) in states.iter().enumerate() {
        for &(_, c1) in earlier {
            let p1 = tree.path(c1);
            let cut = &p1[..p1.len().saturating_sub(k as usize).max(1)];
            for (_, later) in &states[i..] {
                for &(n2, c2) in later {
                    let p2 = tree.path(c2);
                    if !p2.starts_with(cut) {
                        out.insert((n2, c2 as u64));
                    }
                }
            }
        }
    }
    out
}

/// Every adopted chain with k adversarial blocks in a row, all mined after `s`.
pub fn oracle_chain_quality(trace: &Trace, k: u64, s: SimTime) -> Flagged {
    let tree = Tree::of(trace);
    let mut out = Flagged::new();
    if k == 0 {
        return out;
    }
    for r in &trace.records {
        let (RecordKind::ChainAdopt { tip, .. }, Some(n)) = (&r.kind, r.node) else { continue };
        let path = tree.path(tip.0 as usize);
        let bad = path.windows(k as usize).any(|w| w.iter().all(|&b| tree.adversarial[b] && tree.mined[b] > s));
        if bad {
            out.insert((n.0, tip.0));
        }
    }
    out
}

pub fn production_common_prefix(trace: &Trace, k: u64, from: SimTime) -> Flagged {
    let ix = TraceIndex::new(trace).unwrap();
    check_common_prefix(&ix, k, from).iter().map(flag).collect()
}

pub fn production_chain_quality(trace: &Trace, k: u64, s: SimTime) -> Flagged {
    let ix = TraceIndex::new(trace).unwrap();
    check_chain_quality(&ix, k, s).iter().map(flag).collect()
}

fn flag(v: &clc_sim::analytics::Violation) -> (u32, u64) {
    use clc_sim::analytics::Witness;
    let tip = match &v.witness {
        Witness::Prefix { tip, .. } | Witness::Quality { tip, .. } => *tip,
        w => panic!("unexpected witness {w:?}"),
    };
    (v.node.expect("violations name a node").0, tip.0)
}

/// Production and oracle verdicts for one micro-trace, per parameter choice.
pub fn compare(trace: &Trace, k: u64, from: SimTime) -> BTreeMap<&'static str, (Flagged, Flagged)> {
    BTreeMap::from([
        ("common-prefix", (production_common_prefix(trace, k, from), oracle_common_prefix(trace, k, from))),
        ("chain-quality", (production_chain_quality(trace, k, from), oracle_chain_quality(trace, k, from))),
    ])
}
