//! Post-hoc trace analysis. Everything here is a pure function of a
//! [`Trace`]: the same trace always yields the same report.

mod checks;
mod measures;
mod slots;

pub use checks::{
    check_capability, check_chain_quality, check_common_prefix, check_cp0, check_deadlock_freedom,
    check_delivery_bound, check_nesting, check_next_quorum_structure, check_rule_liveness, check_rule_safety,
    check_vote_multiplicity, cross_validate_ada, replay_witness, AdaMismatch, Liveness, LivenessWindow, Rule,
};
pub use measures::{measure_cadence, measure_recency, Cadence, IterationRow, LeaderPeriodRow, RecencyRow};
pub use slots::{
    check_typical, compute_yz, compute_yz_counts, expected_ybar, expected_zbar, slot_counts, RegimeWarning, SlotStats,
    TypicalParams, TypicalResult, TypicalViolation,
};

use crate::ba::Vote;
use crate::chain::{Block, BlockId, BlockTree, MinerKind, NodeId, SimTime};
use crate::scenario::{Checker, NetworkMode, ScenarioConfig};
use crate::trace::{RecordKind, Role, Trace};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("record {seq}: block {block} does not attach to the tree ({reason})")]
    BadBlock { seq: u64, block: BlockId, reason: String },
    #[error("record {seq}: unknown block {block}")]
    UnknownBlock { seq: u64, block: BlockId },
    #[error("record {seq}: node {node} is not in the roster")]
    UnknownNode { seq: u64, node: NodeId },
}

/// Evidence attached to a violation, enough to re-check it against the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Witness {
    /// `anchor` was k-deep in an honest chain that is not a prefix of `tip`.
    Prefix {
        anchor: BlockId,
        tip: BlockId,
    },
    /// The confirmed chain moved from `old` to `new` without extending it.
    Confirmed {
        old: BlockId,
        new: BlockId,
    },
    /// The fin-confirmed tip is not a prefix of the ada-confirmed tip.
    Nesting {
        fin: BlockId,
        ada: BlockId,
    },
    /// `k` consecutive adversarial blocks, oldest first, inside the chain ending at `tip`.
    Quality {
        tip: BlockId,
        blocks: Vec<BlockId>,
    },
    Blocks {
        blocks: Vec<BlockId>,
    },
    Votes {
        votes: Vec<Vote>,
    },
    Message {
        msg: u64,
    },
    Window {
        from: SimTime,
        to: SimTime,
        confirmed: u64,
        required: u64,
    },
    Iteration {
        iteration: u64,
        period: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub checker: Checker,
    pub time: SimTime,
    /// Sequence number of the record at which the violation became visible.
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    pub detail: String,
    pub witness: Witness,
}

/// One honest node's chain over time: `(time, seq, tip)`, genesis first.
pub type TipHistory = Vec<(SimTime, u64, BlockId)>;

/// Pre-digested view of a trace shared by the checkers.
pub struct TraceIndex<'a> {
    pub trace: &'a Trace,
    pub cfg: &'a ScenarioConfig,
    /// Every block mined in the run.
    pub tree: BlockTree,
    pub honest: Vec<NodeId>,
    pub honest_checkpointers: Vec<NodeId>,
    pub byzantine: Vec<NodeId>,
    pub tips: Vec<TipHistory>,
    /// Time at which the run stopped.
    pub end: SimTime,
    /// Number of honest blocks on the genesis → block path, by block id.
    pub honest_depth: Vec<u64>,
}

impl<'a> TraceIndex<'a> {
    pub fn new(trace: &'a Trace) -> Result<Self, AnalysisError> {
        let cfg = &trace.header.config;
        let roster = &trace.header.roster;
        let ids = |want: Role| -> Vec<NodeId> {
            roster.iter().enumerate().filter(|(_, r)| **r == want).map(|(i, _)| NodeId(i as u32)).collect()
        };
        let miners = ids(Role::Miner);
        let honest_checkpointers = ids(Role::Checkpointer);
        let mut honest = miners;
        honest.extend(&honest_checkpointers);
        honest.sort();
        let byzantine = ids(Role::ByzantineCheckpointer);

        let mut tree = BlockTree::with_genesis();
        let mut tips: Vec<TipHistory> = vec![Vec::new(); roster.len()];
        for &h in &honest {
            tips[h.0 as usize].push((0.0, 0, BlockId::GENESIS));
        }
        let mut end: SimTime = 0.0;
        for r in &trace.records {
            end = end.max(r.time);
            if let Some(n) = r.node {
                if n.0 as usize >= roster.len() {
                    return Err(AnalysisError::UnknownNode { seq: r.seq, node: n });
                }
            }
            match &r.kind {
                RecordKind::BlockMined { block, parent, miner_kind, .. } => {
                    let miner = match miner_kind {
                        MinerKind::Honest => r.node.unwrap_or(NodeId::NOBODY),
                        MinerKind::Adversarial => NodeId::ADVERSARY,
                    };
                    let b = Block::new(*block, *parent, r.time, miner, *miner_kind);
                    tree.append(b).map_err(|e| AnalysisError::BadBlock {
                        seq: r.seq,
                        block: *block,
                        reason: e.to_string(),
                    })?;
                }
                RecordKind::ChainAdopt { tip, .. } | RecordKind::ChainTruncate { tip, .. } => {
                    if !tree.contains(*tip) {
                        return Err(AnalysisError::UnknownBlock { seq: r.seq, block: *tip });
                    }
                    if let Some(n) = r.node.filter(|n| roster[n.0 as usize] != Role::ByzantineCheckpointer) {
                        tips[n.0 as usize].push((r.time, r.seq, *tip));
                    }
                }
                RecordKind::ConfirmSetChange { fin, ada } => {
                    for b in [fin, ada] {
                        if !tree.contains(*b) {
                            return Err(AnalysisError::UnknownBlock { seq: r.seq, block: *b });
                        }
                    }
                }
                RecordKind::CheckpointMark { block, .. } | RecordKind::IterationHalt { checkpoint: block, .. } => {
                    if !tree.contains(*block) {
                        return Err(AnalysisError::UnknownBlock { seq: r.seq, block: *block });
                    }
                }
                _ => {}
            }
        }
        let mut honest_depth = vec![0u64; tree.blocks().map(|b| b.id.0 as usize + 1).max().unwrap_or(1)];
        // Ids are assigned in mining order, so parents come first.
        for b in tree.blocks() {
            if b.id.is_genesis() {
                continue;
            }
            let own = u64::from(b.miner_kind == MinerKind::Honest);
            honest_depth[b.id.0 as usize] = honest_depth[b.parent.0 as usize] + own;
        }
        Ok(TraceIndex { trace, cfg, tree, honest, honest_checkpointers, byzantine, tips, end, honest_depth })
    }

    pub fn is_honest(&self, node: NodeId) -> bool {
        self.honest.binary_search(&node).is_ok()
    }

    pub fn is_byzantine(&self, node: NodeId) -> bool {
        self.byzantine.contains(&node)
    }

    pub fn descends(&self, ancestor: BlockId, tip: BlockId) -> bool {
        self.tree.is_descendant(ancestor, tip).unwrap_or(false)
    }

    /// Time after which post-partition guarantees apply.
    pub fn recovery_time(&self) -> SimTime {
        match self.cfg.network.mode {
            NetworkMode::M1 => self.cfg.checkers.recovery_factor * self.cfg.gst() + self.cfg.checkers.recovery_offset,
            NetworkMode::M2 => 0.0,
        }
    }

    /// Whether `node` stays online over the whole of `[from, to]`.
    pub fn online_throughout(&self, node: NodeId, from: SimTime, to: SimTime) -> bool {
        let mut up_at_from = true;
        for r in self.trace.records.iter().filter(|r| r.node == Some(node)) {
            let up = match r.kind {
                RecordKind::Online => true,
                RecordKind::Offline => false,
                _ => continue,
            };
            if r.time <= from {
                up_at_from = up;
            } else if r.time <= to && !up {
                return false;
            }
        }
        up_at_from
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub checker: Checker,
    pub must_pass: bool,
    pub passed: bool,
    pub violations: usize,
    /// The first few violations in trace order.
    pub witnesses: Vec<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_window: Option<LivenessWindow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotSummary {
    pub slots: usize,
    pub y_mean: f64,
    pub z_mean: f64,
    pub ybar: f64,
    pub zbar: f64,
    pub regime_warning: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub records: usize,
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
    pub node_errors: usize,
    pub slots: SlotSummary,
    pub cadence: Cadence,
    pub recency: Vec<RecencyRow>,
}

pub const WITNESS_LIMIT: usize = 20;

impl Report {
    pub fn check(&self, checker: Checker) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.checker == checker)
    }

    /// Number of violations `checker` found; zero when it did not run.
    pub fn violations(&self, checker: Checker) -> usize {
        self.check(checker).map_or(0, |c| c.violations)
    }

    pub fn failed_must_pass(&self) -> Vec<Checker> {
        self.checks.iter().filter(|c| c.must_pass && !c.passed).map(|c| c.checker).collect()
    }
}

/// Runs one checker with the parameters the scenario configures.
pub fn run_checker(ix: &TraceIndex, checker: Checker) -> (Vec<Violation>, Option<LivenessWindow>) {
    let cfg = ix.cfg;
    let from = ix.recovery_time();
    match checker {
        Checker::Cp0 => (check_cp0(ix), None),
        Checker::FinSafety => (check_rule_safety(ix, Rule::Fin), None),
        Checker::AdaSafety => (check_rule_safety(ix, Rule::Ada), None),
        Checker::CommonPrefix => (check_common_prefix(ix, cfg.k_prime, from), None),
        Checker::ChainQuality => {
            let k = cfg.checkers.quality_window.unwrap_or(cfg.k);
            (check_chain_quality(ix, k, from), None)
        }
        Checker::Nesting => (check_nesting(ix), None),
        Checker::FinLiveness | Checker::AdaLiveness => {
            let (rule, c, slack) = if checker == Checker::FinLiveness {
                (Rule::Fin, cfg.checkers.fin_rate, cfg.checkers.fin_slack)
            } else {
                (Rule::Ada, cfg.checkers.ada_rate, cfg.checkers.ada_slack)
            };
            let l = check_rule_liveness(ix, rule, c, slack, from);
            let violations = match (&l.live, &l.worst) {
                (false, Some(w)) => vec![Violation {
                    checker,
                    time: w.to,
                    seq: 0,
                    node: Some(w.node),
                    detail: format!(
                        "{} new confirmed honest blocks in [{}, {}], need {}",
                        w.confirmed, w.from, w.to, w.required
                    ),
                    witness: Witness::Window { from: w.from, to: w.to, confirmed: w.confirmed, required: w.required },
                }],
                _ => Vec::new(),
            };
            (violations, l.worst)
        }
        Checker::DeliveryBound => (check_delivery_bound(ix), None),
        Checker::Capability => (check_capability(ix), None),
        Checker::VoteMultiplicity => (check_vote_multiplicity(ix), None),
        Checker::NextQuorumStructure => (check_next_quorum_structure(ix), None),
        Checker::DeadlockFreedom => (check_deadlock_freedom(ix), None),
    }
}

/// Full analysis of a trace with the checkers its config enables.
pub fn analyze(trace: &Trace) -> Result<Report, AnalysisError> {
    analyze_with(trace, None)
}

/// As [`analyze`], restricted to `only` when given.
pub fn analyze_with(trace: &Trace, only: Option<&[Checker]>) -> Result<Report, AnalysisError> {
    let ix = TraceIndex::new(trace)?;
    let cfg = ix.cfg;
    let mut enabled: Vec<Checker> = match only {
        Some(list) => list.to_vec(),
        None => {
            let mut v = cfg.checkers.enabled.clone();
            v.extend(cfg.checkers.must_pass.iter().copied());
            v
        }
    };
    enabled.sort();
    enabled.dedup();
    let checks: Vec<CheckOutcome> = enabled
        .into_iter()
        .map(|checker| {
            let (violations, worst_window) = run_checker(&ix, checker);
            CheckOutcome {
                checker,
                must_pass: cfg.checkers.must_pass.contains(&checker),
                passed: violations.is_empty(),
                violations: violations.len(),
                witnesses: violations.into_iter().take(WITNESS_LIMIT).collect(),
                worst_window,
            }
        })
        .collect();
    let node_errors = trace.records.iter().filter(|r| matches!(r.kind, RecordKind::NodeError { .. })).count();
    let stats = compute_yz(trace);
    let (ybar, warn) = expected_ybar(cfg.beta, cfg.lambda, cfg.delta);
    let n = stats.len().max(1) as f64;
    let slots = SlotSummary {
        slots: stats.len(),
        y_mean: stats.iter().map(|s| s.y as f64).sum::<f64>() / n,
        z_mean: stats.iter().map(|s| s.z as f64).sum::<f64>() / n,
        ybar,
        zbar: expected_zbar(cfg.beta, cfg.lambda, cfg.delta).0,
        regime_warning: warn.is_some(),
    };
    let passed = checks.iter().all(|c| !c.must_pass || c.passed);
    Ok(Report {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        records: trace.records.len(),
        passed,
        checks,
        node_errors,
        slots,
        cadence: measure_cadence(&ix),
        recency: measure_recency(&ix),
    })
}
