//! Multi-iteration Byzantine agreement used by checkpointers.
//!
//! [`BaState`] is a pure state machine. The event loop feeds it clock ticks,
//! votes, proposals and certificates and carries out the [`BaAction`]s it
//! returns. Steps 1, 2 and 4 fire on scheduled ticks; steps 3 and 5 are
//! re-evaluated whenever a vote lands inside their clock window.

use crate::chain::{BlockId, Chain, NodeId, SimTime};
use crate::node::NodeState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BaError {
    #[error("n = {n} checkpointers cannot tolerate t = {t} faults (need n >= 3t + 1)")]
    TooManyFaults { n: usize, t: usize },
    #[error("certificate has {have} distinct cert-votes, quorum is {need}")]
    QuorumNotMet { have: usize, need: usize },
    #[error("certificate vote does not match the certified iteration, period and value")]
    MismatchedVote,
    #[error("certificate is for the empty value")]
    BottomCertificate,
    #[error("no checkpointer is online")]
    NoOnlineCheckpointers,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaConfig {
    pub n: usize,
    pub t: usize,
    /// Confirmation/checkpoint depth parameter k.
    pub k: u64,
    /// Depth of the checkpointed block inside the agreed chain (k unless overridden).
    pub checkpoint_depth: u64,
    pub e: SimTime,
    pub delta: SimTime,
    pub enforce_p3: bool,
}

impl BaConfig {
    pub fn validate(&self) -> Result<(), BaError> {
        if self.n < 3 * self.t + 1 {
            return Err(BaError::TooManyFaults { n: self.n, t: self.t });
        }
        Ok(())
    }

    pub fn quorum(&self) -> usize {
        2 * self.t + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Value {
    Bottom,
    Chain(BlockId),
}

impl Value {
    pub fn tip(self) -> Option<BlockId> {
        match self {
            Value::Bottom => None,
            Value::Chain(b) => Some(b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteKind {
    Soft,
    Cert,
    Next,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vote {
    pub kind: VoteKind,
    pub value: Value,
    pub iteration: u64,
    pub period: u64,
    pub voter: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub iteration: u64,
    pub period: u64,
    pub value: Value,
    pub proposer: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointCertificate {
    pub iteration: u64,
    pub period: u64,
    pub value: Value,
    pub votes: Vec<Vote>,
}

impl CheckpointCertificate {
    /// Checks the quorum and vote consistency; returns the certified tip.
    pub fn verify(&self, quorum: usize) -> Result<BlockId, BaError> {
        let tip = self.value.tip().ok_or(BaError::BottomCertificate)?;
        let mut voters = BTreeSet::new();
        for v in &self.votes {
            if v.kind != VoteKind::Cert
                || v.iteration != self.iteration
                || v.period != self.period
                || v.value != self.value
            {
                return Err(BaError::MismatchedVote);
            }
            voters.insert(v.voter);
        }
        if voters.len() < quorum {
            return Err(BaError::QuorumNotMet { have: voters.len(), need: quorum });
        }
        Ok(tip)
    }
}

/// Leader of `(iteration, period)`: uniform over `online`, a pure function of
/// the seed and the slot.
pub fn leader_for(seed: u64, iteration: u64, period: u64, online: &[NodeId]) -> Result<NodeId, BaError> {
    if online.is_empty() {
        return Err(BaError::NoOnlineCheckpointers);
    }
    let mut h = Sha256::new();
    h.update(b"leader");
    h.update(seed.to_le_bytes());
    h.update(iteration.to_le_bytes());
    h.update(period.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let mut sorted = online.to_vec();
    sorted.sort();
    Ok(sorted[rng.random_range(0..sorted.len())])
}

/// Source of period leaders shared by all checkpointers of a run.
pub trait LeaderOracle {
    fn leader(&mut self, iteration: u64, period: u64) -> Option<NodeId>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoteAdded {
    /// False when this voter already counted for this (kind, period, value).
    pub fresh: bool,
    /// The voter has now cast two different soft- or cert-votes in one period.
    pub equivocation: bool,
}

#[derive(Clone, Debug, Default)]
struct IterationBook {
    voters: HashMap<(VoteKind, u64), BTreeMap<Value, BTreeSet<NodeId>>>,
    first_value: HashMap<(VoteKind, u64, NodeId), Value>,
    next_quorum_periods: BTreeSet<u64>,
}

/// Votes seen by one checkpointer, across iterations.
#[derive(Clone, Debug)]
pub struct VoteBook {
    quorum: usize,
    iterations: BTreeMap<u64, IterationBook>,
}

impl VoteBook {
    pub fn new(quorum: usize) -> Self {
        VoteBook { quorum, iterations: BTreeMap::new() }
    }

    pub fn add(&mut self, vote: &Vote) -> VoteAdded {
        let book = self.iterations.entry(vote.iteration).or_default();
        let set = book.voters.entry((vote.kind, vote.period)).or_default().entry(vote.value).or_default();
        let fresh = set.insert(vote.voter);
        if fresh && vote.kind == VoteKind::Next && set.len() == self.quorum {
            book.next_quorum_periods.insert(vote.period);
        }
        let first = *book.first_value.entry((vote.kind, vote.period, vote.voter)).or_insert(vote.value);
        let equivocation = fresh && first != vote.value && vote.kind != VoteKind::Next;
        VoteAdded { fresh, equivocation }
    }

    pub fn count(&self, iteration: u64, kind: VoteKind, period: u64, value: Value) -> usize {
        self.voters(iteration, kind, period, value).map_or(0, BTreeSet::len)
    }

    fn voters(&self, iteration: u64, kind: VoteKind, period: u64, value: Value) -> Option<&BTreeSet<NodeId>> {
        self.iterations.get(&iteration)?.voters.get(&(kind, period))?.get(&value)
    }

    pub fn has_quorum(&self, iteration: u64, kind: VoteKind, period: u64, value: Value) -> bool {
        self.count(iteration, kind, period, value) >= self.quorum
    }

    /// Values with a quorum, in ascending order (⊥ first).
    pub fn quorum_values(&self, iteration: u64, kind: VoteKind, period: u64) -> Vec<Value> {
        let Some(book) = self.iterations.get(&iteration) else { return Vec::new() };
        book.voters
            .get(&(kind, period))
            .map(|m| m.iter().filter(|(_, s)| s.len() >= self.quorum).map(|(v, _)| *v).collect())
            .unwrap_or_default()
    }

    /// First non-⊥ value with a quorum.
    pub fn value_quorum(&self, iteration: u64, kind: VoteKind, period: u64) -> Option<Value> {
        self.quorum_values(iteration, kind, period).into_iter().find(|v| *v != Value::Bottom)
    }

    /// Highest period of `iteration` holding a next-vote quorum.
    pub fn highest_next_quorum(&self, iteration: u64) -> Option<u64> {
        self.iterations.get(&iteration)?.next_quorum_periods.last().copied()
    }

    /// A cert-vote quorum for a non-⊥ value in any period, lowest period first.
    pub fn cert_quorum(&self, iteration: u64) -> Option<(u64, Value)> {
        let book = self.iterations.get(&iteration)?;
        let mut found: Option<(u64, Value)> = None;
        for ((kind, period), values) in &book.voters {
            if *kind != VoteKind::Cert {
                continue;
            }
            for (value, set) in values {
                if *value != Value::Bottom && set.len() >= self.quorum && found.is_none_or(|f| (*period, *value) < f) {
                    found = Some((*period, *value));
                }
            }
        }
        found
    }

    pub fn certificate(&self, iteration: u64, period: u64, value: Value) -> CheckpointCertificate {
        let votes = self
            .voters(iteration, VoteKind::Cert, period, value)
            .into_iter()
            .flatten()
            .map(|&voter| Vote { kind: VoteKind::Cert, value, iteration, period, voter })
            .collect();
        CheckpointCertificate { iteration, period, value, votes }
    }

    /// Drops books of iterations older than `iteration - 1`.
    pub fn prune_before(&mut self, iteration: u64) {
        let keep = iteration.saturating_sub(1);
        self.iterations = self.iterations.split_off(&keep);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    Propose,
    Filter,
    FirstFinish,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BaAction {
    Propose(Proposal),
    Cast(Vote),
    PeriodStart { iteration: u64, period: u64, starting_value: Value },
    Tick { at: SimTime, iteration: u64, period: u64, step: Step },
    Halt { certificate: CheckpointCertificate },
    StartIteration { at: SimTime, iteration: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Running,
    /// Halted `iteration`; the next one is due at the scheduled start.
    Halted,
}

/// What the checkpointer needs from the rest of the node to act.
pub struct BaContext<'a> {
    pub node: &'a NodeState,
    pub leaders: &'a mut dyn LeaderOracle,
    pub now: SimTime,
}

#[derive(Clone, Debug)]
pub struct BaState {
    pub me: NodeId,
    pub cfg: BaConfig,
    pub iteration: u64,
    pub period: u64,
    pub phase: Phase,
    pub period_start: SimTime,
    pub starting_value: Value,
    /// Tip held when entering the period; v_i is this chain when it is long enough.
    pub entry_tip: BlockId,
    pub book: VoteBook,
    proposals: HashMap<(u64, u64), (Value, NodeId)>,
    filter_done: bool,
    first_finish_done: bool,
    cert_voted: Option<Value>,
    next_voted: BTreeSet<Value>,
    soft_voted: bool,
    pub output: Option<CheckpointCertificate>,
}

impl BaState {
    pub fn new(me: NodeId, cfg: BaConfig) -> Self {
        BaState {
            me,
            cfg,
            iteration: 0,
            period: 0,
            phase: Phase::Halted,
            period_start: 0.0,
            starting_value: Value::Bottom,
            entry_tip: BlockId::GENESIS,
            book: VoteBook::new(cfg.quorum()),
            proposals: HashMap::new(),
            filter_done: false,
            first_finish_done: false,
            cert_voted: None,
            next_voted: BTreeSet::new(),
            soft_voted: false,
            output: None,
        }
    }

    pub fn clock(&self, now: SimTime) -> SimTime {
        now - self.period_start
    }

    /// v_i: the held chain when it can carry a checkpoint, else nothing.
    /// Under P3 with a shallow checkpoint depth the chain is cut back so the
    /// checkpointed block is still k-deep in what the leader holds.
    fn input_value(&self, node: &NodeState) -> Option<Value> {
        let cut = self.p3_margin();
        if node.height() < self.cfg.checkpoint_depth + cut {
            return None;
        }
        let tip = node.tree.block_at_depth(Chain::new(node.tip), cut).ok()?;
        Some(Value::Chain(tip))
    }

    /// Extra depth P3 demands beyond the configured checkpoint depth.
    fn p3_margin(&self) -> u64 {
        if self.cfg.enforce_p3 {
            self.cfg.k.saturating_sub(self.cfg.checkpoint_depth)
        } else {
            0
        }
    }

    /// Begins period 1 of `iteration` unless a later iteration is already under way.
    pub fn start_iteration(&mut self, iteration: u64, ctx: &mut BaContext) -> Vec<BaAction> {
        if iteration <= self.iteration {
            return Vec::new();
        }
        self.iteration = iteration;
        self.output = None;
        self.book.prune_before(iteration);
        self.proposals.retain(|(i, _), _| *i >= iteration);
        let mut out = self.enter_period(1, Value::Bottom, ctx);
        out.extend(self.try_halt(ctx));
        if self.phase == Phase::Running {
            out.extend(self.try_advance_period(ctx));
        }
        out
    }

    fn enter_period(&mut self, period: u64, starting_value: Value, ctx: &mut BaContext) -> Vec<BaAction> {
        self.phase = Phase::Running;
        self.period = period;
        self.period_start = ctx.now;
        self.starting_value = starting_value;
        self.entry_tip = ctx.node.tip;
        self.filter_done = false;
        self.first_finish_done = false;
        self.cert_voted = None;
        self.next_voted.clear();
        self.soft_voted = false;
        let (i, p, d) = (self.iteration, period, self.cfg.delta);
        vec![
            BaAction::PeriodStart { iteration: i, period: p, starting_value },
            BaAction::Tick { at: ctx.now, iteration: i, period: p, step: Step::Propose },
            BaAction::Tick { at: ctx.now + 2.0 * d, iteration: i, period: p, step: Step::Filter },
            BaAction::Tick { at: ctx.now + 4.0 * d, iteration: i, period: p, step: Step::FirstFinish },
        ]
    }

    fn is_current(&self, iteration: u64, period: u64) -> bool {
        self.phase == Phase::Running && self.iteration == iteration && self.period == period
    }

    pub fn on_tick(&mut self, iteration: u64, period: u64, step: Step, ctx: &mut BaContext) -> Vec<BaAction> {
        if !self.is_current(iteration, period) {
            return Vec::new();
        }
        match step {
            Step::Propose => self.step1_propose(ctx),
            Step::Filter => {
                let mut out = self.step2_filter(ctx);
                if self.is_current(iteration, period) {
                    self.filter_done = true;
                    out.extend(self.step3_certify(ctx));
                }
                out
            }
            Step::FirstFinish => {
                // Step 3's window closes at 4Δ, so mark it before voting.
                self.first_finish_done = true;
                let mut out = self.step4_first_finish(ctx);
                if self.is_current(iteration, period) {
                    out.extend(self.step5_second_finish(ctx));
                }
                out
            }
        }
    }

    fn prev_bottom_quorum(&self) -> bool {
        self.period >= 2 && self.book.has_quorum(self.iteration, VoteKind::Next, self.period - 1, Value::Bottom)
    }

    fn prev_value_quorum(&self) -> Option<Value> {
        if self.period < 2 {
            return None;
        }
        self.book.value_quorum(self.iteration, VoteKind::Next, self.period - 1)
    }

    fn step1_propose(&mut self, ctx: &mut BaContext) -> Vec<BaAction> {
        if ctx.leaders.leader(self.iteration, self.period) != Some(self.me) {
            return Vec::new();
        }
        let value = if self.period == 1 || self.prev_bottom_quorum() {
            self.input_value(ctx.node)
        } else {
            self.prev_value_quorum()
        };
        let Some(value) = value else { return Vec::new() };
        let proposal = Proposal { iteration: self.iteration, period: self.period, value, proposer: self.me };
        self.proposals.entry((self.iteration, self.period)).or_insert((value, self.me));
        vec![BaAction::Propose(proposal)]
    }

    /// Records a proposal; only the first one heard from the slot's proposer counts.
    pub fn on_proposal(&mut self, proposal: &Proposal) {
        if proposal.iteration >= self.iteration {
            self.proposals.entry((proposal.iteration, proposal.period)).or_insert((proposal.value, proposal.proposer));
        }
    }

    /// The VALID predicate for a value proposed by `proposer` in the current period.
    pub fn is_valid(&self, value: Value, proposer: NodeId, ctx: &mut BaContext) -> bool {
        if ctx.leaders.leader(self.iteration, self.period) != Some(proposer) {
            return false;
        }
        let Some(tip) = value.tip() else { return false };
        let tree = &ctx.node.tree;
        let Ok(b) = tree.block_at_depth(Chain::new(tip), self.cfg.checkpoint_depth) else { return false };
        if !tree.is_descendant(ctx.node.last_checkpoint.block, b).unwrap_or(false) {
            return false;
        }
        if self.cfg.enforce_p3 {
            let contained = tree.is_descendant(b, self.entry_tip).unwrap_or(false);
            let deep = match (tree.height(b), tree.height(self.entry_tip)) {
                (Ok(hb), Ok(he)) => he >= hb + self.cfg.k,
                _ => false,
            };
            return contained && (self.p3_margin() == 0 || deep);
        }
        true
    }

    fn step2_filter(&mut self, ctx: &mut BaContext) -> Vec<BaAction> {
        let choice = if self.period == 1 || self.prev_bottom_quorum() {
            match self.proposals.get(&(self.iteration, self.period)).copied() {
                Some((v, from)) if v != Value::Bottom => {
                    let backed =
                        self.period >= 2 && self.book.has_quorum(self.iteration, VoteKind::Next, self.period - 1, v);
                    (backed || self.is_valid(v, from, ctx)).then_some(v)
                }
                _ => None,
            }
        } else {
            self.prev_value_quorum()
        };
        match choice {
            Some(v) => {
                self.soft_voted = true;
                self.cast(VoteKind::Soft, v, ctx)
            }
            None => Vec::new(),
        }
    }

    fn step3_certify(&mut self, ctx: &mut BaContext) -> Vec<BaAction> {
        if !self.filter_done || self.first_finish_done || self.cert_voted.is_some() {
            return Vec::new();
        }
        match self.book.value_quorum(self.iteration, VoteKind::Soft, self.period) {
            Some(v) => {
                self.cert_voted = Some(v);
                self.cast(VoteKind::Cert, v, ctx)
            }
            None => Vec::new(),
        }
    }

    fn step4_first_finish(&mut self, ctx: &mut BaContext) -> Vec<BaAction> {
        let v = if let Some(v) = self.cert_voted {
            v
        } else if self.prev_bottom_quorum() {
            Value::Bottom
        } else {
            self.starting_value
        };
        self.next_vote(v, ctx)
    }

    fn step5_second_finish(&mut self, ctx: &mut BaContext) -> Vec<BaAction> {
        if !self.first_finish_done || self.phase != Phase::Running {
            return Vec::new();
        }
        let mut out = Vec::new();
        let (i, p) = (self.iteration, self.period);
        if let Some(v) = self.book.value_quorum(i, VoteKind::Soft, p) {
            out.extend(self.next_vote(v, ctx));
        }
        if self.is_current(i, p) && self.cert_voted.is_none() && self.prev_bottom_quorum() {
            out.extend(self.next_vote(Value::Bottom, ctx));
        }
        out
    }

    fn next_vote(&mut self, v: Value, ctx: &mut BaContext) -> Vec<BaAction> {
        if !self.next_voted.insert(v) {
            return Vec::new();
        }
        self.cast(VoteKind::Next, v, ctx)
    }

    /// Emits a vote and applies it to our own book.
    fn cast(&mut self, kind: VoteKind, value: Value, ctx: &mut BaContext) -> Vec<BaAction> {
        let vote = Vote { kind, value, iteration: self.iteration, period: self.period, voter: self.me };
        let mut out = vec![BaAction::Cast(vote)];
        out.extend(self.absorb_vote(&vote, ctx));
        out
    }

    /// Handles a vote from the network.
    pub fn on_vote(&mut self, vote: &Vote, ctx: &mut BaContext) -> (VoteAdded, Vec<BaAction>) {
        let added = self.book.add(vote);
        if !added.fresh {
            return (added, Vec::new());
        }
        (added, self.react(vote, ctx))
    }

    fn absorb_vote(&mut self, vote: &Vote, ctx: &mut BaContext) -> Vec<BaAction> {
        if self.book.add(vote).fresh {
            self.react(vote, ctx)
        } else {
            Vec::new()
        }
    }

    fn react(&mut self, vote: &Vote, ctx: &mut BaContext) -> Vec<BaAction> {
        match vote.kind {
            VoteKind::Cert => self.try_halt(ctx),
            _ if self.phase != Phase::Running || vote.iteration != self.iteration => Vec::new(),
            VoteKind::Soft if vote.period == self.period => {
                let mut out = self.step3_certify(ctx);
                out.extend(self.step5_second_finish(ctx));
                out
            }
            VoteKind::Soft => Vec::new(),
            VoteKind::Next => {
                let mut out = Vec::new();
                if vote.period + 1 == self.period && vote.value == Value::Bottom {
                    out.extend(self.step5_second_finish(ctx));
                }
                if self.phase == Phase::Running {
                    out.extend(self.try_advance_period(ctx));
                }
                out
            }
        }
    }

    /// Moves to the period after the highest one holding a next-vote quorum.
    pub fn try_advance_period(&mut self, ctx: &mut BaContext) -> Vec<BaAction> {
        let Some(p) = self.book.highest_next_quorum(self.iteration) else { return Vec::new() };
        if p < self.period {
            return Vec::new();
        }
        let values = self.book.quorum_values(self.iteration, VoteKind::Next, p);
        let st = values.iter().copied().find(|v| *v != Value::Bottom).unwrap_or(Value::Bottom);
        let mut out = self.enter_period(p + 1, st, ctx);
        // Votes for the new period may already be in the book.
        out.extend(self.try_halt(ctx));
        out
    }

    /// Halts on a cert-vote quorum for the current or a later iteration.
    pub fn try_halt(&mut self, ctx: &mut BaContext) -> Vec<BaAction> {
        let already = self.phase == Phase::Halted && self.output.is_some();
        let candidates: Vec<u64> = self
            .book
            .iterations
            .range(self.iteration..)
            .map(|(i, _)| *i)
            .filter(|i| !(already && *i == self.iteration))
            .collect();
        for iteration in candidates.into_iter().rev() {
            if let Some((period, value)) = self.book.cert_quorum(iteration) {
                let certificate = self.book.certificate(iteration, period, value);
                self.iteration = iteration;
                self.phase = Phase::Halted;
                self.output = Some(certificate.clone());
                return vec![
                    BaAction::Halt { certificate },
                    BaAction::StartIteration { at: ctx.now + self.cfg.e, iteration: iteration + 1 },
                ];
            }
        }
        Vec::new()
    }

    /// Applies every cert-vote in a received certificate.
    pub fn on_certificate(&mut self, cert: &CheckpointCertificate, ctx: &mut BaContext) -> Vec<BaAction> {
        if cert.verify(self.cfg.quorum()).is_err() {
            return Vec::new();
        }
        let mut fresh = false;
        for v in &cert.votes {
            fresh |= self.book.add(v).fresh;
        }
        if fresh {
            self.try_halt(ctx)
        } else {
            Vec::new()
        }
    }

    pub fn has_soft_voted(&self) -> bool {
        self.soft_voted
    }

    pub fn cert_voted(&self) -> Option<Value> {
        self.cert_voted
    }
}
