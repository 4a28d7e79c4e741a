//! The adversary controller: adversarial mining strategies, byzantine
//! checkpointers and the tie-break policy.
//!
//! The controller is invoked synchronously by the event loop. It sees every
//! honest message the instant it is sent and its own messages travel with zero
//! delay; what it cannot do is forge honest votes or mine faster than its
//! share of the mining process.

use crate::ba::{LeaderOracle, Proposal, Value, Vote, VoteKind};
use crate::chain::{BlockId, BlockTree, MinerKind, NodeId, SimTime};
use crate::node::{Checkpoint, TieBreaker};
use crate::scenario::{CheckpointerBehavior, MinerStrategy, ScriptedVote, TieBreakPolicy};
use crate::trace::{Payload, RecordKind};
use std::collections::{BTreeMap, BTreeSet};

/// What the event loop lends the adversary on every call.
pub struct View<'a> {
    pub now: SimTime,
    /// Every block mined so far, honest or not.
    pub tree: &'a BlockTree,
    /// Latest checkpoint any honest node has marked.
    pub checkpoint: Checkpoint,
    pub honest: &'a [NodeId],
    pub honest_checkpointers: &'a [NodeId],
    pub byzantine: &'a [NodeId],
    pub k_prime: u64,
    pub quorum: usize,
    pub leaders: &'a mut dyn LeaderOracle,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AdvAction {
    /// Announce the chain ending at `tip`.
    Publish {
        tip: BlockId,
        to: Vec<NodeId>,
    },
    Propose {
        proposal: Proposal,
        to: Vec<NodeId>,
    },
    Vote {
        vote: Vote,
        to: Vec<NodeId>,
    },
    Note(RecordKind),
    Timer {
        at: SimTime,
        tag: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Fork {
    base: BlockId,
    tip: BlockId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Race {
    iteration: u64,
    period: u64,
    /// The honest proposal whose certification is being held back.
    target: BlockId,
    /// First block of the sibling branch once mined.
    root: Option<BlockId>,
    tip: BlockId,
    released: bool,
}

#[derive(Clone, Debug)]
enum Miner {
    Idle,
    Passive,
    Private {
        release_depth: u64,
        give_up: u64,
        fork: Option<Fork>,
    },
    Rollback {
        give_up: u64,
        race: Option<Race>,
        done: BTreeSet<u64>,
        echoed: BTreeSet<(u64, u64)>,
        /// Honest soft-votes seen per (iteration, period, value).
        support: BTreeMap<(u64, u64, Value), usize>,
    },
}

#[derive(Clone, Debug)]
enum Committee {
    Silent,
    Equivocate { seen: BTreeSet<(u64, u64)>, attacked: BTreeSet<(u64, u64)> },
    Scripted(Vec<ScriptedVote>),
}

#[derive(Clone, Debug)]
pub struct Adversary {
    miner: Miner,
    committee: Committee,
    tie: TieBreakPolicy,
    /// Tip of every honest node, indexed by node id.
    tips: Vec<Option<BlockId>>,
    heights: Vec<u64>,
}

impl Adversary {
    pub fn new(strategy: &MinerStrategy, behavior: &CheckpointerBehavior, tie: TieBreakPolicy, n_nodes: usize) -> Self {
        let miner = match *strategy {
            MinerStrategy::None => Miner::Idle,
            MinerStrategy::Passive => Miner::Passive,
            MinerStrategy::PrivateChain { release_depth, give_up } => {
                Miner::Private { release_depth, give_up, fork: None }
            }
            MinerStrategy::GrandpaRollback { give_up } => Miner::Rollback {
                give_up,
                race: None,
                done: BTreeSet::new(),
                echoed: BTreeSet::new(),
                support: BTreeMap::new(),
            },
        };
        let committee = match behavior {
            CheckpointerBehavior::Silent => Committee::Silent,
            CheckpointerBehavior::Equivocate => {
                Committee::Equivocate { seen: BTreeSet::new(), attacked: BTreeSet::new() }
            }
            CheckpointerBehavior::Scripted { votes } => Committee::Scripted(votes.clone()),
        };
        Adversary { miner, committee, tie, tips: vec![None; n_nodes], heights: vec![0; n_nodes] }
    }

    /// Registers an honest node's starting tip.
    pub fn track(&mut self, node: NodeId) {
        self.tips[node.0 as usize] = Some(BlockId::GENESIS);
    }

    fn best_tip(&self) -> (BlockId, u64) {
        let mut best = (BlockId::GENESIS, 0);
        for (tip, &h) in self.tips.iter().zip(&self.heights) {
            if let Some(tip) = *tip {
                if h > best.1 || (h == best.1 && tip < best.0) {
                    best = (tip, h);
                }
            }
        }
        best
    }

    fn max_height(&self) -> u64 {
        self.best_tip().1
    }

    pub fn on_start(&mut self, _v: &mut View) -> Vec<AdvAction> {
        match &self.committee {
            Committee::Scripted(votes) => {
                votes.iter().enumerate().map(|(i, s)| AdvAction::Timer { at: s.at, tag: i as u64 }).collect()
            }
            _ => Vec::new(),
        }
    }

    pub fn on_timer(&mut self, tag: u64, v: &mut View) -> Vec<AdvAction> {
        let Committee::Scripted(votes) = &self.committee else { return Vec::new() };
        let Some(s) = votes.get(tag as usize) else { return Vec::new() };
        let Some(&voter) = v.byzantine.get(s.voter) else { return Vec::new() };
        let value = s.value.map_or(Value::Bottom, |b| Value::Chain(BlockId(b)));
        let vote = Vote { kind: s.kind, value, iteration: s.iteration, period: s.period, voter };
        let to =
            if s.to.is_empty() { v.honest_checkpointers.to_vec() } else { s.to.iter().map(|&n| NodeId(n)).collect() };
        vec![AdvAction::Vote { vote, to }]
    }

    /// Parent for the adversary's next block.
    pub fn mining_parent(&mut self, v: &mut View) -> BlockId {
        let (best, _) = self.best_tip();
        match &mut self.miner {
            Miner::Private { fork, .. } => fork.get_or_insert(Fork { base: best, tip: best }).tip,
            Miner::Rollback { race: Some(r), .. } if !r.released => r.tip,
            Miner::Rollback { race: Some(r), .. } => {
                // Keep extending the sibling branch while honest nodes hold it.
                let root = r.root.unwrap_or(r.tip);
                if v.tree.is_descendant(root, best).unwrap_or(false) {
                    best
                } else {
                    r.tip
                }
            }
            _ => best,
        }
    }

    pub fn on_mined(&mut self, block: BlockId, v: &mut View) -> Vec<AdvAction> {
        let height = v.tree.height(block).unwrap_or(0);
        match &mut self.miner {
            Miner::Idle | Miner::Passive => vec![AdvAction::Publish { tip: block, to: v.honest.to_vec() }],
            Miner::Private { fork, .. } => {
                if let Some(f) = fork.as_mut() {
                    f.tip = block;
                }
                let mut out = vec![AdvAction::Note(RecordKind::Withhold { tip: block, height })];
                out.extend(self.poll(v));
                out
            }
            Miner::Rollback { race, .. } => match race.as_mut() {
                Some(r) => {
                    r.tip = block;
                    r.root.get_or_insert(block);
                    if r.released {
                        vec![AdvAction::Publish { tip: block, to: v.honest.to_vec() }]
                    } else {
                        let mut out = vec![AdvAction::Note(RecordKind::Withhold { tip: block, height })];
                        out.extend(self.poll(v));
                        out
                    }
                }
                None => vec![AdvAction::Publish { tip: block, to: v.honest.to_vec() }],
            },
        }
    }

    /// An honest node now holds `tip`.
    pub fn on_honest_tip(&mut self, node: NodeId, tip: BlockId, v: &mut View) -> Vec<AdvAction> {
        self.tips[node.0 as usize] = Some(tip);
        self.heights[node.0 as usize] = v.tree.height(tip).unwrap_or(0);
        self.poll(v)
    }

    /// Re-evaluates release and abandon conditions.
    pub fn poll(&mut self, v: &mut View) -> Vec<AdvAction> {
        let public = self.max_height();
        match self.miner {
            Miner::Private { release_depth, give_up, fork: Some(f) } => {
                let fork_height = v.tree.height(f.tip).unwrap_or(0);
                let base_height = v.tree.height(f.base).unwrap_or(0);
                if !v.tree.is_descendant(v.checkpoint.block, f.tip).unwrap_or(false) {
                    self.set_fork(None);
                    return vec![AdvAction::Note(RecordKind::Abandon { tip: f.tip, reason: "checkpoint".into() })];
                }
                if public > fork_height + give_up {
                    self.set_fork(None);
                    return vec![AdvAction::Note(RecordKind::Abandon { tip: f.tip, reason: "deficit".into() })];
                }
                if f.tip != f.base && fork_height > public && public >= base_height + release_depth {
                    self.set_fork(None);
                    return vec![
                        AdvAction::Publish { tip: f.tip, to: v.honest.to_vec() },
                        AdvAction::Note(RecordKind::Release { tip: f.tip, height: fork_height }),
                    ];
                }
                Vec::new()
            }
            Miner::Rollback { give_up, race: Some(r), .. } => self.poll_race(r, give_up, public, v),
            _ => Vec::new(),
        }
    }

    fn set_fork(&mut self, value: Option<Fork>) {
        if let Miner::Private { fork, .. } = &mut self.miner {
            *fork = value;
        }
    }

    fn set_race(&mut self, value: Option<Race>) {
        if let Miner::Rollback { race, .. } = &mut self.miner {
            *race = value;
        }
    }

    fn poll_race(&mut self, mut r: Race, give_up: u64, public: u64, v: &mut View) -> Vec<AdvAction> {
        let height = v.tree.height(r.tip).unwrap_or(0);
        if !r.released {
            if r.root.is_some() && height >= public {
                r.released = true;
                self.set_race(Some(r));
                return vec![
                    AdvAction::Publish { tip: r.tip, to: v.honest.to_vec() },
                    AdvAction::Note(RecordKind::Release { tip: r.tip, height }),
                ];
            }
            if public > height + give_up {
                return self.concede(r, v);
            }
            return Vec::new();
        }
        let root = r.root.expect("released races have a root");
        let root_height = v.tree.height(root).unwrap_or(0);
        let holders: Vec<u64> = self
            .tips
            .iter()
            .zip(&self.heights)
            .filter_map(|(t, &h)| t.filter(|t| v.tree.is_descendant(root, *t).unwrap_or(false)).map(|_| h))
            .collect();
        if holders.iter().any(|&h| h >= root_height + v.k_prime) {
            // The sibling's first block is now confirmed by the depth rule
            // somewhere: finish the certificate for the original proposal.
            self.set_race(None);
            if !self.certifiable(&r, v) {
                return self.echo_bottom(r.iteration, r.period, v);
            }
            if let Miner::Rollback { done, .. } = &mut self.miner {
                done.insert(r.iteration);
            }
            return self.complete(r, v);
        }
        let best_sibling = holders.iter().copied().max().unwrap_or(height).max(height);
        if public > best_sibling + give_up {
            return self.concede(r, v);
        }
        Vec::new()
    }

    fn complete(&mut self, r: Race, v: &mut View) -> Vec<AdvAction> {
        let x = Value::Chain(r.target);
        let votes = [
            (VoteKind::Soft, r.period),
            (VoteKind::Next, r.period),
            (VoteKind::Soft, r.period + 1),
            (VoteKind::Cert, r.period + 1),
            (VoteKind::Next, r.period + 1),
        ];
        let mut out = Vec::new();
        for &voter in v.byzantine {
            for &(kind, period) in &votes {
                let vote = Vote { kind, value: x, iteration: r.iteration, period, voter };
                out.push(AdvAction::Vote { vote, to: v.honest_checkpointers.to_vec() });
            }
        }
        out
    }

    /// Stops racing and releases the stalled period with ⊥ next-votes.
    fn abandon(&mut self, r: Race, reason: &str, v: &mut View) -> Vec<AdvAction> {
        self.set_race(None);
        let votes = self.echo_bottom(r.iteration, r.period, v);
        if votes.is_empty() {
            return votes;
        }
        let mut out = vec![AdvAction::Note(RecordKind::Abandon { tip: r.tip, reason: reason.into() })];
        out.extend(votes);
        out
    }

    /// The sibling lost: let the iteration finish on the stalled proposal.
    fn concede(&mut self, r: Race, v: &mut View) -> Vec<AdvAction> {
        self.set_race(None);
        let mut out = vec![AdvAction::Note(RecordKind::Abandon { tip: r.tip, reason: "deficit".into() })];
        if self.certifiable(&r, v) {
            out.extend(self.complete(r, v));
        } else {
            out.extend(self.echo_bottom(r.iteration, r.period, v));
        }
        out
    }

    /// Whether byzantine votes would lift the stalled value to a quorum.
    fn certifiable(&self, r: &Race, v: &View) -> bool {
        let Miner::Rollback { support, .. } = &self.miner else { return false };
        let backers = support.get(&(r.iteration, r.period, Value::Chain(r.target))).copied().unwrap_or(0);
        backers + v.byzantine.len() >= v.quorum
    }

    /// Byzantine ⊥ next-votes for a period, at most once.
    fn echo_bottom(&mut self, iteration: u64, period: u64, v: &mut View) -> Vec<AdvAction> {
        if let Miner::Rollback { echoed, .. } = &mut self.miner {
            if !echoed.insert((iteration, period)) {
                return Vec::new();
            }
        }
        v.byzantine
            .iter()
            .map(|&voter| {
                let vote = Vote { kind: VoteKind::Next, value: Value::Bottom, iteration, period, voter };
                AdvAction::Vote { vote, to: v.honest_checkpointers.to_vec() }
            })
            .collect()
    }

    /// Honest ⊥ next-votes are matched unless that period is being stalled.
    fn on_bottom(&mut self, iteration: u64, period: u64, v: &mut View) -> Vec<AdvAction> {
        let Miner::Rollback { race, .. } = &self.miner else { return Vec::new() };
        if race.is_some_and(|r| (r.iteration, r.period) == (iteration, period)) {
            return Vec::new();
        }
        self.echo_bottom(iteration, period, v)
    }

    /// Zero-delay observation of an honest message at send time.
    pub fn on_observe(&mut self, _from: NodeId, payload: &Payload, v: &mut View) -> Vec<AdvAction> {
        let Payload::Proposal { proposal } = payload else {
            match payload {
                Payload::Certificate { certificate } => self.on_halted(certificate.iteration),
                Payload::Vote { vote } if vote.kind == VoteKind::Next && vote.value == Value::Bottom => {
                    return self.on_bottom(vote.iteration, vote.period, v);
                }
                // Stall only values honest checkpointers actually back.
                Payload::Vote { vote } if vote.kind == VoteKind::Soft => {
                    if let Miner::Rollback { support, .. } = &mut self.miner {
                        *support.entry((vote.iteration, vote.period, vote.value)).or_default() += 1;
                    }
                    if let Some(x) = vote.value.tip() {
                        return self.begin_race(vote.iteration, vote.period, x, v);
                    }
                }
                _ => {}
            }
            return Vec::new();
        };
        self.equivocate(proposal.iteration, proposal.period, proposal.value, v)
    }

    fn on_halted(&mut self, iteration: u64) {
        if let Miner::Rollback { race, .. } = &mut self.miner {
            if race.is_some_and(|r| r.iteration <= iteration) {
                *race = None;
            }
        }
    }

    /// First honest entry into `(iteration, period)`.
    pub fn on_period_start(&mut self, iteration: u64, period: u64, v: &mut View) -> Vec<AdvAction> {
        let Some(leader) = v.leaders.leader(iteration, period) else { return Vec::new() };
        if !v.byzantine.contains(&leader) {
            return Vec::new();
        }
        let mut out = Vec::new();
        let (best, _) = self.best_tip();
        if let Miner::Rollback { race: None, done, .. } = &self.miner {
            if !done.contains(&iteration) {
                let proposal = Proposal { iteration, period, value: Value::Chain(best), proposer: leader };
                out.push(AdvAction::Propose { proposal, to: v.honest_checkpointers.to_vec() });
                return out;
            }
        }
        if matches!(self.committee, Committee::Equivocate { .. }) {
            let a = Value::Chain(best);
            let b = alternative(best, v.tree);
            let (half_a, half_b) = halves(v.honest_checkpointers);
            if let Committee::Equivocate { seen, .. } = &mut self.committee {
                if !seen.insert((iteration, period)) {
                    return out;
                }
            }
            out.push(AdvAction::Propose {
                proposal: Proposal { iteration, period, value: a, proposer: leader },
                to: half_a,
            });
            out.push(AdvAction::Propose {
                proposal: Proposal { iteration, period, value: b, proposer: leader },
                to: half_b,
            });
            out.extend(self.equivocate(iteration, period, a, v));
        }
        out
    }

    fn begin_race(&mut self, iteration: u64, period: u64, x: BlockId, v: &mut View) -> Vec<AdvAction> {
        let Miner::Rollback { race, done, .. } = &mut self.miner else { return Vec::new() };
        if race.is_some() || done.contains(&iteration) {
            return Vec::new();
        }
        let parent = v.tree.get(x).map(|b| b.parent);
        let attackable = x != v.checkpoint.block && v.tree.is_descendant(v.checkpoint.block, x).unwrap_or(false);
        let Some(parent) = parent.filter(|_| attackable) else {
            // Nothing to fork from: let the period finish.
            let r = Race { iteration, period, target: x, root: None, tip: x, released: false };
            return self.abandon(r, "no-fork", v);
        };
        *race = Some(Race { iteration, period, target: x, root: None, tip: parent, released: false });
        Vec::new()
    }

    /// Conflicting soft/cert/next votes to the two halves of the honest committee.
    fn equivocate(&mut self, iteration: u64, period: u64, a: Value, v: &mut View) -> Vec<AdvAction> {
        let Committee::Equivocate { attacked, .. } = &mut self.committee else { return Vec::new() };
        if !attacked.insert((iteration, period)) {
            return Vec::new();
        }
        let b = match a.tip() {
            Some(tip) => alternative(tip, v.tree),
            None => Value::Bottom,
        };
        let (half_a, half_b) = halves(v.honest_checkpointers);
        let mut out = Vec::new();
        for &voter in v.byzantine {
            for (kind, second) in [(VoteKind::Soft, b), (VoteKind::Cert, b), (VoteKind::Next, Value::Bottom)] {
                let vote_a = Vote { kind, value: a, iteration, period, voter };
                let vote_b = Vote { value: second, ..vote_a };
                out.push(AdvAction::Vote { vote: vote_a, to: half_a.clone() });
                out.push(AdvAction::Vote { vote: vote_b, to: half_b.clone() });
                if second != a {
                    out.push(AdvAction::Note(RecordKind::Equivocation { voter, iteration, period, vote_kind: kind }));
                }
            }
        }
        out
    }

    fn favored(&self) -> Option<BlockId> {
        match &self.miner {
            Miner::Rollback { race: Some(r), .. } if r.released => r.root,
            _ => None,
        }
    }
}

/// A value conflicting with the chain ending at `tip`: its parent chain.
fn alternative(tip: BlockId, tree: &BlockTree) -> Value {
    match tree.get(tip) {
        Some(b) if !tip.is_genesis() => Value::Chain(b.parent),
        _ => Value::Bottom,
    }
}

fn halves(nodes: &[NodeId]) -> (Vec<NodeId>, Vec<NodeId>) {
    let mid = nodes.len().div_ceil(2);
    (nodes[..mid].to_vec(), nodes[mid..].to_vec())
}

impl TieBreaker for Adversary {
    fn choose(&mut self, node: NodeId, incumbent: BlockId, candidates: &[BlockId], tree: &BlockTree) -> BlockId {
        if candidates.len() == 1 {
            return candidates[0];
        }
        match self.tie {
            TieBreakPolicy::KeepIncumbent => crate::node::KeepIncumbent.choose(node, incumbent, candidates, tree),
            TieBreakPolicy::Adversarial => {
                if let Some(root) = self.favored() {
                    if let Some(&c) = candidates.iter().find(|&&c| tree.is_descendant(root, c).unwrap_or(false)) {
                        return c;
                    }
                }
                // Keep the fork alive: side with the tip fewer honest nodes hold.
                let holders = |c: BlockId| {
                    self.tips.iter().flatten().filter(|&&t| tree.is_descendant(c, t).unwrap_or(false)).count()
                };
                let adversarial = |c: BlockId| tree.get(c).is_some_and(|b| b.miner_kind == MinerKind::Adversarial);
                *candidates.iter().min_by_key(|&&c| (holders(c), !adversarial(c), c)).expect("candidates are non-empty")
            }
        }
    }
}
