//! The event loop: wires nodes, checkpointers, the network, participation,
//! the mining oracle and the adversary together and records everything.

use crate::adversary::{AdvAction, Adversary, View};
use crate::ba::{BaAction, BaConfig, BaContext, BaState, CheckpointCertificate, LeaderOracle, Phase};
use crate::chain::{Block, BlockId, BlockTree, Chain, MinerKind, NodeId, SimTime};
use crate::net::{stream_rng, EventKind, EventQueue, MiningOracle, MsgIdx, NetworkModel, ParticipationSchedule};
use crate::node::{Checkpoint, NodeError, NodeParams, NodeState, TipChange};
use crate::scenario::{ParticipationMode, ScenarioConfig};
use crate::trace::{Payload, RecordKind, Role, Trace, TraceHeader, TraceLog, TRACE_SCHEMA};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, HashSet};

const LATENCY_STREAM: u64 = 0;
const PARTICIPATION_STREAM: u64 = 3;
const ASSIGNMENT_STREAM: u64 = 4;

#[derive(Clone, Debug)]
pub struct Message {
    pub from: NodeId,
    pub sent: SimTime,
    pub adversarial: bool,
    pub payload: Payload,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Audience {
    Everyone,
    Checkpointers,
}

fn audience(payload: &Payload) -> Audience {
    match payload {
        Payload::Chain { .. } | Payload::Certificate { .. } => Audience::Everyone,
        Payload::Proposal { .. } | Payload::Vote { .. } => Audience::Checkpointers,
    }
}

/// Leaders fixed at first request over the checkpointers online at that moment.
#[derive(Debug)]
struct Leaders {
    seed: u64,
    online: Vec<NodeId>,
    cache: HashMap<(u64, u64), Option<NodeId>>,
    fresh: Vec<(u64, u64, NodeId)>,
}

impl LeaderOracle for Leaders {
    fn leader(&mut self, iteration: u64, period: u64) -> Option<NodeId> {
        if let Some(l) = self.cache.get(&(iteration, period)) {
            return *l;
        }
        let l = crate::ba::leader_for(self.seed, iteration, period, &self.online).ok();
        if let Some(l) = l {
            self.fresh.push((iteration, period, l));
        }
        self.cache.insert((iteration, period), l);
        l
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    roster: Vec<Role>,
    now: SimTime,
    end: SimTime,
    horizon: SimTime,
    queue: EventQueue,
    global: BlockTree,
    nodes: Vec<Option<NodeState>>,
    bas: Vec<Option<BaState>>,
    pending_start: Vec<Option<u64>>,
    online: Vec<bool>,
    inbox: Vec<Vec<MsgIdx>>,
    messages: Vec<Message>,
    relayed: Vec<bool>,
    net: NetworkModel,
    latency_rng: ChaCha8Rng,
    assign_rng: ChaCha8Rng,
    mining: MiningOracle,
    leaders: Leaders,
    adversary: Adversary,
    log: TraceLog,
    confirmed: Vec<(BlockId, BlockId)>,
    latest_checkpoint: Checkpoint,
    miners: Vec<NodeId>,
    honest: Vec<NodeId>,
    honest_checkpointers: Vec<NodeId>,
    byzantine: Vec<NodeId>,
    checkpointers: Vec<NodeId>,
    periods_seen: HashSet<(u64, u64)>,
}

/// Runs a validated scenario to completion.
pub fn run(cfg: &ScenarioConfig) -> Trace {
    Simulation::new(cfg.clone()).run()
}

/// Node roles: miners first, then honest checkpointers, then byzantine ones.
pub fn roster(cfg: &ScenarioConfig) -> Vec<Role> {
    let honest_ckpt = cfg.n_checkpointers - cfg.byzantine_checkpointers;
    std::iter::repeat_n(Role::Miner, cfg.n_miners)
        .chain(std::iter::repeat_n(Role::Checkpointer, honest_ckpt))
        .chain(std::iter::repeat_n(Role::ByzantineCheckpointer, cfg.byzantine_checkpointers))
        .collect()
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Self {
        let roster = roster(&cfg);
        let n = roster.len();
        let ids = |want: &[Role]| -> Vec<NodeId> {
            roster.iter().enumerate().filter(|(_, r)| want.contains(r)).map(|(i, _)| NodeId(i as u32)).collect()
        };
        let miners = ids(&[Role::Miner]);
        let honest = ids(&[Role::Miner, Role::Checkpointer]);
        let honest_checkpointers = ids(&[Role::Checkpointer]);
        let byzantine = ids(&[Role::ByzantineCheckpointer]);
        let checkpointers = ids(&[Role::Checkpointer, Role::ByzantineCheckpointer]);

        let depth = cfg.checkpoint_depth();
        let params = NodeParams {
            checkpoint_depth: depth,
            k_prime: cfg.k_prime,
            quorum: cfg.quorum(),
            enforce_p2: cfg.variant.enforce_p2,
        };
        let ba_cfg = BaConfig {
            n: cfg.n_checkpointers,
            t: cfg.t,
            k: cfg.k,
            checkpoint_depth: depth,
            e: cfg.e(),
            delta: cfg.delta,
            enforce_p3: cfg.variant.enforce_p3,
        };
        let mut nodes = vec![None; n];
        let mut bas = vec![None; n];
        for &h in &honest {
            nodes[h.0 as usize] = Some(NodeState::new(h, params));
        }
        for &c in &honest_checkpointers {
            bas[c.0 as usize] = Some(BaState::new(c, ba_cfg));
        }

        let horizon = cfg.horizon();
        let net = NetworkModel::new(
            cfg.network.mode,
            cfg.delta,
            cfg.gst(),
            cfg.network.latency,
            cfg.network.pre_gst.clone(),
            n,
        );
        let mut adversary =
            Adversary::new(&cfg.adversary.miner, &cfg.adversary.checkpointers, cfg.adversary.tie_break, n);
        for &h in &honest {
            adversary.track(h);
        }

        Simulation {
            roster,
            now: 0.0,
            end: horizon + cfg.flush.unwrap_or(0.0),
            horizon,
            queue: EventQueue::new(),
            global: BlockTree::with_genesis(),
            nodes,
            bas,
            pending_start: vec![None; n],
            online: vec![true; n],
            inbox: vec![Vec::new(); n],
            messages: Vec::new(),
            relayed: Vec::new(),
            net,
            latency_rng: stream_rng(cfg.seed, LATENCY_STREAM),
            assign_rng: stream_rng(cfg.seed, ASSIGNMENT_STREAM),
            mining: MiningOracle::new(cfg.lambda, cfg.beta, cfg.seed),
            leaders: Leaders { seed: cfg.seed, online: Vec::new(), cache: HashMap::new(), fresh: Vec::new() },
            adversary,
            log: TraceLog::default(),
            confirmed: vec![(BlockId::GENESIS, BlockId::GENESIS); n],
            latest_checkpoint: Checkpoint::genesis(),
            miners,
            honest,
            honest_checkpointers,
            byzantine,
            checkpointers,
            periods_seen: HashSet::new(),
            cfg,
        }
    }

    pub fn run(mut self) -> Trace {
        self.setup();
        while let Some(t) = self.queue.peek_time() {
            if t >= self.end {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.time;
            self.handle(ev.kind);
        }
        self.now = self.end.max(self.now);
        self.finish()
    }

    fn setup(&mut self) {
        self.log.push(0.0, None, RecordKind::Genesis);
        let schedule = match self.cfg.participation.mode {
            ParticipationMode::U1 => ParticipationSchedule::always(self.roster.len()),
            ParticipationMode::U2 => {
                let mut rng = stream_rng(self.cfg.seed, PARTICIPATION_STREAM);
                ParticipationSchedule::with_churn(
                    self.roster.len(),
                    &self.miners,
                    self.cfg.participation.churn.as_ref(),
                    &self.cfg.participation.offline,
                    self.horizon,
                    &mut rng,
                )
            }
        };
        for (t, node, up) in schedule.transitions() {
            if t == 0.0 && !up {
                self.set_online(node, false);
            } else if t < self.end {
                self.queue.push(t, if up { EventKind::GoOnline(node) } else { EventKind::GoOffline(node) });
            }
        }
        self.refresh_online_checkpointers();
        for kind in [MinerKind::Honest, MinerKind::Adversarial] {
            self.schedule_mining(kind);
        }
        for c in self.honest_checkpointers.clone() {
            self.queue.push(0.0, EventKind::IterationStart { node: c, iteration: 1 });
        }
        if self.cfg.flush.is_some() {
            self.queue.push(self.horizon, EventKind::FlushStart);
        }
        self.with_adversary(|a, v| a.on_start(v));
    }

    fn finish(mut self) -> Trace {
        for h in self.honest.clone() {
            let node = self.nodes[h.0 as usize].as_ref().expect("honest nodes have state");
            let (iteration, period, halted) = match &self.bas[h.0 as usize] {
                Some(ba) => (ba.iteration, ba.period, ba.phase == Phase::Halted),
                None => (0, 0, false),
            };
            let kind = RecordKind::FinalState {
                tip: node.tip,
                checkpoint_iteration: node.last_checkpoint.iteration,
                iteration,
                period,
                halted,
            };
            self.log.push(self.now, Some(h), kind);
        }
        Trace {
            header: TraceHeader { trace_schema: TRACE_SCHEMA, config: self.cfg, roster: self.roster },
            records: self.log.into_records(),
        }
    }

    fn handle(&mut self, kind: EventKind) {
        match kind {
            EventKind::GoOnline(n) => self.go_online(n),
            EventKind::GoOffline(n) => {
                self.set_online(n, false);
                self.refresh_online_checkpointers();
            }
            EventKind::Deliver { msg, to } => self.deliver(msg, to, false),
            EventKind::FlushStart => self.log.push(self.now, None, RecordKind::FlushStart),
            EventKind::Mine(MinerKind::Honest) => self.mine_honest(),
            EventKind::Mine(MinerKind::Adversarial) => self.mine_adversarial(),
            EventKind::AdversaryTimer(tag) => self.with_adversary(|a, v| a.on_timer(tag, v)),
            EventKind::IterationStart { node, iteration } => {
                if self.online[node.0 as usize] {
                    self.start_iteration(node, iteration);
                } else {
                    self.pending_start[node.0 as usize] = Some(iteration);
                }
            }
            EventKind::Tick { node, iteration, period, step } => {
                if self.online[node.0 as usize] {
                    let actions = self.with_ba(node, |ba, ctx| ba.on_tick(iteration, period, step, ctx));
                    self.apply_ba(node, actions.unwrap_or_default());
                }
            }
        }
    }

    fn set_online(&mut self, n: NodeId, up: bool) {
        self.online[n.0 as usize] = up;
        if let Some(node) = self.nodes[n.0 as usize].as_mut() {
            node.online = up;
        }
        let kind = if up { RecordKind::Online } else { RecordKind::Offline };
        self.log.push(self.now, Some(n), kind);
    }

    fn refresh_online_checkpointers(&mut self) {
        self.leaders.online = self.checkpointers.iter().copied().filter(|c| self.online[c.0 as usize]).collect();
    }

    fn go_online(&mut self, n: NodeId) {
        self.set_online(n, true);
        self.refresh_online_checkpointers();
        // Messages that arrived while offline land now, in arrival order.
        for msg in std::mem::take(&mut self.inbox[n.0 as usize]) {
            self.deliver(msg, n, true);
        }
        if let Some(iteration) = self.pending_start[n.0 as usize].take() {
            self.start_iteration(n, iteration);
        }
    }

    fn schedule_mining(&mut self, kind: MinerKind) {
        if let Some(t) = self.mining.next_after(kind, self.now) {
            if t <= self.horizon {
                self.queue.push(t, EventKind::Mine(kind));
            }
        }
    }

    fn next_block_id(&self) -> BlockId {
        BlockId(self.global.len() as u64)
    }

    fn mine_honest(&mut self) {
        self.schedule_mining(MinerKind::Honest);
        let up: Vec<NodeId> = self.miners.iter().copied().filter(|m| self.online[m.0 as usize]).collect();
        if up.is_empty() {
            let kind = RecordKind::MiningOpportunity { miner_kind: MinerKind::Honest, assigned: None };
            self.log.push(self.now, None, kind);
            return;
        }
        let m = up[self.assign_rng.random_range(0..up.len())];
        let kind = RecordKind::MiningOpportunity { miner_kind: MinerKind::Honest, assigned: Some(m) };
        self.log.push(self.now, None, kind);
        let id = self.next_block_id();
        let node = self.nodes[m.0 as usize].as_mut().expect("miners are honest");
        let old_tip = node.tip;
        let block = match node.mine(id, self.now) {
            Ok(b) => b,
            Err(e) => {
                self.log.push(self.now, Some(m), RecordKind::NodeError { error: e.to_string() });
                return;
            }
        };
        self.global.append(block.clone()).expect("fresh id with a known parent");
        let kind = RecordKind::BlockMined {
            block: id,
            parent: block.parent,
            height: block.height,
            miner_kind: MinerKind::Honest,
        };
        self.log.push(self.now, Some(m), kind);
        self.after_tip_change(m, TipChange { old_tip, new_tip: id });
        self.broadcast(m, Payload::Chain { tip: id }, true);
    }

    fn mine_adversarial(&mut self) {
        self.schedule_mining(MinerKind::Adversarial);
        let kind =
            RecordKind::MiningOpportunity { miner_kind: MinerKind::Adversarial, assigned: Some(NodeId::ADVERSARY) };
        self.log.push(self.now, None, kind);
        if matches!(self.cfg.adversary.miner, crate::scenario::MinerStrategy::None) {
            return;
        }
        let mut parent = BlockId::GENESIS;
        self.with_adversary(|a, v| {
            parent = a.mining_parent(v);
            Vec::new()
        });
        let id = self.next_block_id();
        let block = Block::new(id, parent, self.now, NodeId::ADVERSARY, MinerKind::Adversarial);
        let height = self.global.append(block).expect("adversary mines on known blocks").height;
        let kind = RecordKind::BlockMined { block: id, parent, height, miner_kind: MinerKind::Adversarial };
        self.log.push(self.now, None, kind);
        self.with_adversary(|a, v| a.on_mined(id, v));
    }

    /// Honest broadcast with model-conforming delays; returns the message index.
    fn broadcast(&mut self, from: NodeId, payload: Payload, observe: bool) -> MsgIdx {
        let idx = self.messages.len();
        let kind = RecordKind::MessageSent { msg: idx as u64, from, adversarial: false, payload: payload.clone() };
        self.log.push(self.now, Some(from), kind);
        let recipients = match audience(&payload) {
            Audience::Everyone => &self.honest,
            Audience::Checkpointers => &self.honest_checkpointers,
        };
        for &to in recipients {
            if to != from {
                let at = self.net.arrival(self.now, from, to, &mut self.latency_rng);
                self.queue.push(at, EventKind::Deliver { msg: idx, to });
            }
        }
        self.messages.push(Message { from, sent: self.now, adversarial: false, payload: payload.clone() });
        self.relayed.push(true);
        if observe {
            self.with_adversary(|a, v| a.on_observe(from, &payload, v));
        }
        idx
    }

    /// Adversarial send: zero delay to the chosen recipients.
    fn send_adversarial(&mut self, from: NodeId, payload: Payload, to: &[NodeId]) {
        let idx = self.messages.len();
        let kind = RecordKind::MessageSent { msg: idx as u64, from, adversarial: true, payload: payload.clone() };
        self.log.push(self.now, None, kind);
        for &r in to {
            if self.nodes.get(r.0 as usize).is_some_and(Option::is_some) {
                self.queue.push(self.now, EventKind::Deliver { msg: idx, to: r });
            }
        }
        self.messages.push(Message { from, sent: self.now, adversarial: true, payload });
        self.relayed.push(false);
    }

    fn deliver(&mut self, msg: MsgIdx, to: NodeId, deferred: bool) {
        if !self.online[to.0 as usize] {
            self.inbox[to.0 as usize].push(msg);
            return;
        }
        let sent = self.messages[msg].sent;
        self.log.push(self.now, Some(to), RecordKind::Delivery { msg: msg as u64, sent, deferred });
        let payload = self.messages[msg].payload.clone();
        if !self.relayed[msg] {
            // First honest receipt of an adversarial message: pass it on.
            self.relayed[msg] = true;
            self.broadcast(to, payload.clone(), false);
        }
        match payload {
            Payload::Chain { tip } => self.receive_chain(to, tip),
            Payload::Proposal { proposal } => {
                if self.bas[to.0 as usize].is_some() {
                    if let Some(tip) = proposal.value.tip() {
                        self.receive_chain(to, tip);
                    }
                    if let Some(ba) = self.bas[to.0 as usize].as_mut() {
                        ba.on_proposal(&proposal);
                    }
                }
            }
            Payload::Vote { vote } => {
                let actions = self.with_ba(to, |ba, ctx| ba.on_vote(&vote, ctx).1);
                self.apply_ba(to, actions.unwrap_or_default());
            }
            Payload::Certificate { certificate } => self.receive_certificate(to, &certificate),
        }
    }

    /// Blocks between what `node` knows and `tip`, parents first.
    fn missing_blocks(global: &BlockTree, local: &BlockTree, tip: BlockId) -> Vec<Block> {
        let mut out = Vec::new();
        let mut cur = tip;
        while !local.contains(cur) {
            let Some(b) = global.get(cur) else { break };
            out.push(b.clone());
            cur = b.parent;
        }
        out.reverse();
        out
    }

    fn receive_chain(&mut self, n: NodeId, tip: BlockId) {
        let Some(node) = self.nodes[n.0 as usize].as_mut() else { return };
        if node.tip == tip {
            return;
        }
        let blocks = Self::missing_blocks(&self.global, &node.tree, tip);
        match node.on_receive_chain(tip, &blocks, &mut self.adversary) {
            Ok(Some(change)) => self.after_tip_change(n, change),
            Ok(None) => {}
            Err(e) => self.log.push(self.now, Some(n), RecordKind::NodeError { error: e.to_string() }),
        }
    }

    fn receive_certificate(&mut self, n: NodeId, cert: &CheckpointCertificate) {
        if let (Some(node), Some(tip)) = (self.nodes[n.0 as usize].as_mut(), cert.value.tip()) {
            let blocks = Self::missing_blocks(&self.global, &node.tree, tip);
            match node.on_receive_checkpoint(cert, &blocks, &mut self.adversary) {
                Ok(outcome) => {
                    for cp in &outcome.applied {
                        let kind = RecordKind::CheckpointMark { iteration: cp.iteration, block: cp.block };
                        self.log.push(self.now, Some(n), kind);
                        if cp.iteration > self.latest_checkpoint.iteration {
                            self.latest_checkpoint = *cp;
                        }
                    }
                    match outcome.tip_change {
                        Some(change) => self.after_tip_change(n, change),
                        None => self.update_confirmed(n),
                    }
                    if !outcome.applied.is_empty() {
                        self.with_adversary(|a, v| a.poll(v));
                    }
                }
                Err(NodeError::StaleIteration(_)) => {}
                Err(e) => self.log.push(self.now, Some(n), RecordKind::NodeError { error: e.to_string() }),
            }
        }
        let actions = self.with_ba(n, |ba, ctx| ba.on_certificate(cert, ctx));
        self.apply_ba(n, actions.unwrap_or_default());
    }

    fn after_tip_change(&mut self, n: NodeId, change: TipChange) {
        let old_height = self.global.height(change.old_tip).unwrap_or(0);
        let height = self.global.height(change.new_tip).unwrap_or(0);
        let kind = if height < old_height {
            RecordKind::ChainTruncate { tip: change.new_tip, height, old_tip: change.old_tip, old_height }
        } else {
            RecordKind::ChainAdopt { tip: change.new_tip, height, old_tip: change.old_tip }
        };
        self.log.push(self.now, Some(n), kind);
        self.update_confirmed(n);
        self.with_adversary(|a, v| a.on_honest_tip(n, change.new_tip, v));
    }

    fn update_confirmed(&mut self, n: NodeId) {
        let Some(node) = self.nodes[n.0 as usize].as_ref() else { return };
        let now = (node.confirm_fin().tip, node.confirm_ada().tip);
        if self.confirmed[n.0 as usize] != now {
            self.confirmed[n.0 as usize] = now;
            self.log.push(self.now, Some(n), RecordKind::ConfirmSetChange { fin: now.0, ada: now.1 });
        }
    }

    fn start_iteration(&mut self, n: NodeId, iteration: u64) {
        let due = self.bas[n.0 as usize].as_ref().is_some_and(|ba| iteration > ba.iteration);
        if !due {
            return;
        }
        self.log.push(self.now, Some(n), RecordKind::IterationStart { iteration });
        let actions = self.with_ba(n, |ba, ctx| ba.start_iteration(iteration, ctx));
        self.apply_ba(n, actions.unwrap_or_default());
    }

    fn with_ba<R>(&mut self, n: NodeId, f: impl FnOnce(&mut BaState, &mut BaContext) -> R) -> Option<R> {
        let (Some(ba), Some(node)) = (self.bas[n.0 as usize].as_mut(), self.nodes[n.0 as usize].as_ref()) else {
            return None;
        };
        let mut ctx = BaContext { node, leaders: &mut self.leaders, now: self.now };
        let out = f(ba, &mut ctx);
        self.flush_leaders();
        Some(out)
    }

    fn flush_leaders(&mut self) {
        for (iteration, period, leader) in std::mem::take(&mut self.leaders.fresh) {
            let honest = self.roster.get(leader.0 as usize) == Some(&Role::Checkpointer);
            self.log.push(self.now, None, RecordKind::LeaderChosen { iteration, period, leader, honest });
        }
    }

    fn apply_ba(&mut self, n: NodeId, actions: Vec<BaAction>) {
        for action in actions {
            match action {
                BaAction::Propose(p) => {
                    let kind = RecordKind::Proposal { iteration: p.iteration, period: p.period, value: p.value };
                    self.log.push(self.now, Some(n), kind);
                    self.broadcast(n, Payload::Proposal { proposal: p }, true);
                }
                BaAction::Cast(vote) => {
                    self.log.push(self.now, Some(n), RecordKind::VoteCast { vote, by_adversary: false });
                    self.broadcast(n, Payload::Vote { vote }, true);
                }
                BaAction::PeriodStart { iteration, period, starting_value } => {
                    self.log.push(self.now, Some(n), RecordKind::PeriodStart { iteration, period, starting_value });
                    if self.periods_seen.insert((iteration, period)) {
                        self.with_adversary(|a, v| a.on_period_start(iteration, period, v));
                    }
                }
                BaAction::Tick { at, iteration, period, step } => {
                    self.queue.push(at, EventKind::Tick { node: n, iteration, period, step });
                }
                BaAction::Halt { certificate } => self.halt(n, certificate),
                BaAction::StartIteration { at, iteration } => {
                    self.queue.push(at, EventKind::IterationStart { node: n, iteration });
                }
            }
        }
    }

    fn halt(&mut self, n: NodeId, certificate: CheckpointCertificate) {
        let node = self.nodes[n.0 as usize].as_ref().expect("checkpointers are honest nodes");
        let depth = self.cfg.checkpoint_depth();
        let checkpoint = certificate
            .value
            .tip()
            .and_then(|tip| self.global.block_at_depth(Chain::new(tip), depth).ok())
            .unwrap_or(node.last_checkpoint.block);
        let mut voters: Vec<NodeId> = certificate.votes.iter().map(|v| v.voter).collect();
        voters.sort();
        voters.dedup();
        let kind = RecordKind::IterationHalt {
            iteration: certificate.iteration,
            period: certificate.period,
            value: certificate.value,
            checkpoint,
            voters,
        };
        self.log.push(self.now, Some(n), kind);
        let msg = self.broadcast(n, Payload::Certificate { certificate: certificate.clone() }, true);
        self.log.push(
            self.now,
            Some(n),
            RecordKind::CertificateBroadcast { iteration: certificate.iteration, msg: msg as u64 },
        );
        self.receive_certificate(n, &certificate);
    }

    fn with_adversary(&mut self, f: impl FnOnce(&mut Adversary, &mut View) -> Vec<AdvAction>) {
        let mut view = View {
            now: self.now,
            tree: &self.global,
            checkpoint: self.latest_checkpoint,
            honest: &self.honest,
            honest_checkpointers: &self.honest_checkpointers,
            byzantine: &self.byzantine,
            k_prime: self.cfg.k_prime,
            quorum: self.cfg.quorum(),
            leaders: &mut self.leaders,
        };
        let actions = f(&mut self.adversary, &mut view);
        self.flush_leaders();
        for action in actions {
            match action {
                AdvAction::Publish { tip, to } => self.send_adversarial(NodeId::ADVERSARY, Payload::Chain { tip }, &to),
                AdvAction::Propose { proposal, to } => {
                    self.send_adversarial(proposal.proposer, Payload::Proposal { proposal }, &to)
                }
                AdvAction::Vote { vote, to } => {
                    self.log.push(self.now, None, RecordKind::VoteCast { vote, by_adversary: true });
                    self.send_adversarial(vote.voter, Payload::Vote { vote }, &to);
                }
                AdvAction::Note(kind) => self.log.push(self.now, None, kind),
                AdvAction::Timer { at, tag } => self.queue.push(at.max(self.now), EventKind::AdversaryTimer(tag)),
            }
        }
    }
}

#[cfg(test)]
mod tests;
