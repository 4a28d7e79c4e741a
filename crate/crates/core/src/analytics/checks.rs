//! Property checkers over a trace index.

use super::{TraceIndex, Violation, Witness};
use crate::ba::{Value, Vote, VoteKind};
use crate::chain::{BlockId, Chain, MinerKind, NodeId, SimTime};
use crate::net::NetworkModel;
use crate::scenario::Checker;
use crate::trace::{Payload, RecordKind, Trace};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

/// Absorbs float noise in delivery times.
const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// Everything up to the last checkpoint.
    Fin,
    /// The held chain minus its last k′ blocks.
    Ada,
}

fn violation(
    checker: Checker,
    time: SimTime,
    seq: u64,
    node: Option<NodeId>,
    detail: String,
    witness: Witness,
) -> Violation {
    Violation { checker, time, seq, node, detail, witness }
}

/// Honest tip changes in trace order: `(time, seq, node, tip)`.
fn adoptions(ix: &TraceIndex) -> Vec<(SimTime, u64, NodeId, BlockId)> {
    let mut out: Vec<_> = ix
        .honest
        .iter()
        .flat_map(|&n| ix.tips[n.0 as usize].iter().skip(1).map(move |&(t, s, tip)| (t, s, n, tip)))
        .collect();
    out.sort_by_key(|a| a.1);
    out
}

/// k-common prefix: for honest chains C1 held at t1 and C2 held at t2 ≥ t1,
/// C1 minus its last k blocks is a prefix of C2. Only chains held at or
/// after `from` by online nodes take part. A node waking up is judged on
/// the chain it holds once the wake-up instant's deliveries have landed.
///
/// Keeps the deepest anchors seen so far; every new tip is checked against
/// them and every new anchor against every tip currently held. Reports each
/// offending `(node, tip)` once.
pub fn check_common_prefix(ix: &TraceIndex, k: u64, from: SimTime) -> Vec<Violation> {
    enum Ev {
        Adopt(BlockId),
        Up,
        Down,
    }
    let mut events: Vec<(SimTime, u64, NodeId, Ev)> =
        adoptions(ix).into_iter().map(|(t, s, n, tip)| (t, s, n, Ev::Adopt(tip))).collect();
    for r in &ix.trace.records {
        let Some(n) = r.node.filter(|&n| ix.is_honest(n)) else { continue };
        match r.kind {
            RecordKind::Online => events.push((r.time, r.seq, n, Ev::Up)),
            RecordKind::Offline => events.push((r.time, r.seq, n, Ev::Down)),
            _ => {}
        }
    }
    events.sort_by_key(|e| e.1);
    let mut scan =
        PrefixScan { ix, k, held: BTreeMap::new(), anchors: Vec::new(), seen: HashSet::new(), out: Vec::new() };
    let mut chain: BTreeMap<NodeId, BlockId> = ix.honest.iter().map(|&n| (n, BlockId::GENESIS)).collect();
    let mut online: BTreeSet<NodeId> = ix.honest.iter().copied().collect();
    // Nodes that woke at `waking.0` and rejoin once time moves past it.
    let mut waking: (SimTime, Vec<NodeId>) = (f64::NEG_INFINITY, Vec::new());
    let mut started = false;
    for (time, seq, n, ev) in events {
        if time > waking.0 && !waking.1.is_empty() {
            for w in std::mem::take(&mut waking.1) {
                if started && online.contains(&w) {
                    scan.adopt(w, chain[&w], waking.0, seq);
                }
            }
        }
        if !started && time >= from {
            started = true;
            let current: Vec<NodeId> = online.iter().copied().filter(|o| !waking.1.contains(o)).collect();
            for o in current {
                scan.adopt(o, chain[&o], from, seq);
            }
        }
        match ev {
            Ev::Adopt(tip) => {
                chain.insert(n, tip);
                let asleep = !online.contains(&n) || waking.1.contains(&n);
                if started && !asleep {
                    scan.adopt(n, tip, time, seq);
                }
            }
            Ev::Down => {
                online.remove(&n);
                scan.held.remove(&n);
            }
            Ev::Up => {
                online.insert(n);
                if waking.0 != time {
                    waking = (time, Vec::new());
                }
                waking.1.push(n);
            }
        }
    }
    let last_seq = ix.trace.records.last().map_or(0, |r| r.seq);
    if !started && from <= ix.end {
        started = true;
        for o in online.clone() {
            scan.adopt(o, chain[&o], from, last_seq);
        }
    }
    if started {
        for w in waking.1 {
            if online.contains(&w) {
                scan.adopt(w, chain[&w], waking.0, last_seq);
            }
        }
    }
    scan.out
}

struct PrefixScan<'a, 'b> {
    ix: &'a TraceIndex<'b>,
    k: u64,
    held: BTreeMap<NodeId, BlockId>,
    /// Deepest anchors so far; more than one only after a fork.
    anchors: Vec<BlockId>,
    seen: HashSet<(NodeId, BlockId)>,
    out: Vec<Violation>,
}

impl PrefixScan<'_, '_> {
    fn report(&mut self, node: NodeId, tip: BlockId, anchor: BlockId, time: SimTime, seq: u64) {
        if self.seen.insert((node, tip)) {
            let detail = format!("{anchor} was {}-deep in an honest chain but is not in {tip}", self.k);
            let w = Witness::Prefix { anchor, tip };
            self.out.push(violation(Checker::CommonPrefix, time, seq, Some(node), detail, w));
        }
    }

    fn adopt(&mut self, n: NodeId, tip: BlockId, time: SimTime, seq: u64) {
        let ix = self.ix;
        for a in self.anchors.clone() {
            if !ix.descends(a, tip) {
                self.report(n, tip, a, time, seq);
            }
        }
        self.held.insert(n, tip);
        let a = ix.tree.drop_last(Chain::new(tip), self.k).tip;
        if self.anchors.iter().any(|&m| ix.descends(a, m)) {
            return;
        }
        self.anchors.retain(|&m| !ix.descends(m, a));
        self.anchors.push(a);
        let others: Vec<(NodeId, BlockId)> =
            self.held.iter().filter(|(&o, &t)| o != n && !ix.descends(a, t)).map(|(&o, &t)| (o, t)).collect();
        for (o, t) in others {
            self.report(o, t, a, time, seq);
        }
    }
}

/// (k, s)-chain quality: every run of k consecutive blocks mined after `s`
/// in an adopted honest chain contains an honest block. Reports each
/// offending `(node, tip)` once.
pub fn check_chain_quality(ix: &TraceIndex, k: u64, s: SimTime) -> Vec<Violation> {
    let n = ix.honest_depth.len();
    // Longest adversarial run (post-s) ending at, and anywhere up to, each block.
    let mut run = vec![0u64; n];
    let mut worst = vec![(0u64, BlockId::GENESIS); n];
    for b in ix.tree.blocks() {
        if b.id.is_genesis() {
            continue;
        }
        let (i, p) = (b.id.0 as usize, b.parent.0 as usize);
        run[i] = if b.miner_kind == MinerKind::Adversarial && b.mine_time > s { run[p] + 1 } else { 0 };
        worst[i] = if run[i] > worst[p].0 { (run[i], b.id) } else { worst[p] };
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    for (time, seq, node, tip) in adoptions(ix) {
        let (len, end) = worst[tip.0 as usize];
        if len >= k && seen.insert((node, tip)) {
            let mut blocks = Vec::with_capacity(k as usize);
            let mut cur = end;
            for _ in 0..k {
                blocks.push(cur);
                cur = ix.tree.get(cur).map_or(BlockId::GENESIS, |b| b.parent);
            }
            blocks.reverse();
            let detail = format!("chain {tip} holds {len} consecutive adversarial blocks");
            out.push(violation(Checker::ChainQuality, time, seq, Some(node), detail, Witness::Quality { tip, blocks }));
        }
    }
    out
}

/// Per honest node, the confirmed chain only ever grows.
pub fn check_rule_safety(ix: &TraceIndex, rule: Rule) -> Vec<Violation> {
    let checker = match rule {
        Rule::Fin => Checker::FinSafety,
        Rule::Ada => Checker::AdaSafety,
    };
    let mut last: HashMap<NodeId, BlockId> = HashMap::new();
    let mut out = Vec::new();
    for r in &ix.trace.records {
        let (RecordKind::ConfirmSetChange { fin, ada }, Some(n)) = (&r.kind, r.node) else { continue };
        if !ix.is_honest(n) {
            continue;
        }
        let new = match rule {
            Rule::Fin => *fin,
            Rule::Ada => *ada,
        };
        let old = last.insert(n, new).unwrap_or(BlockId::GENESIS);
        if !ix.descends(old, new) {
            let detail = format!("confirmed chain moved from {old} to {new}");
            out.push(violation(checker, r.time, r.seq, Some(n), detail, Witness::Confirmed { old, new }));
        }
    }
    out
}

/// At every honest confirmation change, the fin-confirmed chain is a prefix
/// of the ada-confirmed one.
pub fn check_nesting(ix: &TraceIndex) -> Vec<Violation> {
    let mut out = Vec::new();
    for r in &ix.trace.records {
        let (RecordKind::ConfirmSetChange { fin, ada }, Some(n)) = (&r.kind, r.node) else { continue };
        if ix.is_honest(n) && !ix.descends(*fin, *ada) {
            let detail = format!("fin-confirmed {fin} is not in ada-confirmed {ada}");
            out.push(violation(
                Checker::Nesting,
                r.time,
                r.seq,
                Some(n),
                detail,
                Witness::Nesting { fin: *fin, ada: *ada },
            ));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LivenessWindow {
    pub node: NodeId,
    pub from: SimTime,
    pub to: SimTime,
    pub confirmed: u64,
    pub required: u64,
    /// c(s−r) − c′ − confirmed; the window fails once this reaches 1.
    pub deficit: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Liveness {
    pub live: bool,
    pub worst: Option<LivenessWindow>,
}

/// Over every window [r, s] with `from` ≤ r ≤ s ≤ horizon, each honest node
/// online throughout gains at least ⌊c(s−r) − c′⌋ confirmed honest blocks.
///
/// The confirmed honest count is a step function, so only windows opening
/// just after a step (or at `from`) and closing just before one (or at the
/// horizon) matter. Assumes the rule is safe; reorgs are the safety
/// checker's business.
pub fn check_rule_liveness(ix: &TraceIndex, rule: Rule, c: f64, c_prime: f64, from: SimTime) -> Liveness {
    let horizon = ix.cfg.horizon();
    if c <= 0.0 || from >= horizon {
        return Liveness { live: true, worst: None };
    }
    let mut steps: BTreeMap<NodeId, Vec<(SimTime, u64)>> = BTreeMap::new();
    for r in &ix.trace.records {
        let (RecordKind::ConfirmSetChange { fin, ada }, Some(n)) = (&r.kind, r.node) else { continue };
        let b = match rule {
            Rule::Fin => *fin,
            Rule::Ada => *ada,
        };
        steps.entry(n).or_default().push((r.time, ix.honest_depth[b.0 as usize]));
    }
    let mut worst: Option<LivenessWindow> = None;
    for &n in &ix.honest {
        if !ix.online_throughout(n, from, horizon) {
            continue;
        }
        let st = steps.remove(&n).unwrap_or_default();
        let mut value = 0u64;
        let mut i = 0;
        while i < st.len() && st[i].0 <= from {
            value = st[i].1;
            i += 1;
        }
        // Minimum of c·r − f(r) over the window openings seen so far.
        let mut best_open = (c * from - value as f64, from, value);
        let consider = |s: SimTime, fs: u64, open: (f64, SimTime, u64), worst: &mut Option<LivenessWindow>| {
            let deficit = (c * s - fs as f64) - open.0 - c_prime;
            if worst.is_none_or(|w| deficit > w.deficit) {
                let required = (c * (s - open.1) - c_prime).floor().max(0.0) as u64;
                *worst = Some(LivenessWindow {
                    node: n,
                    from: open.1,
                    to: s,
                    confirmed: fs.saturating_sub(open.2),
                    required,
                    deficit,
                });
            }
        };
        for &(t, v) in &st[i..] {
            if t > horizon {
                break;
            }
            consider(t, value, best_open, &mut worst);
            value = v;
            let open = c * t - v as f64;
            if open < best_open.0 {
                best_open = (open, t, v);
            }
        }
        consider(horizon, value, best_open, &mut worst);
    }
    Liveness { live: worst.is_none_or(|w| w.deficit < 1.0), worst }
}

/// CP0 and P1: honest checkpointers agree on every iteration's output,
/// certificates are well formed, each checkpoint extends the previous one,
/// and no two values gather a cert-vote quorum in one period.
pub fn check_cp0(ix: &TraceIndex) -> Vec<Violation> {
    let quorum = ix.cfg.quorum();
    let mut out = Vec::new();
    let mut outputs: BTreeMap<u64, (Value, BlockId, NodeId)> = BTreeMap::new();
    let mut marks: BTreeMap<u64, BlockId> = BTreeMap::new();
    let mut per_node: HashMap<NodeId, BlockId> = HashMap::new();
    let mut cert_votes: BTreeMap<(u64, u64), BTreeMap<Value, BTreeSet<NodeId>>> = BTreeMap::new();
    let mut flagged: HashSet<(u64, u64)> = HashSet::new();
    for r in &ix.trace.records {
        match &r.kind {
            RecordKind::IterationHalt { iteration, value, checkpoint, .. } => {
                let Some(n) = r.node.filter(|n| ix.is_honest(*n)) else { continue };
                let first = *outputs.entry(*iteration).or_insert((*value, *checkpoint, n));
                if first.0 != *value || first.1 != *checkpoint {
                    let detail =
                        format!("iteration {iteration}: {n} output {checkpoint}, {} output {}", first.2, first.1);
                    let w = Witness::Blocks { blocks: vec![first.1, *checkpoint] };
                    out.push(violation(Checker::Cp0, r.time, r.seq, Some(n), detail, w));
                }
            }
            RecordKind::CheckpointMark { iteration, block } => {
                let Some(n) = r.node.filter(|n| ix.is_honest(*n)) else { continue };
                let first = *marks.entry(*iteration).or_insert(*block);
                if first != *block {
                    let detail = format!("iteration {iteration}: {n} marked {block}, others marked {first}");
                    out.push(violation(
                        Checker::Cp0,
                        r.time,
                        r.seq,
                        Some(n),
                        detail,
                        Witness::Blocks { blocks: vec![first, *block] },
                    ));
                }
                let prev = per_node.insert(n, *block).unwrap_or(BlockId::GENESIS);
                if !ix.descends(prev, *block) {
                    let detail = format!("checkpoint {block} of iteration {iteration} does not extend {prev}");
                    out.push(violation(
                        Checker::Cp0,
                        r.time,
                        r.seq,
                        Some(n),
                        detail,
                        Witness::Blocks { blocks: vec![prev, *block] },
                    ));
                }
            }
            RecordKind::NodeError { error } if error.contains("does not extend checkpoint") => {
                let detail = format!("node rejected a checkpoint: {error}");
                out.push(violation(
                    Checker::Cp0,
                    r.time,
                    r.seq,
                    r.node,
                    detail,
                    Witness::Blocks { blocks: Vec::new() },
                ));
            }
            RecordKind::MessageSent { msg, payload, .. } => match payload {
                Payload::Certificate { certificate } => {
                    if let Err(e) = certificate.verify(quorum) {
                        let detail = format!("malformed certificate for iteration {}: {e}", certificate.iteration);
                        out.push(violation(
                            Checker::Cp0,
                            r.time,
                            r.seq,
                            r.node,
                            detail,
                            Witness::Message { msg: *msg },
                        ));
                    }
                }
                Payload::Vote { vote } if vote.kind == VoteKind::Cert => {
                    let key = (vote.iteration, vote.period);
                    let by_value = cert_votes.entry(key).or_default();
                    by_value.entry(vote.value).or_default().insert(vote.voter);
                    let full: Vec<Value> =
                        by_value.iter().filter(|(_, s)| s.len() >= quorum).map(|(v, _)| *v).collect();
                    if full.len() > 1 && flagged.insert(key) {
                        let detail = format!("iteration {} period {}: cert quorums for {full:?}", key.0, key.1);
                        let w = Witness::Iteration { iteration: key.0, period: key.1 };
                        out.push(violation(Checker::Cp0, r.time, r.seq, None, detail, w));
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }
    // Consecutive agreed checkpoints form a chain.
    let mut prev = BlockId::GENESIS;
    for (&i, &b) in &marks {
        if !ix.descends(prev, b) {
            let detail = format!("checkpoint {b} of iteration {i} does not extend {prev}");
            out.push(violation(Checker::Cp0, ix.end, 0, None, detail, Witness::Blocks { blocks: vec![prev, b] }));
        }
        prev = b;
    }
    out
}

/// Honest messages reach online honest recipients by the model's deadline;
/// deliveries deferred by an outage land exactly when the node returns.
pub fn check_delivery_bound(ix: &TraceIndex) -> Vec<Violation> {
    let cfg = ix.cfg;
    let net = NetworkModel::new(
        cfg.network.mode,
        cfg.delta,
        cfg.gst(),
        cfg.network.latency,
        cfg.network.pre_gst.clone(),
        ix.trace.header.roster.len(),
    );
    let mut sent: HashMap<u64, (SimTime, bool)> = HashMap::new();
    let mut last_online: HashMap<NodeId, SimTime> = HashMap::new();
    let mut out = Vec::new();
    for r in &ix.trace.records {
        match &r.kind {
            RecordKind::MessageSent { msg, adversarial, from, .. } => {
                let honest_sender = !*adversarial && ix.is_honest(*from);
                sent.insert(*msg, (r.time, honest_sender));
            }
            RecordKind::Online => {
                if let Some(n) = r.node {
                    last_online.insert(n, r.time);
                }
            }
            RecordKind::Delivery { msg, sent: at, deferred } => {
                let n = r.node;
                let Some(&(t, honest_sender)) = sent.get(msg) else {
                    let detail = format!("delivery of unknown message {msg}");
                    out.push(violation(
                        Checker::DeliveryBound,
                        r.time,
                        r.seq,
                        n,
                        detail,
                        Witness::Message { msg: *msg },
                    ));
                    continue;
                };
                if (t - at).abs() > TIME_EPS || r.time + TIME_EPS < t {
                    let detail = format!("message {msg} sent at {t} delivered at {} claiming {at}", r.time);
                    out.push(violation(
                        Checker::DeliveryBound,
                        r.time,
                        r.seq,
                        n,
                        detail,
                        Witness::Message { msg: *msg },
                    ));
                    continue;
                }
                if *deferred {
                    let back = n.and_then(|n| last_online.get(&n)).copied();
                    if back != Some(r.time) {
                        let detail = format!("deferred delivery of {msg} outside a reconnection");
                        out.push(violation(
                            Checker::DeliveryBound,
                            r.time,
                            r.seq,
                            n,
                            detail,
                            Witness::Message { msg: *msg },
                        ));
                    }
                    continue;
                }
                if honest_sender && r.time > net.deadline(t) + TIME_EPS {
                    let detail =
                        format!("message {msg} sent at {t} landed at {}, deadline {}", r.time, net.deadline(t));
                    out.push(violation(
                        Checker::DeliveryBound,
                        r.time,
                        r.seq,
                        n,
                        detail,
                        Witness::Message { msg: *msg },
                    ));
                }
            }
            _ => {}
        }
    }
    out
}

/// The adversary only speaks for byzantine checkpointers, mines at most one
/// block per adversarial opportunity, and honest blocks match the miner the
/// oracle picked.
pub fn check_capability(ix: &TraceIndex) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut report = |r: &crate::trace::TraceRecord, detail: String, w: Witness| {
        out.push(violation(Checker::Capability, r.time, r.seq, r.node, detail, w));
    };
    let mut adv_unused: Option<SimTime> = None;
    let mut honest_assigned: Option<(SimTime, NodeId)> = None;
    for r in &ix.trace.records {
        match &r.kind {
            RecordKind::MiningOpportunity { miner_kind: MinerKind::Adversarial, .. } => adv_unused = Some(r.time),
            RecordKind::MiningOpportunity { miner_kind: MinerKind::Honest, assigned } => {
                honest_assigned = assigned.map(|a| (r.time, a));
            }
            RecordKind::BlockMined { block, miner_kind: MinerKind::Adversarial, .. } => {
                if adv_unused.take() != Some(r.time) {
                    report(
                        r,
                        format!("adversarial block {block} without a fresh opportunity"),
                        Witness::Blocks { blocks: vec![*block] },
                    );
                }
            }
            RecordKind::BlockMined { block, miner_kind: MinerKind::Honest, .. } => {
                let ok = match (honest_assigned.take(), r.node) {
                    (Some((t, a)), Some(n)) => t == r.time && a == n && ix.is_honest(n),
                    _ => false,
                };
                if !ok {
                    report(
                        r,
                        format!("honest block {block} not backed by an opportunity"),
                        Witness::Blocks { blocks: vec![*block] },
                    );
                }
            }
            RecordKind::MessageSent { msg, from, adversarial, payload } => {
                let speaker = match payload {
                    Payload::Vote { vote } => Some(vote.voter),
                    Payload::Proposal { proposal } => Some(proposal.proposer),
                    _ => None,
                };
                let w = Witness::Message { msg: *msg };
                if *adversarial {
                    if *from != NodeId::ADVERSARY && !ix.is_byzantine(*from) {
                        report(r, format!("adversarial message {msg} claims honest sender {from}"), w.clone());
                    }
                    if let Some(s) = speaker.filter(|s| !ix.is_byzantine(*s)) {
                        report(r, format!("adversarial message {msg} speaks for {s}"), w);
                    }
                } else {
                    if !ix.is_honest(*from) {
                        report(r, format!("honest message {msg} from non-honest {from}"), w.clone());
                    }
                    // Relayed adversarial votes keep their byzantine signer.
                    if let Some(s) = speaker.filter(|s| *s != *from && !ix.is_byzantine(*s)) {
                        report(r, format!("message {msg} from {from} speaks for honest {s}"), w);
                    }
                }
            }
            RecordKind::VoteCast { vote, by_adversary } => {
                let ok = if *by_adversary {
                    ix.is_byzantine(vote.voter)
                } else {
                    r.node == Some(vote.voter) && ix.is_honest(vote.voter)
                };
                if !ok {
                    report(
                        r,
                        format!("vote cast for {} by the wrong party", vote.voter),
                        Witness::Votes { votes: vec![*vote] },
                    );
                }
            }
            _ => {}
        }
    }
    out
}

/// No honest voter casts two soft-votes or two cert-votes in one period.
pub fn check_vote_multiplicity(ix: &TraceIndex) -> Vec<Violation> {
    let mut seen: HashMap<(NodeId, u64, u64, VoteKind), Vote> = HashMap::new();
    let mut out = Vec::new();
    for r in &ix.trace.records {
        let RecordKind::VoteCast { vote, by_adversary: false } = &r.kind else { continue };
        if vote.kind == VoteKind::Next {
            continue;
        }
        if let Some(prev) = seen.insert((vote.voter, vote.iteration, vote.period, vote.kind), *vote) {
            let detail = format!(
                "{} voted {:?} twice in iteration {} period {}",
                vote.voter, vote.kind, vote.iteration, vote.period
            );
            out.push(violation(
                Checker::VoteMultiplicity,
                r.time,
                r.seq,
                r.node,
                detail,
                Witness::Votes { votes: vec![prev, *vote] },
            ));
        }
    }
    out
}

/// At most two values gather a next-vote quorum in any period, and when two
/// do, one of them is ⊥.
pub fn check_next_quorum_structure(ix: &TraceIndex) -> Vec<Violation> {
    let quorum = ix.cfg.quorum();
    let mut next: BTreeMap<(u64, u64), BTreeMap<Value, BTreeSet<NodeId>>> = BTreeMap::new();
    let mut flagged = HashSet::new();
    let mut out = Vec::new();
    for r in &ix.trace.records {
        let RecordKind::MessageSent { payload: Payload::Vote { vote }, .. } = &r.kind else { continue };
        if vote.kind != VoteKind::Next {
            continue;
        }
        let key = (vote.iteration, vote.period);
        let by_value = next.entry(key).or_default();
        by_value.entry(vote.value).or_default().insert(vote.voter);
        let full: Vec<Value> = by_value.iter().filter(|(_, s)| s.len() >= quorum).map(|(v, _)| *v).collect();
        let bad = full.len() > 2 || (full.len() == 2 && !full.contains(&Value::Bottom));
        if bad && flagged.insert(key) {
            let detail = format!("iteration {} period {}: next-vote quorums for {full:?}", key.0, key.1);
            let w = Witness::Iteration { iteration: key.0, period: key.1 };
            out.push(violation(Checker::NextQuorumStructure, r.time, r.seq, None, detail, w));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default)]
struct BaView {
    iteration: u64,
    period: u64,
    running: bool,
}

/// Deadlock freedom, replayed from each honest checkpointer's point of view:
/// whenever its next-votes for the current iteration hold a quorum at a
/// period at or above its own, it moves on (or halts) at that instant. With
/// a flush window, every honest checkpointer also makes progress after the
/// horizon.
pub fn check_deadlock_freedom(ix: &TraceIndex) -> Vec<Violation> {
    let quorum = ix.cfg.quorum();
    let mut votes: HashMap<u64, Option<Vote>> = HashMap::new();
    let mut books: HashMap<NodeId, BTreeMap<(u64, u64, Value), BTreeSet<NodeId>>> = HashMap::new();
    let mut state: HashMap<NodeId, BaView> = HashMap::new();
    // Node -> (time, seq, iteration, period) owed an advance at that instant.
    let mut owed: BTreeMap<NodeId, (SimTime, u64, u64, u64)> = BTreeMap::new();
    let mut out = Vec::new();

    let is_ckpt = |n: NodeId| ix.honest_checkpointers.contains(&n);
    let highest = |book: &BTreeMap<(u64, u64, Value), BTreeSet<NodeId>>, i: u64| -> Option<u64> {
        book.range((i, 0, Value::Bottom)..(i + 1, 0, Value::Bottom))
            .filter(|(_, s)| s.len() >= quorum)
            .map(|((_, p, _), _)| *p)
            .max()
    };
    let settle = |now: SimTime, owed: &mut BTreeMap<NodeId, (SimTime, u64, u64, u64)>, out: &mut Vec<Violation>| {
        let due: Vec<NodeId> = owed.iter().filter(|(_, o)| o.0 < now).map(|(n, _)| *n).collect();
        for n in due {
            let (t, seq, i, p) = owed.remove(&n).expect("listed");
            let detail = format!("{n} held a next-vote quorum for period {p} of iteration {i} but did not advance");
            out.push(violation(
                Checker::DeadlockFreedom,
                t,
                seq,
                Some(n),
                detail,
                Witness::Iteration { iteration: i, period: p },
            ));
        }
    };

    for r in &ix.trace.records {
        settle(r.time, &mut owed, &mut out);
        let mut added: Option<(NodeId, Vote)> = None;
        match &r.kind {
            RecordKind::MessageSent { msg, payload, .. } => {
                let v = match payload {
                    Payload::Vote { vote } if vote.kind == VoteKind::Next => Some(*vote),
                    _ => None,
                };
                votes.insert(*msg, v);
            }
            RecordKind::Delivery { msg, .. } => {
                if let (Some(n), Some(Some(v))) = (r.node, votes.get(msg)) {
                    if is_ckpt(n) {
                        added = Some((n, *v));
                    }
                }
            }
            RecordKind::VoteCast { vote, by_adversary: false } if vote.kind == VoteKind::Next => {
                added = Some((vote.voter, *vote));
            }
            RecordKind::IterationStart { iteration } => {
                if let Some(n) = r.node {
                    let s = state.entry(n).or_default();
                    *s = BaView { iteration: *iteration, period: 0, running: true };
                }
            }
            RecordKind::PeriodStart { iteration, period, .. } => {
                if let Some(n) = r.node {
                    state.insert(n, BaView { iteration: *iteration, period: *period, running: true });
                    if owed.get(&n).is_some_and(|o| o.2 == *iteration && o.3 < *period) {
                        owed.remove(&n);
                    }
                }
            }
            RecordKind::IterationHalt { iteration, .. } => {
                if let Some(n) = r.node {
                    state.insert(n, BaView { iteration: *iteration, period: 0, running: false });
                    if owed.get(&n).is_some_and(|o| o.2 <= *iteration) {
                        owed.remove(&n);
                    }
                }
            }
            _ => {}
        }
        let node = match (&r.kind, added) {
            (_, Some((n, v))) => {
                books.entry(n).or_default().entry((v.iteration, v.period, v.value)).or_default().insert(v.voter);
                Some(n)
            }
            // A period may begin with a quorum already in the book.
            (RecordKind::PeriodStart { .. }, None) => r.node,
            _ => None,
        };
        let Some(n) = node.filter(|n| is_ckpt(*n)) else { continue };
        let s = state.get(&n).copied().unwrap_or_default();
        if !s.running || s.period == 0 {
            continue;
        }
        let book = books.entry(n).or_default();
        if let Some(p) = highest(book, s.iteration).filter(|&p| p >= s.period) {
            owed.entry(n).or_insert((r.time, r.seq, s.iteration, p));
        }
        // Older iterations are never consulted again.
        if book.first_key_value().is_some_and(|((i, _, _), _)| *i + 1 < s.iteration) {
            book.retain(|(i, _, _), _| *i + 1 >= s.iteration);
        }
    }
    settle(f64::INFINITY, &mut owed, &mut out);

    if let Some(flush) = ix.cfg.flush {
        let horizon = ix.cfg.horizon();
        let needs_halt = flush >= ix.cfg.e() + 20.0 * ix.cfg.delta;
        for &n in &ix.honest_checkpointers {
            let progressed = ix.trace.records.iter().any(|r| {
                r.node == Some(n)
                    && r.time >= horizon
                    && match r.kind {
                        RecordKind::IterationHalt { .. } => true,
                        RecordKind::PeriodStart { .. } | RecordKind::IterationStart { .. } => !needs_halt,
                        _ => false,
                    }
            });
            if !progressed {
                let detail = format!("{n} made no progress during the flush window");
                out.push(violation(
                    Checker::DeadlockFreedom,
                    ix.end,
                    0,
                    Some(n),
                    detail,
                    Witness::Iteration { iteration: 0, period: 0 },
                ));
            }
        }
    }
    out
}

/// How an ada-safety violation lines up with the common-prefix checker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AdaMismatch {
    /// No common-prefix witness for the node's new chain.
    Unmatched(Violation),
}

/// Cross-checks ada-safety against common prefix at depth k′: every ada
/// violation must come with a common-prefix witness naming the same node
/// and the chain it switched to, unless the node's chain merely got shorter
/// (the old confirmed tip is still on the new chain).
///
/// Returns the ada violations, the shortening-only count and any mismatches.
pub fn cross_validate_ada(ix: &TraceIndex) -> (Vec<Violation>, usize, Vec<AdaMismatch>) {
    let ada = check_rule_safety(ix, Rule::Ada);
    let prefix = check_common_prefix(ix, ix.cfg.k_prime, 0.0);
    let witnessed: HashSet<(NodeId, BlockId)> = prefix
        .iter()
        .filter_map(|v| match v.witness {
            Witness::Prefix { tip, .. } => v.node.map(|n| (n, tip)),
            _ => None,
        })
        .collect();
    let mut shortening = 0;
    let mut mismatches = Vec::new();
    for v in &ada {
        let Witness::Confirmed { old, .. } = v.witness else { continue };
        let n = v.node.expect("ada violations name a node");
        let tip = tip_at(ix, n, v.seq);
        if ix.descends(old, tip) {
            shortening += 1;
        } else if !witnessed.contains(&(n, tip)) {
            mismatches.push(AdaMismatch::Unmatched(v.clone()));
        }
    }
    (ada, shortening, mismatches)
}

/// Tip `node` held as of record `seq`.
fn tip_at(ix: &TraceIndex, node: NodeId, seq: u64) -> BlockId {
    let h = &ix.tips[node.0 as usize];
    let i = h.partition_point(|&(_, s, _)| s <= seq);
    h[i.saturating_sub(1)].2
}

/// Re-derives a violation from the raw trace: the record it points at must
/// exist and concern the same node, and the witnessed relation must hold in
/// the block tree rebuilt from the trace.
pub fn replay_witness(trace: &Trace, v: &Violation) -> Result<(), String> {
    let ix = TraceIndex::new(trace).map_err(|e| e.to_string())?;
    let rec = trace.records.get(v.seq as usize).ok_or_else(|| format!("no record {}", v.seq))?;
    if rec.seq != v.seq || (v.node.is_some() && !matches!(v.witness, Witness::Prefix { .. }) && rec.node != v.node) {
        return Err(format!("record {} does not concern {:?}", v.seq, v.node));
    }
    let node = v.node.ok_or("witness names no node")?;
    match &v.witness {
        Witness::Confirmed { old, new } => {
            let RecordKind::ConfirmSetChange { fin, ada } = rec.kind else {
                return Err("not a confirmation change".into());
            };
            let now = if v.checker == Checker::FinSafety { fin } else { ada };
            let before = trace.records[..v.seq as usize]
                .iter()
                .rev()
                .find_map(|r| match r.kind {
                    RecordKind::ConfirmSetChange { fin, ada } if r.node == Some(node) => {
                        Some(if v.checker == Checker::FinSafety { fin } else { ada })
                    }
                    _ => None,
                })
                .unwrap_or(BlockId::GENESIS);
            if now != *new || before != *old {
                return Err("confirmed tips differ from the trace".into());
            }
            if ix.descends(*old, *new) {
                return Err("new confirmed chain extends the old one".into());
            }
            Ok(())
        }
        Witness::Prefix { anchor, tip } => {
            if tip_at(&ix, node, v.seq) != *tip {
                return Err(format!("{node} did not hold {tip} at record {}", v.seq));
            }
            let k = ix.cfg.k_prime;
            let earlier = ix.honest.iter().any(|&n| {
                ix.tips[n.0 as usize]
                    .iter()
                    .any(|&(_, s, t)| s <= v.seq && ix.tree.drop_last(Chain::new(t), k).tip == *anchor)
            });
            if !earlier {
                return Err(format!("{anchor} was never {k}-deep in an honest chain"));
            }
            if ix.descends(*anchor, *tip) {
                return Err("anchor is a prefix of the tip".into());
            }
            Ok(())
        }
        Witness::Nesting { fin, ada } => match rec.kind {
            RecordKind::ConfirmSetChange { fin: f, ada: a } if f == *fin && a == *ada && !ix.descends(f, a) => Ok(()),
            _ => Err("nesting witness does not match the trace".into()),
        },
        Witness::Quality { tip, blocks } => {
            let on_chain = blocks.iter().all(|b| ix.descends(*b, *tip));
            let adversarial =
                blocks.iter().all(|b| ix.tree.get(*b).is_some_and(|x| x.miner_kind == MinerKind::Adversarial));
            let consecutive = blocks.windows(2).all(|w| ix.tree.get(w[1]).is_some_and(|b| b.parent == w[0]));
            if on_chain && adversarial && consecutive {
                Ok(())
            } else {
                Err("quality witness does not match the trace".into())
            }
        }
        _ => Ok(()),
    }
}
