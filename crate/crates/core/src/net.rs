//! Discrete-event plumbing: the event queue, delivery delays under the two
//! network models, participation schedules and the mining oracle.

use crate::ba::Step;
use crate::chain::{MinerKind, NodeId, SimTime};
use crate::scenario::{Churn, LatencyModel, NetworkMode, OfflineInterval, PreGstPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Index of a message in the run's message arena.
pub type MsgIdx = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    GoOnline(NodeId),
    Deliver {
        msg: MsgIdx,
        to: NodeId,
    },
    GoOffline(NodeId),
    Mine(MinerKind),
    IterationStart {
        node: NodeId,
        iteration: u64,
    },
    Tick {
        node: NodeId,
        iteration: u64,
        period: u64,
        step: Step,
    },
    /// Strategy-defined wake-up for the adversary.
    AdversaryTimer(u64),
    FlushStart,
}

impl EventKind {
    /// Processing order among events at the same instant: nodes come online
    /// first, then messages land, and clock-driven steps act last.
    fn class(&self) -> u8 {
        match self {
            EventKind::GoOnline(_) => 0,
            EventKind::Deliver { .. } => 1,
            EventKind::GoOffline(_) => 2,
            EventKind::FlushStart => 3,
            EventKind::Mine(_) => 4,
            EventKind::AdversaryTimer(_) => 5,
            EventKind::IterationStart { .. } => 6,
            EventKind::Tick { .. } => 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimEvent {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl SimEvent {
    fn key(&self) -> (SimTime, u8, u64) {
        (self.time, self.kind.class(), self.seq)
    }
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    // Reversed so the std max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2))
    }
}

/// Min-queue ordered by (time, class, insertion sequence).
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: SimTime, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(SimEvent { time, seq, kind });
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Independent RNG stream `stream` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Delivery times for honest traffic.
#[derive(Clone, Debug)]
pub struct NetworkModel {
    pub mode: NetworkMode,
    pub delta: SimTime,
    pub gst: SimTime,
    pub latency: LatencyModel,
    pub pre_gst: PreGstPolicy,
    group_of: Vec<Option<usize>>,
}

impl NetworkModel {
    pub fn new(
        mode: NetworkMode,
        delta: SimTime,
        gst: SimTime,
        latency: LatencyModel,
        pre_gst: PreGstPolicy,
        n_nodes: usize,
    ) -> Self {
        let mut group_of = vec![None; n_nodes];
        if let PreGstPolicy::Partition { groups } = &pre_gst {
            for (g, members) in groups.iter().enumerate() {
                for &m in members {
                    if let Some(slot) = group_of.get_mut(m as usize) {
                        *slot = Some(g);
                    }
                }
            }
        }
        let gst = if mode == NetworkMode::M2 { 0.0 } else { gst };
        NetworkModel { mode, delta, gst, latency, pre_gst, group_of }
    }

    fn normal_latency(&self, rng: &mut impl Rng) -> SimTime {
        match self.latency {
            LatencyModel::Max => self.delta,
            // (0, Δ]: 1 − U[0, 1) never returns zero.
            LatencyModel::Uniform => self.delta * (1.0 - rng.random::<f64>()),
        }
    }

    /// Arrival time of an honest message sent at `sent` from `from` to `to`.
    pub fn arrival(&self, sent: SimTime, from: NodeId, to: NodeId, rng: &mut impl Rng) -> SimTime {
        let normal = sent + self.normal_latency(rng);
        if self.mode == NetworkMode::M2 || sent >= self.gst {
            return normal;
        }
        let deadline = self.gst + self.delta;
        match &self.pre_gst {
            PreGstPolicy::Maximal => deadline,
            PreGstPolicy::Uniform => sent + (deadline - sent) * (1.0 - rng.random::<f64>()),
            PreGstPolicy::Partition { .. } => {
                let same = |n: NodeId| self.group_of.get(n.0 as usize).copied().flatten();
                match (same(from), same(to)) {
                    (Some(a), Some(b)) if a == b => normal.min(deadline),
                    _ => deadline,
                }
            }
        }
    }

    /// Latest admissible arrival for an honest message sent at `sent`.
    pub fn deadline(&self, sent: SimTime) -> SimTime {
        if self.mode == NetworkMode::M2 || sent >= self.gst {
            sent + self.delta
        } else {
            self.gst + self.delta
        }
    }
}

/// Per-node online intervals, precomputed for the whole run.
#[derive(Clone, Debug)]
pub struct ParticipationSchedule {
    /// Sorted, disjoint `[from, to)` intervals per node.
    online: Vec<Vec<(SimTime, SimTime)>>,
}

impl ParticipationSchedule {
    /// Everyone online for the whole run.
    pub fn always(n_nodes: usize) -> Self {
        ParticipationSchedule { online: vec![vec![(0.0, f64::INFINITY)]; n_nodes] }
    }

    /// Builds a U2 schedule: `churners` alternate online/offline with
    /// exponential sojourns while at least `floor` of them stay online;
    /// explicit `offline` intervals are carved out afterwards.
    pub fn with_churn(
        n_nodes: usize,
        churners: &[NodeId],
        churn: Option<&Churn>,
        offline: &[OfflineInterval],
        horizon: SimTime,
        rng: &mut impl Rng,
    ) -> Self {
        let mut sched = Self::always(n_nodes);
        if let Some(c) = churn {
            sched.churn(churners, c, horizon, rng);
        }
        for o in offline {
            sched.carve(NodeId(o.node), o.from, o.until());
        }
        sched
    }

    fn churn(&mut self, churners: &[NodeId], c: &Churn, horizon: SimTime, rng: &mut impl Rng) {
        let on = Exp::new(1.0 / c.mean_online).expect("positive mean");
        let off = Exp::new(1.0 / c.mean_offline).expect("positive mean");
        let floor = (c.online_floor * churners.len() as f64).ceil() as usize;
        let n = churners.len();
        let mut online = vec![true; n];
        let mut next: Vec<SimTime> = (0..n).map(|_| on.sample(rng)).collect();
        let mut since = vec![0.0; n];
        let mut intervals: Vec<Vec<(SimTime, SimTime)>> = vec![Vec::new(); n];
        let mut count = n;
        loop {
            let (i, &t) = match next.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)) {
                Some(x) => x,
                None => break,
            };
            if t >= horizon {
                break;
            }
            if online[i] {
                if count > floor {
                    intervals[i].push((since[i], t));
                    online[i] = false;
                    count -= 1;
                    next[i] = t + off.sample(rng);
                } else {
                    // Going offline would break the floor; stay for another sojourn.
                    next[i] = t + on.sample(rng);
                }
            } else {
                online[i] = true;
                count += 1;
                since[i] = t;
                next[i] = t + on.sample(rng);
            }
        }
        for i in 0..n {
            if online[i] {
                intervals[i].push((since[i], f64::INFINITY));
            }
            self.online[churners[i].0 as usize] = std::mem::take(&mut intervals[i]);
        }
    }

    fn carve(&mut self, node: NodeId, from: SimTime, to: SimTime) {
        let ivs = &mut self.online[node.0 as usize];
        let mut out = Vec::with_capacity(ivs.len() + 1);
        for &(a, b) in ivs.iter() {
            if b <= from || a >= to {
                out.push((a, b));
                continue;
            }
            if a < from {
                out.push((a, from));
            }
            if b > to {
                out.push((to, b));
            }
        }
        *ivs = out;
    }

    pub fn is_online(&self, node: NodeId, t: SimTime) -> bool {
        let ivs = &self.online[node.0 as usize];
        let i = ivs.partition_point(|&(a, _)| a <= t);
        i > 0 && t < ivs[i - 1].1
    }

    pub fn intervals(&self, node: NodeId) -> &[(SimTime, SimTime)] {
        &self.online[node.0 as usize]
    }

    /// Online/offline transitions after time zero, as (time, node, goes_online).
    pub fn transitions(&self) -> Vec<(SimTime, NodeId, bool)> {
        let mut out = Vec::new();
        for (n, ivs) in self.online.iter().enumerate() {
            let node = NodeId(n as u32);
            if ivs.first().is_none_or(|&(a, _)| a > 0.0) {
                out.push((0.0, node, false));
            }
            for &(a, b) in ivs {
                if a > 0.0 {
                    out.push((a, node, true));
                }
                if b.is_finite() {
                    out.push((b, node, false));
                }
            }
        }
        out.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        out
    }
}

/// Two independent Poisson streams of mining opportunities.
#[derive(Debug)]
pub struct MiningOracle {
    honest: Option<Exp<f64>>,
    adversarial: Option<Exp<f64>>,
    honest_rng: ChaCha8Rng,
    adversarial_rng: ChaCha8Rng,
}

impl MiningOracle {
    pub fn new(lambda: f64, beta: f64, seed: u64) -> Self {
        let rate = |r: f64| (r > 0.0).then(|| Exp::new(r).expect("positive rate"));
        MiningOracle {
            honest: rate((1.0 - beta) * lambda),
            adversarial: rate(beta * lambda),
            honest_rng: stream_rng(seed, 1),
            adversarial_rng: stream_rng(seed, 2),
        }
    }

    /// Time of the next opportunity of `kind` after `now`, if that stream exists.
    pub fn next_after(&mut self, kind: MinerKind, now: SimTime) -> Option<SimTime> {
        match kind {
            MinerKind::Honest => self.honest.map(|d| now + d.sample(&mut self.honest_rng)),
            MinerKind::Adversarial => self.adversarial.map(|d| now + d.sample(&mut self.adversarial_rng)),
        }
    }

    /// Every opportunity of both streams on `(0, horizon]`, merged in time order.
    pub fn sample_schedule(&mut self, horizon: SimTime) -> Vec<(SimTime, MinerKind)> {
        let mut out = Vec::new();
        for kind in [MinerKind::Honest, MinerKind::Adversarial] {
            let mut t = 0.0;
            while let Some(next) = self.next_after(kind, t) {
                if next > horizon {
                    break;
                }
                out.push((next, kind));
                t = next;
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }
}
