use super::*;

fn scenario(name: &str, overrides: &[&str]) -> ScenarioConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    crate::library::load(name, &o).unwrap()
}

fn count(trace: &Trace, pred: impl Fn(&RecordKind) -> bool) -> usize {
    trace.records.iter().filter(|r| pred(&r.kind)).count()
}

#[test]
fn same_seed_same_bytes() {
    let cfg = scenario("sync-unsized-churn", &["duration=600"]);
    let a = run(&cfg).to_jsonl();
    let b = run(&cfg).to_jsonl();
    assert_eq!(a, b);
    let c = run(&scenario("sync-unsized-churn", &["duration=600", "seed=2"])).to_jsonl();
    assert_ne!(a, c);
}

#[test]
fn zero_duration_is_genesis_and_final_states() {
    let cfg = scenario("synchronous-baseline", &["duration=0"]);
    let tr = run(&cfg);
    assert!(matches!(tr.records[0].kind, RecordKind::Genesis));
    assert_eq!(count(&tr, |k| matches!(k, RecordKind::BlockMined { .. })), 0);
    let finals: Vec<_> = tr
        .records
        .iter()
        .filter_map(|r| match r.kind {
            RecordKind::FinalState { tip, .. } => Some(tip),
            _ => None,
        })
        .collect();
    assert_eq!(finals.len(), 57);
    assert!(finals.iter().all(|t| t.is_genesis()));
}

#[test]
fn roster_orders_roles() {
    let cfg = scenario("synchronous-baseline", &[]);
    let r = roster(&cfg);
    assert_eq!(r.len(), 60);
    assert!(r[..50].iter().all(|&x| x == Role::Miner));
    assert!(r[50..57].iter().all(|&x| x == Role::Checkpointer));
    assert!(r[57..].iter().all(|&x| x == Role::ByzantineCheckpointer));
}

#[test]
fn records_are_time_ordered_with_dense_seq() {
    let tr = run(&scenario("partition-recovery", &["duration=800"]));
    for (i, w) in tr.records.windows(2).enumerate() {
        assert!(w[0].time <= w[1].time, "record {i} goes back in time");
        assert_eq!(w[1].seq, w[0].seq + 1);
    }
}

#[test]
fn honest_deliveries_meet_the_model_deadline() {
    for (name, gst) in [("synchronous-baseline", 0.0), ("partition-recovery", 500.0)] {
        let tr = run(&scenario(name, &["duration=700"]));
        let mut sent: HashMap<u64, (SimTime, bool)> = HashMap::new();
        let mut late_ok = 0;
        for r in &tr.records {
            match &r.kind {
                RecordKind::MessageSent { msg, adversarial, .. } => {
                    sent.insert(*msg, (r.time, *adversarial));
                }
                RecordKind::Delivery { msg, sent: s, deferred: false } => {
                    let (t, adversarial) = sent[msg];
                    assert_eq!(*s, t);
                    if adversarial {
                        continue;
                    }
                    let deadline = if t >= gst { t + 1.0 } else { gst + 1.0 };
                    assert!(r.time <= deadline + 1e-9, "{name}: msg {msg} sent {t} arrived {}", r.time);
                    if r.time > t + 1.0 {
                        late_ok += 1;
                    }
                }
                _ => {}
            }
        }
        // Cross-partition traffic before GST is held to the GST deadline.
        assert_eq!(late_ok > 0, gst > 0.0, "{name}");
    }
}

#[test]
fn mining_follows_the_configured_shares() {
    let tr = run(&scenario("synchronous-baseline", &["duration=20000"]));
    let honest = count(&tr, |k| matches!(k, RecordKind::MiningOpportunity { miner_kind: MinerKind::Honest, .. }));
    let adv = count(&tr, |k| matches!(k, RecordKind::MiningOpportunity { miner_kind: MinerKind::Adversarial, .. }));
    // λ = 0.1 over 20000Δ: 2000 opportunities, 20% adversarial.
    let total = (honest + adv) as f64;
    assert!((total - 2000.0).abs() < 4.0 * 2000f64.sqrt(), "{total}");
    let share = adv as f64 / total;
    assert!((share - 0.2).abs() < 0.03, "{share}");
}

#[test]
fn offline_miners_are_never_assigned() {
    let tr = run(&scenario("sync-unsized-churn", &["duration=1500"]));
    let mut online = vec![true; tr.header.roster.len()];
    for r in &tr.records {
        match (&r.kind, r.node) {
            (RecordKind::Online, Some(n)) => online[n.0 as usize] = true,
            (RecordKind::Offline, Some(n)) => online[n.0 as usize] = false,
            (RecordKind::MiningOpportunity { assigned: Some(n), miner_kind: MinerKind::Honest }, _) => {
                assert!(online[n.0 as usize], "offline miner {n:?} assigned at {}", r.time);
            }
            _ => {}
        }
    }
}

#[test]
fn no_adversarial_blocks_without_a_mining_strategy() {
    let tr = run(&scenario("honest-mining-stats", &["duration=1000", "beta=0.3"]));
    assert!(count(&tr, |k| matches!(k, RecordKind::MiningOpportunity { miner_kind: MinerKind::Adversarial, .. })) > 0);
    assert_eq!(count(&tr, |k| matches!(k, RecordKind::BlockMined { miner_kind: MinerKind::Adversarial, .. })), 0);
}

#[test]
fn honest_checkpointers_agree_in_a_short_run() {
    let tr = run(&scenario("synchronous-baseline", &["duration=1500"]));
    let mut halts: HashMap<u64, BlockId> = HashMap::new();
    let mut n = 0;
    for r in &tr.records {
        if let RecordKind::IterationHalt { iteration, checkpoint, .. } = r.kind {
            n += 1;
            assert_eq!(*halts.entry(iteration).or_insert(checkpoint), checkpoint);
        }
    }
    // e = 320Δ: at least three iterations finish.
    assert!(halts.len() >= 3, "{halts:?}");
    assert_eq!(n % 7, 0, "every honest checkpointer halts each iteration");
}
