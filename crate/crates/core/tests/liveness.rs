use defl_core::adversary::{AttackKind, AttackSpec};
use defl_core::aggregation::AggregationRule;
use defl_core::consensus::cluster::{run_cluster, ClusterSpec};
use defl_core::consensus::leader_of;
use defl_core::harness::{base_quadratic, run_seed};
use defl_core::model::{NodeId, RoundId, Transaction};
use defl_core::rng::stream_rng;
use defl_core::simnet::DelayModel;
use rand::Rng;

/// Latest commit of any pre-GST transaction, relative to GST, or `None` if
/// one never commits at some honest replica.
fn worst_commit_after_gst(n: usize, f: usize, seed: u64, view_timeout: u64) -> Option<u64> {
    let delta = 10;
    let gst = 10 * delta;
    let mut spec = ClusterSpec::new(n, f, seed);
    spec.view_timeout = view_timeout;
    spec.delay = DelayModel { delta, gst, pre_gst_max: 8 * delta, drop_before_gst: 0.0, jitter: true };
    let crashed = leader_of(1, n);
    spec.crashed.insert(crashed);
    let live: Vec<NodeId> = (0..n as u32).map(NodeId).filter(|id| *id != crashed).collect();
    let mut rng = stream_rng(seed, 7);
    spec.txs = (0..8)
        .map(|i| {
            let who = live[rng.random_range(0..live.len())];
            (rng.random_range(1..gst), who, Transaction::agg(who, RoundId(i), i))
        })
        .collect();
    let out = run_cluster(&spec);
    assert!(out.prefixes_agree(), "seed {seed}");
    let mut worst = 0;
    for (_, _, tx) in &spec.txs {
        for h in &out.honest {
            let t = *out.commit_times[h.index()].get(&tx.id())?;
            worst = worst.max(t.saturating_sub(gst));
        }
    }
    Some(worst)
}

#[test]
fn crashed_first_leader_commits_within_two_timeouts_after_gst() {
    for (n, f) in [(4, 1), (6, 1), (9, 2)] {
        for seed in 0..30 {
            let worst = worst_commit_after_gst(n, f, seed, 200);
            assert!(worst.is_some_and(|w| w <= 400), "n={n} seed {seed}: {worst:?}");
        }
    }
}

#[test]
fn short_timeouts_still_commit_everything() {
    // Pre-GST delays exceed the timeout, so views fail and back off first.
    for seed in 0..30 {
        assert!(worst_commit_after_gst(6, 1, seed, 50).is_some(), "seed {seed}");
    }
}

#[test]
fn full_system_survives_a_lossy_start() {
    let mut cfg = base_quadratic(6, AggregationRule::MultiKrum);
    cfg.system.f = 1;
    cfg.system.rounds = 5;
    cfg.system.d = 4;
    cfg.task.d = 4;
    cfg.task.train_size = 120;
    cfg.task.test_size = 10;
    cfg.delay = DelayModel { delta: 10, gst: 1500, pre_gst_max: 80, drop_before_gst: 0.3, jitter: true };
    cfg.attack = AttackSpec { crash_round: 1, consensus_crash: true, ..AttackSpec::new(AttackKind::Crash, 0.0, [NodeId(5)]) };
    let mut dropped = 0;
    for seed in 0..10 {
        let run = run_seed(&cfg, seed).unwrap();
        assert_eq!(run.records.len(), 5, "seed {seed}");
        dropped += run.report.dropped_bytes;
    }
    assert!(dropped > 0);
}
