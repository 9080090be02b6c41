mod common;

use std::collections::BTreeSet;

use defl_core::adversary::{flip_labels, AttackKind, AttackSpec};
use defl_core::aggregation::AggregationRule;
use defl_core::harness::{base_logistic, base_quadratic, run_seed, ExperimentConfig};
use defl_core::model::{NodeId, Transaction, TxKind};
use defl_core::replica::Response;
use defl_core::rng::stream_rng;
use defl_core::tasks::{iid_partition, init_weights, local_train, LocalTraining, LrSchedule, Task, TaskKind, TaskSpec};

use common::{committed_batches, replay, run_with_nodes};

fn small(n: usize, f: usize, kind: AttackKind) -> ExperimentConfig {
    let mut cfg = base_quadratic(n, AggregationRule::MultiKrum);
    cfg.system.f = f;
    cfg.system.rounds = 8;
    cfg.system.d = 4;
    cfg.task.d = 4;
    cfg.task.train_size = 240;
    cfg.task.test_size = 20;
    cfg.attack = AttackSpec { victims: AttackSpec::top_victims(n, f), ..AttackSpec::new(kind, 0.0, []) };
    cfg
}

#[test]
fn wrong_round_upd_leaves_honest_state_untouched() {
    let cfg = small(6, 1, AttackKind::WrongRoundUpd);
    let victim = NodeId(5);
    let is_victim_upd = |tx: &Transaction| tx.sender() == victim && tx.kind() == TxKind::Upd;
    let mut rejected = 0;
    for seed in 0..8 {
        let (run, sim) = run_with_nodes(&cfg, seed);
        assert_eq!(run.records.len() as u64, cfg.system.rounds, "seed {seed}");
        let batches = committed_batches(&sim.nodes()[0]);
        let (with, responses) = replay(6, 1, &batches, |_| false);
        for (tx, round, resp) in responses.iter().filter(|(tx, _, _)| is_victim_upd(tx)) {
            assert_eq!(*resp, Response::AlreadyUpdError, "seed {seed}: {tx:?} at {round:?}");
            rejected += 1;
        }
        let (without, _) = replay(6, 1, &batches, is_victim_upd);
        assert_eq!(with, without, "seed {seed}");
    }
    assert!(rejected >= 8 * (cfg.system.rounds as usize - 1));
}

#[test]
fn single_early_agg_never_rotates_a_round() {
    let cfg = small(6, 1, AttackKind::EarlyAgg);
    let victim = NodeId(5);
    let mut early_warnings = 0;
    for seed in 0..5 {
        let (run, sim) = run_with_nodes(&cfg, seed);
        assert_eq!(run.records.len() as u64, cfg.system.rounds, "seed {seed}");
        let batches = committed_batches(&sim.nodes()[0]);
        let (_, responses) = replay(6, 1, &batches, |_| false);
        let mut voters = BTreeSet::new();
        for (tx, _, r) in &responses {
            if tx.kind() != TxKind::Agg {
                continue;
            }
            match r {
                Response::NotMeetQuorumWarning => {
                    voters.insert(tx.sender());
                    early_warnings += usize::from(tx.sender() == victim && voters.len() == 1);
                }
                Response::Ok => {
                    voters.insert(tx.sender());
                    assert!(voters.len() >= 2, "seed {seed}: rotation with voters {voters:?}");
                    assert!(voters.iter().any(|v| *v != victim));
                    voters.clear();
                }
                _ => {}
            }
        }
    }
    assert!(early_warnings > 0, "the early vote should land first at least once");
}

#[test]
fn crash_from_round_zero_still_completes() {
    for consensus_crash in [false, true] {
        let mut cfg = small(6, 1, AttackKind::Crash);
        cfg.attack.crash_round = 0;
        cfg.attack.consensus_crash = consensus_crash;
        for seed in 0..3 {
            let (run, sim) = run_with_nodes(&cfg, seed);
            assert_eq!(run.records.len() as u64, cfg.system.rounds);
            let victim_txs = committed_batches(&sim.nodes()[0])
                .iter()
                .flatten()
                .filter(|tx| tx.sender() == NodeId(5))
                .count();
            assert_eq!(victim_txs, 0);
        }
    }
}

#[test]
fn heterogeneous_training_speeds_complete_with_agreement() {
    let mut cfg = small(6, 1, AttackKind::None);
    cfg.attack = AttackSpec::none();
    cfg.train_frac = (0.05, 0.95);
    for seed in 0..5 {
        let run = run_seed(&cfg, seed).unwrap();
        assert_eq!(run.records.len() as u64, cfg.system.rounds);
    }
}

#[test]
fn honest_nodes_compute_identical_aggregates() {
    let mut cfg = base_logistic(4, 1, AggregationRule::MultiKrum);
    cfg.system.rounds = 15;
    cfg.attack = AttackSpec::new(AttackKind::SignFlip, -2.0, [NodeId(3)]);
    for seed in 0..4 {
        let run = run_seed(&cfg, seed).unwrap();
        let reference = &run.aggregates[0];
        assert!(!reference.is_empty());
        for (i, aggs) in run.aggregates.iter().enumerate().filter(|(i, _)| run.honest[*i]) {
            for (round, dg) in aggs {
                if let Some(want) = reference.get(round) {
                    assert_eq!(dg, want, "seed {seed} node {i} round {round}");
                }
            }
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn label_flip_update_opposes_honest_updates() {
    let spec = TaskSpec {
        kind: TaskKind::Logistic,
        d: 20,
        train_size: 1000,
        test_size: 10,
        noise: 0.05,
        scale: 1.0,
    };
    let params = LocalTraining { epochs: 1, batch_size: 50, schedule: LrSchedule::new(1.0) };
    let mut total = 0.0;
    let seeds = 20;
    for seed in 0..seeds {
        let (task, train, _) = Task::generate(&spec, seed);
        let shards = iid_partition(&train, 2, seed).unwrap();
        let w0 = init_weights(20, 0.1, seed);
        let mut rng = stream_rng(seed, 99);
        let mut step = 0;
        let honest = local_train(&task, &w0, &shards[0], &params, &mut step, &mut rng).unwrap();
        let mut step = 0;
        let flipped = local_train(&task, &w0, &flip_labels(&shards[1]), &params, &mut step, &mut rng).unwrap();
        let du: Vec<f64> = honest.as_slice().iter().zip(w0.as_slice()).map(|(a, b)| a - b).collect();
        let dv: Vec<f64> = flipped.as_slice().iter().zip(w0.as_slice()).map(|(a, b)| a - b).collect();
        total += cosine(&du, &dv);
    }
    let mean = total / seeds as f64;
    assert!(mean < 0.0, "mean cosine {mean}");
}

fn byz_selection_rate(alpha: Option<f64>) -> f64 {
    let mut cfg = base_logistic(4, 1, AggregationRule::MultiKrum);
    cfg.partition_alpha = alpha;
    cfg.attack = AttackSpec::new(AttackKind::SignFlip, -2.0, [NodeId(3)]);
    let (mut hits, mut rounds) = (0, 0);
    for seed in 0..10 {
        let run = run_seed(&cfg, seed).unwrap();
        rounds += run.records.len();
        hits += run.records.iter().filter(|r| r.byz_selected > 0).count();
    }
    hits as f64 / rounds as f64
}

#[test]
fn multi_krum_rarely_selects_the_sign_flipped_candidate_on_iid_data() {
    let rate = byz_selection_rate(None);
    assert!(rate < 0.05, "selected in {:.1}% of rounds", 100.0 * rate);
}

#[test]
fn multi_krum_selection_rate_on_dirichlet_split_is_reported() {
    // Heterogeneous honest shards sometimes produce a worse outlier than the
    // attacker; the rate is recorded, not bounded at 5%.
    let rate = byz_selection_rate(Some(1.0));
    println!("sign-flip candidate selected in {:.1}% of rounds (alpha=1)", 100.0 * rate);
    assert!(rate < 0.75, "no better than a random choice of 3 of 4: {rate}");
}
