#![allow(dead_code)]

use std::collections::HashSet;

use defl_core::engine::Node;
use defl_core::harness::{run::build_nodes, run::run_nodes, ExperimentConfig, SeedRun};
use defl_core::model::{Digest, RoundId, Transaction};
use defl_core::replica::{ReplicaState, Response};
use defl_core::simnet::Simulator;

/// Runs one seed and keeps the simulator for inspection.
pub fn run_with_nodes(cfg: &ExperimentConfig, seed: u64) -> (SeedRun, Simulator<Node>) {
    cfg.validate().unwrap();
    let (nodes, task, train, test) = build_nodes(cfg, seed).unwrap();
    let mut sim = Simulator::new(nodes, cfg.delay, seed);
    let run = run_nodes(cfg, seed, &mut sim, &task, &train, &test).unwrap();
    (run, sim)
}

/// A node's committed transactions, block by block, first occurrence only.
pub fn committed_batches(node: &Node) -> Vec<Vec<Transaction>> {
    let hs = node.consensus();
    let mut seen: HashSet<Digest> = HashSet::new();
    hs.committed_log()
        .iter()
        .map(|h| {
            let block = hs.block(h).expect("committed block is stored");
            block.batch.iter().filter(|tx| seen.insert(tx.id())).cloned().collect()
        })
        .collect()
}

/// Re-executes `batches` on a fresh replica, skipping transactions `skip`
/// selects. Returns the state digest after each block and, for every executed
/// transaction, the replica round it met and the response.
pub fn replay(
    n: usize,
    f: usize,
    batches: &[Vec<Transaction>],
    skip: impl Fn(&Transaction) -> bool,
) -> (Vec<Digest>, Vec<(Transaction, RoundId, Response)>) {
    let mut state = ReplicaState::new(n, f);
    let mut digests = Vec::new();
    let mut responses = Vec::new();
    for batch in batches {
        for tx in batch.iter().filter(|tx| !skip(tx)) {
            let round = state.round();
            let r = state.exec(tx);
            responses.push((tx.clone(), round, r));
        }
        digests.push(state.state_digest());
    }
    (digests, responses)
}
