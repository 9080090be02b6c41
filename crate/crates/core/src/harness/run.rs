use std::collections::BTreeMap;
use std::sync::Arc;

use crate::consensus::{ConsensusConfig, KeyedHashSigner, DEFAULT_BATCH_SIZE};
use crate::engine::{Node, NodeSetup};
use crate::error::RunError;
use crate::model::{Digest, NodeId};
use crate::pool::ENTRY_OVERHEAD_BYTES;
use crate::simnet::{SimReport, Simulator, Time};
use crate::tasks::{dirichlet_partition, evaluate, iid_partition, init_weights, Example, Task};

use super::config::ExperimentConfig;

/// Simulated-time budget per round.
const TICKS_PER_ROUND: Time = 100_000;

/// One completed round as seen through node 0's aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub round: u64,
    pub time: Time,
    pub rule: &'static str,
    pub attack: &'static str,
    pub factor: f64,
    pub n: usize,
    pub f: usize,
    pub beta: f64,
    /// `None` for regression tasks.
    pub accuracy: Option<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub bytes_sent: Vec<u64>,
    pub bytes_received: Vec<u64>,
    /// Largest pool peak over all nodes so far.
    pub pool_peak_bytes: u64,
    pub resp_ok: u64,
    pub resp_already_upd: u64,
    pub resp_not_meet_quorum: u64,
    pub resp_already_agg: u64,
    /// Victims among the owners node 0 aggregated.
    pub byz_selected: usize,
    pub aggregate_digest: Digest,
}

/// Everything observed in a single seeded run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<RunRecord>,
    pub report: SimReport,
    /// Per node: replica state digest after each rotation.
    pub round_states: Vec<BTreeMap<u64, Digest>>,
    /// Per node: committed block hashes by height.
    pub committed: Vec<Vec<Digest>>,
    /// Per node: aggregate digest by round (complete aggregates only).
    pub aggregates: Vec<BTreeMap<u64, Digest>>,
    pub honest: Vec<bool>,
    pub pool_peaks: Vec<u64>,
    pub view_timeouts: u64,
}

impl SeedRun {
    pub fn final_record(&self) -> &RunRecord {
        self.records.last().expect("a run has at least one record")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population std; NaN-free for non-empty input.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Final-round statistics over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub name: String,
    pub rule: &'static str,
    pub attack: &'static str,
    pub n: usize,
    pub beta: f64,
    pub seeds: usize,
    pub accuracy: Option<Stat>,
    pub loss: Stat,
    pub grad_norm: Stat,
    pub bytes_received: Stat,
    pub pool_peak_bytes: Stat,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
}

impl Experiment {
    pub fn records(&self) -> Vec<RunRecord> {
        self.runs.iter().flat_map(|r| r.records.iter().cloned()).collect()
    }
}

/// Upper bound on one node's pool: `τ·n` entries of `8d` bytes plus overhead.
pub fn pool_bound_bytes(n: usize, d: usize, tau: u64) -> u64 {
    tau * n as u64 * (8 * d + ENTRY_OVERHEAD_BYTES) as u64
}

/// Nodes plus the task and its train/test examples.
pub type Built = (Vec<Node>, Arc<Task>, Vec<Example>, Vec<Example>);

pub fn build_nodes(cfg: &ExperimentConfig, seed: u64) -> Result<Built, RunError> {
    let s = &cfg.system;
    let (task, train, test) = Task::generate(&cfg.task, seed);
    let shards = match cfg.partition_alpha {
        Some(alpha) => dirichlet_partition(&train, s.n, alpha, seed)?,
        None => iid_partition(&train, s.n, seed)?,
    };
    let task = Arc::new(task);
    let bootstrap = Arc::new(init_weights(s.d, cfg.training.init_scale, seed));
    let signer = Arc::new(KeyedHashSigner::new(s.n, seed));
    let attack = Arc::new(cfg.attack.clone());
    let consensus = ConsensusConfig {
        n: s.n,
        f: s.f,
        batch_size: DEFAULT_BATCH_SIZE,
        view_timeout: cfg.view_timeout,
    };
    let nodes = shards
        .into_iter()
        .enumerate()
        .map(|(i, shard)| {
            Node::new(NodeSetup {
                id: NodeId(i as u32),
                n: s.n,
                f: s.f,
                tau: s.tau,
                rounds: s.rounds,
                gst_lt: s.gst_lt,
                k: s.k,
                neighborhood: s.neighborhood,
                rule: cfg.rule,
                consensus,
                signer: signer.clone(),
                task: task.clone(),
                shard,
                training: cfg.training.local(),
                train_frac: cfg.train_frac,
                attack: attack.clone(),
                bootstrap: bootstrap.clone(),
                seed,
                fetch_timeout: 4 * cfg.delay.delta.max(1) + 1,
                equivocate: cfg.attack.equivocate && cfg.attack.victims.contains(&NodeId(i as u32)),
                record_aggregates: i == 0,
            })
        })
        .collect();
    Ok((nodes, task, train.examples, test.examples))
}

/// Runs one seed to `T` rounds and checks the run invariants.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun, RunError> {
    cfg.validate()?;
    let (nodes, task, train, test) = build_nodes(cfg, seed)?;
    let mut sim = Simulator::new(nodes, cfg.delay, seed);
    run_nodes(cfg, seed, &mut sim, &task, &train, &test)
}

pub fn run_nodes(
    cfg: &ExperimentConfig,
    seed: u64,
    sim: &mut Simulator<Node>,
    task: &Task,
    train: &[Example],
    test: &[Example],
) -> Result<SeedRun, RunError> {
    let s = &cfg.system;
    let limit = cfg.delay.gst + TICKS_PER_ROUND * (s.rounds + 1);
    let mut records = Vec::new();
    let mut seen = 0usize;
    let mut peak = 0u64;
    loop {
        let done = sim.run_until(
            |nodes, _| {
                nodes[0].aggregates().len() > seen
                    || nodes.iter().all(Node::finished)
                    || nodes.iter().any(|n| n.error().is_some())
            },
            limit,
        )?;
        if let Some(e) = sim.nodes().iter().find_map(Node::into_error) {
            return Err(e);
        }
        let nodes = sim.nodes();
        peak = peak.max(nodes.iter().map(|n| n.pool().stats().peak_bytes as u64).max().unwrap_or(0));
        let aggs = nodes[0].aggregates();
        for (&round, agg) in aggs.iter().skip(seen) {
            let w = agg.weights.as_ref().expect("node 0 keeps its aggregates");
            let eval = evaluate(task, w, test);
            let g = task.gradient(w, train);
            let m = nodes[0].metrics();
            let count = |k: &str| m.responses.get(k).copied().unwrap_or(0);
            records.push(RunRecord {
                seed,
                round,
                time: done.now,
                rule: cfg.rule.as_str(),
                attack: cfg.attack.kind.as_str(),
                factor: cfg.attack.factor,
                n: s.n,
                f: s.f,
                beta: cfg.attack.beta(s.n),
                accuracy: eval.accuracy,
                loss: eval.loss,
                grad_norm: g.iter().map(|x| x * x).sum::<f64>().sqrt(),
                bytes_sent: done.bytes.iter().map(|b| b.sent).collect(),
                bytes_received: done.bytes.iter().map(|b| b.received).collect(),
                pool_peak_bytes: peak,
                resp_ok: count("OK"),
                resp_already_upd: count("AlreadyUPDError"),
                resp_not_meet_quorum: count("NotMeetQuorumWarning"),
                resp_already_agg: count("AlreadyAGGError"),
                byz_selected: agg.selected.iter().filter(|id| cfg.attack.is_victim(**id)).count(),
                aggregate_digest: agg.digest,
            });
        }
        seen = aggs.len();
        if sim.nodes().iter().all(Node::finished) {
            break;
        }
    }
    let report = sim.report();
    let nodes = sim.nodes();
    let honest: Vec<bool> = nodes.iter().map(|n| !n.is_victim() && !n.is_dead()).collect();
    let run = SeedRun {
        seed,
        records,
        round_states: nodes.iter().map(|n| n.round_states().clone()).collect(),
        committed: nodes.iter().map(|n| n.consensus().committed_log().to_vec()).collect(),
        aggregates: nodes
            .iter()
            .map(|n| {
                n.aggregates()
                    .iter()
                    .filter(|(_, a)| !a.incomplete)
                    .map(|(r, a)| (*r, a.digest))
                    .collect()
            })
            .collect(),
        honest,
        pool_peaks: nodes.iter().map(|n| n.pool().stats().peak_bytes as u64).collect(),
        view_timeouts: nodes.iter().map(|n| n.consensus().stats().timeouts).sum(),
        report,
    };
    check_invariants(cfg, &run)?;
    Ok(run)
}

/// Byte conservation, the per-node storage bound and replica agreement.
pub fn check_invariants(cfg: &ExperimentConfig, run: &SeedRun) -> Result<(), RunError> {
    let r = &run.report;
    if r.total_sent() != r.total_received() + r.dropped_bytes + r.in_flight_bytes {
        return Err(RunError::Invariant(format!(
            "bytes not conserved: sent {} != received {} + dropped {} + in flight {}",
            r.total_sent(),
            r.total_received(),
            r.dropped_bytes,
            r.in_flight_bytes
        )));
    }
    let s = &cfg.system;
    let bound = pool_bound_bytes(s.n, s.d, s.tau);
    for (i, &p) in run.pool_peaks.iter().enumerate() {
        if run.honest[i] && p > bound {
            return Err(RunError::Invariant(format!("node {i} pool peak {p} > bound {bound}")));
        }
    }
    let honest: Vec<usize> = (0..run.honest.len()).filter(|&i| run.honest[i]).collect();
    for w in honest.windows(2) {
        let (a, b) = (w[0], w[1]);
        let agree = |x: &BTreeMap<u64, Digest>, y: &BTreeMap<u64, Digest>| {
            x.iter().all(|(k, v)| y.get(k).is_none_or(|u| u == v))
        };
        if !agree(&run.round_states[a], &run.round_states[b]) {
            return Err(RunError::Invariant(format!("replica states of {a} and {b} diverge")));
        }
        let (ca, cb) = (&run.committed[a], &run.committed[b]);
        if ca.iter().zip(cb).any(|(x, y)| x != y) {
            return Err(RunError::Invariant(format!("committed logs of {a} and {b} diverge")));
        }
    }
    Ok(())
}

pub fn summarize(cfg: &ExperimentConfig, runs: &[SeedRun]) -> Summary {
    let finals: Vec<&RunRecord> = runs.iter().map(SeedRun::final_record).collect();
    let col = |f: &dyn Fn(&RunRecord) -> f64| Stat::of(&finals.iter().map(|r| f(r)).collect::<Vec<_>>());
    let accuracy = finals
        .iter()
        .map(|r| r.accuracy)
        .collect::<Option<Vec<f64>>>()
        .map(|xs| Stat::of(&xs));
    Summary {
        name: cfg.name.clone(),
        rule: cfg.rule.as_str(),
        attack: cfg.attack.kind.as_str(),
        n: cfg.system.n,
        beta: cfg.attack.beta(cfg.system.n),
        seeds: runs.len(),
        accuracy,
        loss: col(&|r| r.loss),
        grad_norm: col(&|r| r.grad_norm),
        bytes_received: col(&|r| r.bytes_received.iter().sum::<u64>() as f64),
        pool_peak_bytes: col(&|r| r.pool_peak_bytes as f64),
    }
}

/// Runs every seed of `cfg` in order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment, RunError> {
    cfg.validate()?;
    let runs = cfg
        .seeds
        .iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(cfg, &runs);
    Ok(Experiment {
        config: cfg.clone(),
        runs,
        summary,
    })
}

