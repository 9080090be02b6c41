//! A consensus-only cluster on the simulator: transactions are injected at
//! scheduled times, gossiped to every replica and ordered by HotStuff.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::model::{Digest, NodeId, Transaction};
use crate::simnet::{Actor, DelayModel, Outbox, SimReport, Simulator, Time, Wire};

use super::{
    Action, Behavior, CommittedBlock, ConsensusConfig, ConsensusStats, HotStuff, KeyedHashSigner, Msg,
    DEFAULT_BATCH_SIZE,
};

impl Wire for Msg {
    fn wire_bytes(&self) -> usize {
        Msg::wire_bytes(self)
    }

    fn label(&self) -> &'static str {
        Msg::label(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClusterMsg {
    Consensus(Msg),
    Tx(Transaction),
}

impl Wire for ClusterMsg {
    fn wire_bytes(&self) -> usize {
        match self {
            ClusterMsg::Consensus(m) => m.wire_bytes(),
            ClusterMsg::Tx(tx) => 1 + tx.encoded_len(),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            ClusterMsg::Consensus(m) => m.label(),
            ClusterMsg::Tx(_) => "TX",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClusterTimer {
    View(u64),
    Inject(usize),
}

pub struct ClusterNode {
    n: usize,
    pub hs: HotStuff,
    pub crashed: bool,
    injections: Vec<(Time, Transaction)>,
    pub log: Vec<CommittedBlock>,
    /// First commit time of each transaction id at this replica.
    pub commit_times: BTreeMap<Digest, Time>,
}

impl ClusterNode {
    fn apply(&mut self, actions: Vec<Action>, out: &mut Outbox<ClusterMsg, ClusterTimer>) {
        for a in actions {
            match a {
                Action::Send { to, msg } => out.send(to, ClusterMsg::Consensus(msg)),
                Action::ArmTimer { token, after } => out.set_timer(after, ClusterTimer::View(token)),
                Action::Committed(b) => {
                    for tx in &b.txs {
                        self.commit_times.entry(tx.id()).or_insert(out.now());
                    }
                    self.log.push(b);
                }
            }
        }
    }
}

impl Actor for ClusterNode {
    type Msg = ClusterMsg;
    type Timer = ClusterTimer;

    fn on_start(&mut self, out: &mut Outbox<ClusterMsg, ClusterTimer>) {
        if self.crashed {
            return;
        }
        let mut actions = Vec::new();
        self.hs.start(&mut actions);
        self.apply(actions, out);
        for (i, (at, _)) in self.injections.iter().enumerate() {
            out.set_timer(*at, ClusterTimer::Inject(i));
        }
    }

    fn on_message(&mut self, from: NodeId, msg: ClusterMsg, out: &mut Outbox<ClusterMsg, ClusterTimer>) {
        if self.crashed {
            return;
        }
        let mut actions = Vec::new();
        match msg {
            ClusterMsg::Consensus(m) => self.hs.handle(from, m, &mut actions),
            ClusterMsg::Tx(tx) => self.hs.submit(tx, &mut actions),
        }
        self.apply(actions, out);
    }

    fn on_timer(&mut self, timer: ClusterTimer, out: &mut Outbox<ClusterMsg, ClusterTimer>) {
        if self.crashed {
            return;
        }
        match timer {
            ClusterTimer::View(token) => {
                let mut actions = Vec::new();
                self.hs.on_timeout(token, &mut actions);
                self.apply(actions, out);
            }
            ClusterTimer::Inject(i) => {
                let tx = self.injections[i].1.clone();
                for to in 0..self.n {
                    out.send(NodeId(to as u32), ClusterMsg::Tx(tx.clone()));
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterSpec {
    pub n: usize,
    pub f: usize,
    pub seed: u64,
    pub delay: DelayModel,
    pub view_timeout: u64,
    pub batch_size: usize,
    pub crashed: BTreeSet<NodeId>,
    pub equivocators: BTreeSet<NodeId>,
    /// `(time, submitting node, transaction)`.
    pub txs: Vec<(Time, NodeId, Transaction)>,
    pub time_limit: Time,
}

impl ClusterSpec {
    pub fn new(n: usize, f: usize, seed: u64) -> Self {
        Self {
            n,
            f,
            seed,
            delay: DelayModel::default(),
            view_timeout: 200,
            batch_size: DEFAULT_BATCH_SIZE,
            crashed: BTreeSet::new(),
            equivocators: BTreeSet::new(),
            txs: Vec::new(),
            time_limit: 1_000_000,
        }
    }
}

pub struct ClusterOutcome {
    pub logs: Vec<Vec<CommittedBlock>>,
    pub committed: Vec<Vec<Digest>>,
    pub commit_times: Vec<BTreeMap<Digest, Time>>,
    pub stats: Vec<ConsensusStats>,
    pub report: SimReport,
    pub honest: BTreeSet<NodeId>,
}

impl ClusterOutcome {
    /// No two honest replicas disagree at any common height.
    pub fn prefixes_agree(&self) -> bool {
        let honest: Vec<&Vec<Digest>> = self.honest.iter().map(|id| &self.committed[id.index()]).collect();
        honest.windows(2).all(|w| w[0].iter().zip(w[1].iter()).all(|(a, b)| a == b))
    }
}

pub fn build_cluster(spec: &ClusterSpec) -> Simulator<ClusterNode> {
    let signer: Arc<KeyedHashSigner> = Arc::new(KeyedHashSigner::new(spec.n, spec.seed));
    let cfg = ConsensusConfig {
        n: spec.n,
        f: spec.f,
        batch_size: spec.batch_size,
        view_timeout: spec.view_timeout,
    };
    let nodes = (0..spec.n)
        .map(|i| {
            let id = NodeId(i as u32);
            let behavior = if spec.equivocators.contains(&id) {
                Behavior::Equivocate
            } else {
                Behavior::Honest
            };
            ClusterNode {
                n: spec.n,
                hs: HotStuff::new(id, cfg, signer.clone()).with_behavior(behavior),
                crashed: spec.crashed.contains(&id),
                injections: spec
                    .txs
                    .iter()
                    .filter(|(_, who, _)| *who == id)
                    .map(|(t, _, tx)| (*t, tx.clone()))
                    .collect(),
                log: Vec::new(),
                commit_times: BTreeMap::new(),
            }
        })
        .collect();
    Simulator::new(nodes, spec.delay, spec.seed)
}

/// Runs until the queue drains or the time limit passes.
pub fn run_cluster(spec: &ClusterSpec) -> ClusterOutcome {
    let mut sim = build_cluster(spec);
    let report = sim.run_to_quiescence(spec.time_limit);
    let honest = (0..spec.n as u32)
        .map(NodeId)
        .filter(|id| !spec.crashed.contains(id) && !spec.equivocators.contains(id))
        .collect();
    let nodes = sim.nodes();
    ClusterOutcome {
        logs: nodes.iter().map(|n| n.log.clone()).collect(),
        committed: nodes.iter().map(|n| n.hs.committed_log().to_vec()).collect(),
        commit_times: nodes.iter().map(|n| n.commit_times.clone()).collect(),
        stats: nodes.iter().map(|n| n.hs.stats().clone()).collect(),
        report,
        honest,
    }
}
