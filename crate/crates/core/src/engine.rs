//! A full node: HotStuff replica, round/weight state machine, weight pool
//! and training client on one simulated event loop.
//!
//! Transactions are gossiped to every replica's mempool. Committed
//! transactions run through [`ReplicaState`]; an accepted `UPD` from another
//! node whose weights are not in the local pool triggers a fetch from its
//! sender (retried from everyone on timeout). The client starts a round once
//! every last-round digest is resolved or given up on.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adversary::{misbehave_protocol, poison_weights, AttackKind, AttackSpec, Schedule, TxIntent};
use crate::aggregation::AggregationRule;
use crate::client::{ClientState, Phase as ClientPhase, RoundPlan, UpdOutcome};
use crate::consensus::{Action, Behavior, ConsensusConfig, HotStuff, Msg, Signer};
use crate::error::RunError;
use crate::model::{digest, Digest, NodeId, RoundId, Transaction, TxKind, WeightVector};
use crate::pool::WeightPool;
use crate::replica::{snapshot_last, ReplicaState, Response};
use crate::rng::{stream, stream_rng};
use crate::simnet::{Actor, Outbox, Time, Wire};
use crate::tasks::{local_train, DataShard, LocalTraining, Task};

/// Fetch attempts (first request plus retries) before a digest is given up.
pub const FETCH_ATTEMPTS: u32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum NetMsg {
    Consensus(Msg),
    Tx(Transaction),
    FetchRequest(Digest),
    FetchResponse(WeightVector),
}

impl Wire for NetMsg {
    fn wire_bytes(&self) -> usize {
        match self {
            NetMsg::Consensus(m) => m.wire_bytes(),
            NetMsg::Tx(tx) => 1 + tx.encoded_len(),
            NetMsg::FetchRequest(_) => 1 + Digest::LEN,
            NetMsg::FetchResponse(w) => 1 + w.byte_len(),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            NetMsg::Consensus(m) => m.label(),
            NetMsg::Tx(_) => "TX",
            NetMsg::FetchRequest(_) => "FETCH-REQ",
            NetMsg::FetchResponse(_) => "FETCH-RESP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeTimer {
    View(u64),
    TrainingDone(u64),
    SendAgg(u64),
    FetchRetry(Digest),
    /// Re-gossip an own transaction that has not committed yet.
    Rebroadcast(Digest),
}

/// Everything a node needs that is shared or fixed for the run.
#[derive(Clone)]
pub struct NodeSetup {
    pub id: NodeId,
    pub n: usize,
    pub f: usize,
    pub tau: u64,
    pub rounds: u64,
    pub gst_lt: Time,
    pub k: Option<usize>,
    pub neighborhood: Option<usize>,
    pub rule: AggregationRule,
    pub consensus: ConsensusConfig,
    pub signer: Arc<dyn Signer + Send + Sync>,
    pub task: Arc<Task>,
    pub shard: DataShard,
    pub training: LocalTraining,
    /// Training takes `gst_lt · U(lo, hi)` ticks.
    pub train_frac: (f64, f64),
    pub attack: Arc<AttackSpec>,
    pub bootstrap: Arc<WeightVector>,
    pub seed: u64,
    pub fetch_timeout: Time,
    /// The consensus replica equivocates when it leads.
    pub equivocate: bool,
    /// Keep every aggregate this node computes.
    pub record_aggregates: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRecord {
    pub round: RoundId,
    pub digest: Digest,
    pub weights: Option<WeightVector>,
    pub selected: Vec<NodeId>,
    pub fell_back: bool,
    /// Some last-round weights were never obtained.
    pub incomplete: bool,
}

#[derive(Debug, Clone)]
struct Fetch {
    tag: RoundId,
    attempts: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeMetrics {
    pub responses: BTreeMap<&'static str, u64>,
    pub fallbacks: u64,
    pub abandoned: u64,
    pub fetches_given_up: u64,
    /// Committed own `UPD`s whose target was not `replica round + 1`.
    pub own_upd_rejections: u64,
    /// Rotation times, by round reached.
    pub round_times: BTreeMap<u64, Time>,
}

pub struct Node {
    setup: NodeSetup,
    hs: HotStuff,
    replica: ReplicaState,
    pool: WeightPool,
    client: ClientState,
    step_counter: u64,
    train_rng: ChaCha8Rng,
    attack_rng: ChaCha8Rng,
    speed_rng: ChaCha8Rng,
    victim: bool,
    dead: bool,
    epoch: u64,
    pending_plan: Option<RoundPlan>,
    pending_trained: Option<WeightVector>,
    fetches: BTreeMap<Digest, Fetch>,
    own_txs: BTreeMap<Digest, Transaction>,
    given_up: BTreeSet<Digest>,
    aggregates: BTreeMap<u64, AggregateRecord>,
    /// Replica state digest right after each rotation, by round.
    round_states: BTreeMap<u64, Digest>,
    /// Replica state digest after each committed block, by height.
    height_states: Vec<Digest>,
    metrics: NodeMetrics,
    error: Option<String>,
}

impl Node {
    pub fn new(setup: NodeSetup) -> Self {
        let i = setup.id.index() as u64;
        let victim = setup.attack.is_victim(setup.id);
        let mut shard = setup.shard.clone();
        if victim && setup.attack.kind == AttackKind::LabelFlip {
            shard = crate::adversary::flip_labels(&shard);
        }
        let behavior = if setup.equivocate { Behavior::Equivocate } else { Behavior::Honest };
        let hs = HotStuff::new(setup.id, setup.consensus, setup.signer.clone()).with_behavior(behavior);
        let client = ClientState::new(
            setup.id,
            (*setup.bootstrap).clone(),
            setup.gst_lt,
            setup.rule,
            setup.f,
        )
        .with_selection(setup.k, setup.neighborhood);
        Self {
            replica: ReplicaState::new(setup.n, setup.f),
            pool: WeightPool::new(),
            client,
            step_counter: 0,
            train_rng: stream_rng(setup.seed, stream::TRAIN_BASE + i),
            attack_rng: stream_rng(setup.seed, stream::ATTACK_BASE + i),
            speed_rng: stream_rng(setup.seed, stream::SPEED_BASE + i),
            victim,
            dead: false,
            epoch: 0,
            pending_plan: None,
            pending_trained: None,
            fetches: BTreeMap::new(),
            own_txs: BTreeMap::new(),
            given_up: BTreeSet::new(),
            aggregates: BTreeMap::new(),
            round_states: BTreeMap::new(),
            height_states: Vec::new(),
            metrics: NodeMetrics::default(),
            error: None,
            hs,
            setup: NodeSetup { shard, ..setup },
        }
    }

    pub fn id(&self) -> NodeId {
        self.setup.id
    }

    pub fn is_victim(&self) -> bool {
        self.victim
    }

    pub fn is_dead(&self) -> bool {
        self.dead
    }

    pub fn replica(&self) -> &ReplicaState {
        &self.replica
    }

    pub fn consensus(&self) -> &HotStuff {
        &self.hs
    }

    pub fn pool(&self) -> &WeightPool {
        &self.pool
    }

    pub fn client(&self) -> &ClientState {
        &self.client
    }

    pub fn aggregates(&self) -> &BTreeMap<u64, AggregateRecord> {
        &self.aggregates
    }

    pub fn round_states(&self) -> &BTreeMap<u64, Digest> {
        &self.round_states
    }

    pub fn height_states(&self) -> &[Digest] {
        &self.height_states
    }

    pub fn metrics(&self) -> &NodeMetrics {
        &self.metrics
    }

    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }

    pub fn into_error(&self) -> Option<RunError> {
        self.error.as_ref().map(|reason| RunError::Node {
            node: self.setup.id,
            reason: reason.clone(),
        })
    }

    /// Honest nodes with the final aggregate (or that never will get it).
    /// Victims never hold up a run.
    pub fn finished(&self) -> bool {
        self.victim || self.done()
    }

    /// The node has the aggregate of the final round (or never will).
    pub fn done(&self) -> bool {
        self.dead
            || self.error.is_some()
            || self.client_crashed()
            || self.aggregates.contains_key(&self.setup.rounds)
    }

    fn client_crashed(&self) -> bool {
        let a = &self.setup.attack;
        a.kind == AttackKind::Crash && self.victim && self.replica.round().0 >= a.crash_round
    }

    fn broadcast(&self, msg: NetMsg, out: &mut Outbox<NetMsg, NodeTimer>) {
        for i in 0..self.setup.n {
            out.send(NodeId(i as u32), msg.clone());
        }
    }

    fn submit(&mut self, tx: Transaction, out: &mut Outbox<NetMsg, NodeTimer>) {
        let id = tx.id();
        self.own_txs.insert(id, tx.clone());
        self.broadcast(NetMsg::Tx(tx), out);
        out.set_timer(self.rebroadcast_period(), NodeTimer::Rebroadcast(id));
    }

    fn rebroadcast_period(&self) -> Time {
        4 * self.setup.consensus.view_timeout
    }

    fn on_rebroadcast(&mut self, id: Digest, out: &mut Outbox<NetMsg, NodeTimer>) {
        if self.hs.is_committed(&id) {
            self.own_txs.remove(&id);
            return;
        }
        if let Some(tx) = self.own_txs.get(&id) {
            self.broadcast(NetMsg::Tx(tx.clone()), out);
            out.set_timer(self.rebroadcast_period(), NodeTimer::Rebroadcast(id));
        }
    }

    fn apply(&mut self, actions: Vec<Action>, out: &mut Outbox<NetMsg, NodeTimer>) {
        for a in actions {
            match a {
                Action::Send { to, msg } => out.send(to, NetMsg::Consensus(msg)),
                Action::ArmTimer { token, after } => out.set_timer(after, NodeTimer::View(token)),
                Action::Committed(block) => {
                    for tx in &block.txs {
                        self.execute(tx, out);
                    }
                    self.height_states.push(self.replica.state_digest());
                }
            }
        }
    }

    fn execute(&mut self, tx: &Transaction, out: &mut Outbox<NetMsg, NodeTimer>) {
        let before = self.replica.round();
        let resp = self.replica.exec(tx);
        *self.metrics.responses.entry(resp.as_str()).or_default() += 1;
        if tx.kind() == TxKind::Upd && resp == Response::Ok && tx.sender() != self.id() {
            if let Some(dg) = tx.payload() {
                let tag = RoundId(tx.target_round().0 - 1);
                if !self.pool.contains(&dg) {
                    self.start_fetch(dg, tx.sender(), tag, out);
                }
            }
        }
        if tx.kind() == TxKind::Upd && tx.sender() == self.id() {
            if resp != Response::Ok {
                self.metrics.own_upd_rejections += 1;
            }
            match self.client.on_upd_response(tx, resp, out.now()) {
                UpdOutcome::ScheduleAgg { target, .. } if target <= self.replica.round() => {
                    // Only a rewritten UPD can land in a round that already closed.
                    self.client.on_rotation(self.replica.round());
                    self.epoch += 1;
                    self.try_start_round(out);
                }
                UpdOutcome::ScheduleAgg { at, .. } => {
                    if self.victim && self.setup.attack.kind == AttackKind::EarlyAgg {
                        // Already voted at round start.
                    } else {
                        out.set_timer(at - out.now(), NodeTimer::SendAgg(self.epoch));
                    }
                }
                UpdOutcome::Abandon => {
                    self.metrics.abandoned += 1;
                    self.epoch += 1;
                    self.try_start_round(out);
                }
                UpdOutcome::Ignored => {}
            }
        }
        if self.replica.round() != before {
            self.on_rotation(out);
        }
    }

    fn on_rotation(&mut self, out: &mut Outbox<NetMsg, NodeTimer>) {
        let r = self.replica.round();
        self.round_states.insert(r.0, self.replica.state_digest());
        self.metrics.round_times.insert(r.0, out.now());
        self.pool.gc_rounds(r, self.setup.tau);
        let tau = self.setup.tau;
        self.fetches.retain(|_, f| r.0 < tau || f.tag.0 > r.0 - tau);
        if self.setup.attack.consensus_crash && self.setup.attack.crashed_at(self.id(), r) {
            self.dead = true;
            return;
        }
        if self.client.on_rotation(r) {
            self.metrics.abandoned += 1;
        }
        if !self.client.upd_in_flight() {
            self.epoch += 1;
            self.pending_plan = None;
            self.pending_trained = None;
        }
        self.try_start_round(out);
    }

    fn start_fetch(&mut self, dg: Digest, owner: NodeId, tag: RoundId, out: &mut Outbox<NetMsg, NodeTimer>) {
        if self.fetches.contains_key(&dg) || self.given_up.contains(&dg) {
            return;
        }
        self.fetches.insert(dg, Fetch { tag, attempts: 1 });
        out.send(owner, NetMsg::FetchRequest(dg));
        out.set_timer(self.setup.fetch_timeout, NodeTimer::FetchRetry(dg));
    }

    fn on_fetch_retry(&mut self, dg: Digest, out: &mut Outbox<NetMsg, NodeTimer>) {
        let Some(f) = self.fetches.get_mut(&dg) else {
            return;
        };
        if f.attempts >= FETCH_ATTEMPTS {
            self.fetches.remove(&dg);
            self.given_up.insert(dg);
            self.metrics.fetches_given_up += 1;
            self.try_start_round(out);
            return;
        }
        f.attempts += 1;
        let me = self.setup.id;
        for i in 0..self.setup.n {
            let to = NodeId(i as u32);
            if to != me {
                out.send(to, NetMsg::FetchRequest(dg));
            }
        }
        out.set_timer(self.setup.fetch_timeout, NodeTimer::FetchRetry(dg));
    }

    fn on_fetch_response(&mut self, w: WeightVector, out: &mut Outbox<NetMsg, NodeTimer>) {
        if w.dim() != self.setup.task.d || !w.is_finite() {
            return;
        }
        let Ok(dg) = digest(&w) else {
            return;
        };
        let Some(f) = self.fetches.remove(&dg) else {
            return;
        };
        let _ = self.pool.put(w, f.tag);
        self.try_start_round(out);
    }

    /// Starts (or finishes) a client round if the replica allows it and every
    /// last-round digest is resolved.
    fn try_start_round(&mut self, out: &mut Outbox<NetMsg, NodeTimer>) {
        if self.dead || self.error.is_some() || self.client_crashed() {
            return;
        }
        let r = self.replica.round();
        if self.client.l_round > r || self.client.upd_in_flight() {
            return;
        }
        let snap = snapshot_last(&self.replica, &self.pool);
        let waiting = snap.missing.iter().any(|(_, dg)| !self.given_up.contains(dg));
        if waiting {
            let missing = snap.missing.clone();
            for (owner, dg) in missing {
                let tag = RoundId(r.0.saturating_sub(1));
                self.start_fetch(dg, owner, tag, out);
            }
            return;
        }
        let incomplete = !snap.missing.is_empty();
        if r.0 >= self.setup.rounds {
            if !self.aggregates.contains_key(&r.0) {
                let mut probe = self.client.clone();
                if let Some(plan) = probe.maybe_start_round(out.now(), r, &snap, &self.setup.bootstrap) {
                    self.record_aggregate(r, &plan, incomplete);
                }
            }
            return;
        }
        let Some(plan) = self
            .client
            .maybe_start_round(out.now(), r, &snap, &self.setup.bootstrap)
        else {
            return;
        };
        if plan.fell_back {
            self.metrics.fallbacks += 1;
        }
        if r.0 >= 1 {
            self.record_aggregate(r, &plan, incomplete);
        }
        self.epoch += 1;
        let trained = match local_train(
            &self.setup.task,
            &plan.w_agg,
            &self.setup.shard,
            &self.setup.training,
            &mut self.step_counter,
            &mut self.train_rng,
        ) {
            Ok(w) => w,
            Err(e) => {
                self.error = Some(e.to_string());
                return;
            }
        };
        let trained = if self.victim && self.setup.attack.kind.poisons_weights() {
            match poison_weights(&self.setup.attack, &plan.w_agg, &trained, &mut self.attack_rng) {
                Ok(w) => w,
                Err(e) => {
                    self.error = Some(e.to_string());
                    return;
                }
            }
        } else {
            trained
        };
        if !trained.is_finite() {
            self.error = Some(format!("non-finite weights in round {}", plan.target_round));
            return;
        }
        if self.victim && self.setup.attack.kind == AttackKind::EarlyAgg {
            let agg = self.client.early_agg(plan.target_round);
            self.submit(agg, out);
        }
        let (lo, hi) = self.setup.train_frac;
        let frac = if hi > lo { self.speed_rng.random_range(lo..hi) } else { lo };
        let duration = ((self.setup.gst_lt as f64 * frac).round() as Time).max(1);
        self.pending_plan = Some(plan);
        self.pending_trained = Some(trained);
        out.set_timer(duration, NodeTimer::TrainingDone(self.epoch));
    }

    fn record_aggregate(&mut self, r: RoundId, plan: &RoundPlan, incomplete: bool) {
        let dg = digest(&plan.w_agg).expect("aggregate is finite");
        self.aggregates.insert(
            r.0,
            AggregateRecord {
                round: r,
                digest: dg,
                weights: self.setup.record_aggregates.then(|| plan.w_agg.clone()),
                selected: plan.selected.clone(),
                fell_back: plan.fell_back,
                incomplete,
            },
        );
    }

    fn on_training_done(&mut self, epoch: u64, out: &mut Outbox<NetMsg, NodeTimer>) {
        if epoch != self.epoch {
            return;
        }
        let (Some(plan), Some(trained)) = (self.pending_plan.take(), self.pending_trained.take()) else {
            return;
        };
        if !matches!(self.client.phase(), ClientPhase::Training(_)) {
            return;
        }
        let target = plan.target_round;
        let tag = RoundId(target.0 - 1);
        if let Err(e) = self.pool.put(trained.clone(), tag) {
            self.error = Some(e.to_string());
            return;
        }
        let upd = self.client.finish_round(plan, trained);
        let mut intents = vec![TxIntent { tx: upd, schedule: Schedule::AfterTraining }];
        if self.victim && self.setup.attack.kind.misbehaves_in_protocol() {
            intents = misbehave_protocol(&self.setup.attack, self.replica.round(), intents, &mut self.attack_rng);
        }
        for intent in intents {
            if intent.tx.kind() == TxKind::Upd {
                self.client.override_pending_upd(intent.tx.clone());
            }
            self.submit(intent.tx, out);
        }
    }

    fn on_send_agg(&mut self, epoch: u64, out: &mut Outbox<NetMsg, NodeTimer>) {
        if epoch != self.epoch {
            return;
        }
        let ClientPhase::Voting { target, .. } = *self.client.phase() else {
            return;
        };
        if let Some(tx) = self.client.take_agg(target) {
            self.submit(tx, out);
        }
    }
}

impl Actor for Node {
    type Msg = NetMsg;
    type Timer = NodeTimer;

    fn on_start(&mut self, out: &mut Outbox<NetMsg, NodeTimer>) {
        if self.setup.attack.consensus_crash && self.setup.attack.crashed_at(self.id(), RoundId(0)) {
            self.dead = true;
            return;
        }
        let mut actions = Vec::new();
        self.hs.start(&mut actions);
        self.apply(actions, out);
        self.try_start_round(out);
    }

    fn on_message(&mut self, from: NodeId, msg: NetMsg, out: &mut Outbox<NetMsg, NodeTimer>) {
        if self.dead {
            return;
        }
        let mut actions = Vec::new();
        match msg {
            NetMsg::Consensus(m) => self.hs.handle(from, m, &mut actions),
            NetMsg::Tx(tx) => {
                // A peer re-sending a committed transaction missed a decision.
                if self.hs.is_committed(&tx.id()) {
                    self.hs.sync_peer(from, &mut actions);
                }
                self.hs.submit(tx, &mut actions);
            }
            NetMsg::FetchRequest(dg) => {
                if let Ok(w) = self.pool.get(&dg) {
                    out.send(from, NetMsg::FetchResponse(w.clone()));
                }
            }
            NetMsg::FetchResponse(w) => self.on_fetch_response(w, out),
        }
        self.apply(actions, out);
    }

    fn on_timer(&mut self, timer: NodeTimer, out: &mut Outbox<NetMsg, NodeTimer>) {
        if self.dead {
            return;
        }
        match timer {
            NodeTimer::View(token) => {
                let mut actions = Vec::new();
                self.hs.on_timeout(token, &mut actions);
                self.apply(actions, out);
            }
            NodeTimer::TrainingDone(epoch) => self.on_training_done(epoch, out),
            NodeTimer::SendAgg(epoch) => self.on_send_agg(epoch, out),
            NodeTimer::FetchRetry(dg) => self.on_fetch_retry(dg, out),
            NodeTimer::Rebroadcast(id) => self.on_rebroadcast(id, out),
        }
    }
}
