//! Basic (non-chained) HotStuff.
//!
//! A view's leader gathers `n - f` NEW-VIEW messages, proposes a block that
//! extends the highest prepare certificate, and drives it through the
//! PREPARE, PRE-COMMIT and COMMIT voting phases before broadcasting DECIDE.
//! Replicas lock on the pre-commit certificate and only vote for proposals
//! that extend their lock or carry a newer justification. Leaders rotate
//! round-robin (`view mod n`); the pacemaker moves to the next view when a
//! view with pending work times out.
//!
//! [`HotStuff`] is a pure state machine: every input returns [`Action`]s for
//! the host to perform (sends, timer arms, commits).

pub mod cluster;
pub mod messages;
pub mod pacemaker;
pub mod signer;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use indexmap::IndexMap;

use crate::model::{Digest, NodeId, Transaction};

pub use messages::{leader_of, vote_payload, Block, Msg, Phase, QuorumCert, View, Vote};
pub use pacemaker::Pacemaker;
pub use signer::{KeyedHashSigner, Signer};

pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsensusConfig {
    pub n: usize,
    pub f: usize,
    pub batch_size: usize,
    pub view_timeout: u64,
}

impl ConsensusConfig {
    pub fn quorum(&self) -> usize {
        self.n - self.f
    }
}

/// How a replica behaves in consensus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Behavior {
    #[default]
    Honest,
    /// As leader, sends conflicting proposals to the two halves of the
    /// replicas; as replica, votes for every proposal it sees.
    Equivocate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommittedBlock {
    pub height: u64,
    pub view: View,
    pub hash: Digest,
    pub batch_len: usize,
    /// Batch transactions not committed before, in batch order.
    pub txs: Vec<Transaction>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send { to: NodeId, msg: Msg },
    ArmTimer { token: u64, after: u64 },
    Committed(CommittedBlock),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ViewCounters {
    pub to_leader: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConsensusStats {
    pub timeouts: u64,
    pub rejected_votes: u64,
    pub ignored_proposals: u64,
    pub commits: u64,
    /// Messages this replica sent, by the view it was in when sending.
    pub sent_by_view: BTreeMap<View, ViewCounters>,
    /// Views in which this replica committed a block it had voted on.
    pub committed_views: BTreeSet<View>,
}

pub struct HotStuff {
    id: NodeId,
    cfg: ConsensusConfig,
    signer: Arc<dyn Signer + Send + Sync>,
    behavior: Behavior,
    view: View,
    locked: QuorumCert,
    high: QuorumCert,
    /// Commit certificate of the highest decided block.
    last_commit: Option<QuorumCert>,
    blocks: BTreeMap<Digest, Block>,
    committed: Vec<Digest>,
    committed_txs: HashSet<Digest>,
    mempool: IndexMap<Digest, Transaction>,
    votes: BTreeMap<(View, Phase, Digest), Vec<(NodeId, Digest)>>,
    seen_votes: BTreeSet<(View, Phase, NodeId)>,
    formed: BTreeMap<View, Vec<BTreeSet<NodeId>>>,
    new_views: BTreeMap<View, BTreeMap<NodeId, QuorumCert>>,
    voted: BTreeSet<(View, Phase)>,
    proposed: BTreeSet<View>,
    pending_prepares: Vec<(NodeId, Msg)>,
    pending_decides: Vec<(NodeId, QuorumCert)>,
    /// Missing blocks and the peers already asked for them.
    requested: BTreeMap<Digest, BTreeSet<NodeId>>,
    pacemaker: Pacemaker,
    timer_token: u64,
    timer_armed: bool,
    stats: ConsensusStats,
}

impl HotStuff {
    pub fn new(id: NodeId, cfg: ConsensusConfig, signer: Arc<dyn Signer + Send + Sync>) -> Self {
        assert!(cfg.n > cfg.f && cfg.batch_size > 0);
        let genesis = Block::genesis();
        let mut blocks = BTreeMap::new();
        blocks.insert(genesis.hash(), genesis);
        Self {
            id,
            cfg,
            signer,
            behavior: Behavior::Honest,
            view: 0,
            locked: QuorumCert::genesis(),
            last_commit: None,
            high: QuorumCert::genesis(),
            blocks,
            committed: Vec::new(),
            committed_txs: HashSet::new(),
            mempool: IndexMap::new(),
            votes: BTreeMap::new(),
            seen_votes: BTreeSet::new(),
            formed: BTreeMap::new(),
            new_views: BTreeMap::new(),
            voted: BTreeSet::new(),
            proposed: BTreeSet::new(),
            pending_prepares: Vec::new(),
            pending_decides: Vec::new(),
            requested: BTreeMap::new(),
            pacemaker: Pacemaker::new(cfg.view_timeout),
            timer_token: 0,
            timer_armed: false,
            stats: ConsensusStats::default(),
        }
    }

    pub fn with_behavior(mut self, behavior: Behavior) -> Self {
        self.behavior = behavior;
        self
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn locked_qc(&self) -> &QuorumCert {
        &self.locked
    }

    pub fn high_qc(&self) -> &QuorumCert {
        &self.high
    }

    /// Committed block hashes; index `h - 1` holds height `h`.
    pub fn committed_log(&self) -> &[Digest] {
        &self.committed
    }

    pub fn committed_height(&self) -> u64 {
        self.committed.len() as u64
    }

    pub fn block(&self, hash: &Digest) -> Option<&Block> {
        self.blocks.get(hash)
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn is_committed(&self, tx: &Digest) -> bool {
        self.committed_txs.contains(tx)
    }

    pub fn stats(&self) -> &ConsensusStats {
        &self.stats
    }

    pub fn pacemaker(&self) -> &Pacemaker {
        &self.pacemaker
    }

    fn leader(&self, view: View) -> NodeId {
        leader_of(view, self.cfg.n)
    }

    fn committed_tip(&self) -> Digest {
        self.committed
            .last()
            .copied()
            .unwrap_or_else(|| Block::genesis().hash())
    }

    fn send(&mut self, to: NodeId, msg: Msg, out: &mut Vec<Action>) {
        let to_leader = to == self.leader(self.view) && to != self.id;
        let c = self.stats.sent_by_view.entry(self.view).or_default();
        c.total += 1;
        c.to_leader += usize::from(to_leader);
        out.push(Action::Send { to, msg });
    }

    fn broadcast(&mut self, msg: Msg, out: &mut Vec<Action>) {
        for i in 0..self.cfg.n {
            self.send(NodeId(i as u32), msg.clone(), out);
        }
    }

    fn verify(&self, qc: &QuorumCert) -> bool {
        qc.verify(self.signer.as_ref(), self.cfg.n, self.cfg.quorum())
    }

    /// Enters view 1 and greets its leader.
    pub fn start(&mut self, out: &mut Vec<Action>) {
        if self.view == 0 {
            self.enter_view(1, true, out);
        }
    }

    /// Adds a client transaction to the mempool.
    pub fn submit(&mut self, tx: Transaction, out: &mut Vec<Action>) {
        let id = tx.id();
        if self.committed_txs.contains(&id) || self.mempool.contains_key(&id) {
            return;
        }
        self.mempool.insert(id, tx);
        if !self.timer_armed && self.view > 0 {
            self.arm_timer(out);
        }
        if self.leader(self.view) == self.id {
            self.try_propose(out);
        }
    }

    /// Sends our latest commit certificate to a peer that looks behind.
    pub fn sync_peer(&mut self, to: NodeId, out: &mut Vec<Action>) {
        if to == self.id {
            return;
        }
        if let Some(qc) = self.last_commit.clone() {
            self.send(to, Msg::Decide { view: qc.view, qc }, out);
        }
    }

    fn arm_timer(&mut self, out: &mut Vec<Action>) {
        self.timer_token += 1;
        self.timer_armed = !self.mempool.is_empty();
        if self.timer_armed {
            out.push(Action::ArmTimer {
                token: self.timer_token,
                after: self.pacemaker.timeout(),
            });
        }
    }

    fn enter_view(&mut self, view: View, send_new_view: bool, out: &mut Vec<Action>) {
        if view <= self.view {
            return;
        }
        self.view = view;
        if send_new_view {
            let leader = self.leader(view);
            self.send(leader, Msg::NewView { view, justify: self.high.clone() }, out);
        }
        self.arm_timer(out);
        let keep = view.saturating_sub(1);
        self.votes.retain(|(v, _, _), _| *v >= keep);
        self.seen_votes.retain(|(v, _, _)| *v >= keep);
        self.formed.retain(|v, _| *v >= keep);
        self.new_views.retain(|v, _| *v >= keep);
        self.voted.retain(|(v, _)| *v >= keep);
        if self.leader(view) == self.id {
            self.try_propose(out);
        }
    }

    fn update_high(&mut self, qc: &QuorumCert) {
        if qc.phase == Phase::Prepare && qc.view > self.high.view {
            self.high = qc.clone();
        }
    }

    /// Handles the expiry of the timer armed with `token`.
    pub fn on_timeout(&mut self, token: u64, out: &mut Vec<Action>) {
        if token != self.timer_token || !self.timer_armed {
            return;
        }
        self.timer_armed = false;
        self.stats.timeouts += 1;
        self.pacemaker.on_failure();
        let next = self.view + 1;
        self.enter_view(next, true, out);
    }

    pub fn handle(&mut self, from: NodeId, msg: Msg, out: &mut Vec<Action>) {
        match msg {
            Msg::NewView { view, justify } => self.on_new_view(from, view, justify, out),
            Msg::Prepare { .. } => self.on_propose(from, msg, out),
            Msg::Vote(v) => self.on_vote(from, v, out),
            Msg::PreCommit { view, qc } => self.on_phase_qc(from, view, qc, Phase::Prepare, out),
            Msg::Commit { view, qc } => self.on_phase_qc(from, view, qc, Phase::PreCommit, out),
            Msg::Decide { qc, .. } => self.on_decide(from, qc, out),
            Msg::BlockRequest { hash } => {
                if let Some(block) = self.blocks.get(&hash).cloned() {
                    self.send(from, Msg::BlockResponse { block }, out);
                }
            }
            Msg::BlockResponse { block } => self.on_block(block, out),
        }
    }

    fn on_new_view(&mut self, from: NodeId, view: View, justify: QuorumCert, out: &mut Vec<Action>) {
        if justify.phase != Phase::Prepare || !self.verify(&justify) {
            return;
        }
        // A sender whose highest QC predates our last decision may have
        // missed that DECIDE; replay it.
        if let Some(qc) = &self.last_commit {
            if from != self.id && justify.view < qc.view {
                let msg = Msg::Decide { view: qc.view, qc: qc.clone() };
                self.send(from, msg, out);
            }
        }
        if view < self.view || self.leader(view) != self.id {
            return;
        }
        self.update_high(&justify);
        self.new_views.entry(view).or_default().insert(from, justify);
        let count = self.new_views[&view].len();
        if count >= self.cfg.quorum() && !self.proposed.contains(&view) {
            if view > self.view {
                self.enter_view(view, false, out);
            }
            self.try_propose(out);
        }
    }

    fn ancestor_tx_ids(&self, mut hash: Digest) -> HashSet<Digest> {
        let tip_height = self.committed_height();
        let mut ids = HashSet::new();
        while let Some(b) = self.blocks.get(&hash) {
            if b.height <= tip_height {
                break;
            }
            ids.extend(b.batch.iter().map(Transaction::id));
            hash = b.parent;
        }
        ids
    }

    fn try_propose(&mut self, out: &mut Vec<Action>) {
        let view = self.view;
        if self.leader(view) != self.id || self.proposed.contains(&view) {
            return;
        }
        let Some(nvs) = self.new_views.get(&view) else {
            return;
        };
        if nvs.len() < self.cfg.quorum() {
            return;
        }
        let mut justify = self.high.clone();
        for qc in nvs.values() {
            if qc.view > justify.view {
                justify = qc.clone();
            }
        }
        let Some(parent) = self.blocks.get(&justify.block) else {
            let holder = nvs
                .iter()
                .find(|(_, qc)| qc.block == justify.block)
                .map(|(id, _)| *id)
                .unwrap_or(self.id);
            self.request_block(justify.block, holder, out);
            return;
        };
        let parent_height = parent.height;
        let exclude = self.ancestor_tx_ids(justify.block);
        let batch: Vec<Transaction> = self
            .mempool
            .iter()
            .filter(|(id, _)| !exclude.contains(*id))
            .take(self.cfg.batch_size)
            .map(|(_, tx)| tx.clone())
            .collect();
        if batch.is_empty() && justify.block == self.committed_tip() {
            return;
        }
        let block = Block {
            view,
            height: parent_height + 1,
            parent: justify.block,
            proposer: self.id,
            batch,
        };
        self.proposed.insert(view);
        if self.behavior == Behavior::Equivocate && !block.batch.is_empty() {
            let mut other = block.clone();
            other.batch.reverse();
            other.batch.pop();
            for i in 0..self.cfg.n {
                let b = if i % 2 == 0 { block.clone() } else { other.clone() };
                self.blocks.insert(b.hash(), b.clone());
                let msg = Msg::Prepare { view, block: b, justify: justify.clone() };
                self.send(NodeId(i as u32), msg, out);
            }
            return;
        }
        self.blocks.insert(block.hash(), block.clone());
        self.broadcast(Msg::Prepare { view, block, justify }, out);
    }

    fn request_block(&mut self, hash: Digest, from: NodeId, out: &mut Vec<Action>) {
        // Each peer is asked once per cycle; a request may have been lost.
        let asked = self.requested.entry(hash).or_default();
        if asked.len() + 1 >= self.cfg.n {
            asked.clear();
        }
        if asked.insert(from) {
            self.send(from, Msg::BlockRequest { hash }, out);
        }
    }

    /// `hash` descends from (or is) `target`, judged over known blocks.
    fn extends(&self, mut hash: Digest, target: &Digest) -> bool {
        let target_height = match self.blocks.get(target) {
            Some(b) => b.height,
            None => return false,
        };
        loop {
            if hash == *target {
                return true;
            }
            match self.blocks.get(&hash) {
                Some(b) if b.height > target_height => hash = b.parent,
                _ => return false,
            }
        }
    }

    /// A PREPARE from the view's leader: store the block and vote if safe.
    pub fn on_propose(&mut self, from: NodeId, msg: Msg, out: &mut Vec<Action>) {
        let Msg::Prepare { view, ref block, ref justify } = msg else {
            return;
        };
        if from != self.leader(view) || block.proposer != from || block.view != view {
            self.stats.ignored_proposals += 1;
            return;
        }
        if view < self.view
            || justify.phase != Phase::Prepare
            || block.parent != justify.block
            || !self.verify(justify)
        {
            self.stats.ignored_proposals += 1;
            return;
        }
        let Some(parent) = self.blocks.get(&block.parent) else {
            let parent = block.parent;
            self.request_block(parent, from, out);
            self.pending_prepares.push((from, msg));
            return;
        };
        if block.height != parent.height + 1 {
            self.stats.ignored_proposals += 1;
            return;
        }
        let justify = justify.clone();
        let block = block.clone();
        self.update_high(&justify);
        if view > self.view {
            self.enter_view(view, false, out);
        }
        let hash = block.hash();
        self.blocks.insert(hash, block);
        let safe = self.extends(hash, &self.locked.block) || justify.view > self.locked.view;
        let byzantine = self.behavior == Behavior::Equivocate;
        if (safe && self.voted.insert((view, Phase::Prepare))) || byzantine {
            self.vote(view, Phase::Prepare, hash, out);
        }
        self.retry_pending(out);
    }

    fn vote(&mut self, view: View, phase: Phase, block: Digest, out: &mut Vec<Action>) {
        let attestation = self.signer.sign(self.id, &vote_payload(view, phase, &block));
        let leader = self.leader(view);
        let v = Vote { voter: self.id, view, phase, block, attestation };
        self.send(leader, Msg::Vote(v), out);
    }

    /// A vote arriving at the leader; a quorum forms a certificate and moves
    /// the view to its next phase.
    pub fn on_vote(&mut self, from: NodeId, vote: Vote, out: &mut Vec<Action>) {
        if vote.voter != from || self.leader(vote.view) != self.id || vote.view < self.view {
            return;
        }
        let payload = vote_payload(vote.view, vote.phase, &vote.block);
        if !self.signer.verify(vote.voter, &payload, &vote.attestation) {
            self.stats.rejected_votes += 1;
            return;
        }
        if !self.seen_votes.insert((vote.view, vote.phase, vote.voter)) {
            return;
        }
        let key = (vote.view, vote.phase, vote.block);
        let entry = self.votes.entry(key).or_default();
        entry.push((vote.voter, vote.attestation));
        if entry.len() != self.cfg.quorum() || vote.view != self.view {
            return;
        }
        let mut signers = entry.clone();
        signers.sort_by_key(|(id, _)| *id);
        let qc = QuorumCert {
            view: vote.view,
            phase: vote.phase,
            block: vote.block,
            signers,
        };
        self.check_intersection(&qc);
        let view = vote.view;
        let next = match vote.phase {
            Phase::Prepare => Msg::PreCommit { view, qc },
            Phase::PreCommit => Msg::Commit { view, qc },
            Phase::Commit => Msg::Decide { view, qc },
        };
        self.broadcast(next, out);
    }

    fn check_intersection(&mut self, qc: &QuorumCert) {
        let set = qc.signer_set();
        let formed = self.formed.entry(qc.view).or_default();
        for other in formed.iter() {
            assert!(
                set.intersection(other).count() > self.cfg.f,
                "quorum certificates in view {} share at most f signers",
                qc.view
            );
        }
        formed.push(set);
    }

    fn on_phase_qc(&mut self, from: NodeId, view: View, qc: QuorumCert, expect: Phase, out: &mut Vec<Action>) {
        if from != self.leader(view) || qc.view != view || qc.phase != expect || view < self.view {
            return;
        }
        if !self.verify(&qc) {
            return;
        }
        if view > self.view {
            self.enter_view(view, false, out);
        }
        let phase = match expect {
            Phase::Prepare => {
                self.update_high(&qc);
                Phase::PreCommit
            }
            _ => {
                if qc.view > self.locked.view {
                    self.locked = qc.clone();
                }
                Phase::Commit
            }
        };
        if self.voted.insert((view, phase)) || self.behavior == Behavior::Equivocate {
            self.vote(view, phase, qc.block, out);
        }
    }

    /// A DECIDE carrying a commit certificate: commit the block and its
    /// uncommitted ancestors, then move to the next view.
    pub fn on_decide(&mut self, from: NodeId, qc: QuorumCert, out: &mut Vec<Action>) {
        if qc.phase != Phase::Commit || !self.verify(&qc) {
            return;
        }
        let before = self.committed.len();
        if !self.commit_chain(qc.block, from, out) {
            self.pending_decides.push((from, qc));
            return;
        }
        if self.last_commit.as_ref().is_none_or(|c| qc.view > c.view) {
            self.last_commit = Some(qc.clone());
        }
        if qc.view >= self.view {
            self.stats.committed_views.insert(qc.view);
            self.pacemaker.on_commit();
            self.enter_view(qc.view + 1, true, out);
        } else if self.committed.len() > before {
            // A late decision: drop the backoff and restart the current view's timer.
            self.pacemaker.on_commit();
            self.arm_timer(out);
        }
    }

    /// Returns false if an ancestor is missing (and has been requested).
    fn commit_chain(&mut self, hash: Digest, from: NodeId, out: &mut Vec<Action>) -> bool {
        let tip_height = self.committed_height();
        let mut chain = Vec::new();
        let mut cur = hash;
        loop {
            let Some(b) = self.blocks.get(&cur) else {
                self.request_block(cur, from, out);
                return false;
            };
            if b.height <= tip_height {
                let h = b.height as usize;
                let on_log = if h == 0 { cur == Block::genesis().hash() } else { self.committed[h - 1] == cur };
                assert!(on_log, "replica {} asked to commit a branch conflicting with height {h}", self.id);
                break;
            }
            chain.push(cur);
            cur = b.parent;
        }
        for hash in chain.into_iter().rev() {
            let b = &self.blocks[&hash];
            let mut txs = Vec::new();
            for tx in &b.batch {
                let id = tx.id();
                if self.committed_txs.insert(id) {
                    self.mempool.shift_remove(&id);
                    txs.push(tx.clone());
                }
            }
            self.committed.push(hash);
            self.stats.commits += 1;
            out.push(Action::Committed(CommittedBlock {
                height: b.height,
                view: b.view,
                hash,
                batch_len: b.batch.len(),
                txs,
            }));
        }
        if self.mempool.is_empty() {
            self.timer_armed = false;
            self.timer_token += 1;
        }
        true
    }

    fn on_block(&mut self, block: Block, out: &mut Vec<Action>) {
        let hash = block.hash();
        if self.requested.remove(&hash).is_none() {
            return;
        }
        self.blocks.entry(hash).or_insert(block);
        self.retry_pending(out);
        if self.leader(self.view) == self.id {
            self.try_propose(out);
        }
    }

    fn retry_pending(&mut self, out: &mut Vec<Action>) {
        let prepares = std::mem::take(&mut self.pending_prepares);
        for (from, msg) in prepares {
            if let Msg::Prepare { block, .. } = &msg {
                if !self.blocks.contains_key(&block.parent) {
                    self.pending_prepares.push((from, msg));
                    continue;
                }
            }
            self.on_propose(from, msg, out);
        }
        let decides = std::mem::take(&mut self.pending_decides);
        for (from, qc) in decides {
            self.on_decide(from, qc, out);
        }
    }
}
