//! Round and weight synchronization executed on the committed log.
//!
//! An `UPD` for round `r + 1` fills the sender's current slot. `AGG` votes for
//! round `r + 1` accumulate per distinct sender; at `f + 1` votes the round
//! advances and the current slots rotate into the last-round slots.

use std::collections::BTreeSet;

use sha2::{Digest as _, Sha256};

use crate::model::{Digest, NodeId, RoundId, Transaction, TxKind, WeightVector};
use crate::pool::WeightPool;

/// Execution outcome, named after the response codes of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Response {
    Ok,
    AlreadyUpdError,
    NotMeetQuorumWarning,
    AlreadyAggError,
    /// Sender outside `[0, n)`; the transaction has no effect.
    UnknownSender,
}

impl Response {
    pub fn as_str(self) -> &'static str {
        match self {
            Response::Ok => "OK",
            Response::AlreadyUpdError => "AlreadyUPDError",
            Response::NotMeetQuorumWarning => "NotMeetQuorumWarning",
            Response::AlreadyAggError => "AlreadyAGGError",
            Response::UnknownSender => "UnknownSender",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaState {
    n: usize,
    f: usize,
    r_round: RoundId,
    agg_voters: BTreeSet<NodeId>,
    w_cur: Vec<Option<Digest>>,
    w_last: Vec<Option<Digest>>,
}

impl ReplicaState {
    pub fn new(n: usize, f: usize) -> Self {
        Self {
            n,
            f,
            r_round: RoundId(0),
            agg_voters: BTreeSet::new(),
            w_cur: vec![None; n],
            w_last: vec![None; n],
        }
    }

    pub fn round(&self) -> RoundId {
        self.r_round
    }

    pub fn agg_voters(&self) -> &BTreeSet<NodeId> {
        &self.agg_voters
    }

    pub fn w_cur(&self) -> &[Option<Digest>] {
        &self.w_cur
    }

    pub fn w_last(&self) -> &[Option<Digest>] {
        &self.w_last
    }

    pub fn quorum(&self) -> usize {
        self.f + 1
    }

    pub fn exec(&mut self, tx: &Transaction) -> Response {
        match tx.kind() {
            TxKind::Upd => self.exec_upd(tx),
            TxKind::Agg => self.exec_agg(tx),
        }
    }

    pub fn exec_upd(&mut self, tx: &Transaction) -> Response {
        debug_assert_eq!(tx.kind(), TxKind::Upd);
        let sender = tx.sender().index();
        if sender >= self.n {
            return Response::UnknownSender;
        }
        if tx.target_round() == self.r_round.next() {
            // Last committed UPD of a round wins.
            self.w_cur[sender] = tx.payload();
            Response::Ok
        } else {
            Response::AlreadyUpdError
        }
    }

    pub fn exec_agg(&mut self, tx: &Transaction) -> Response {
        debug_assert_eq!(tx.kind(), TxKind::Agg);
        if tx.sender().index() >= self.n {
            return Response::UnknownSender;
        }
        if tx.target_round() != self.r_round.next() {
            return Response::AlreadyAggError;
        }
        self.agg_voters.insert(tx.sender());
        if self.agg_voters.len() >= self.quorum() {
            self.r_round = tx.target_round();
            self.agg_voters.clear();
            self.w_last = std::mem::replace(&mut self.w_cur, vec![None; self.n]);
            Response::Ok
        } else {
            Response::NotMeetQuorumWarning
        }
    }

    /// Hash over the full state, used to compare replicas.
    pub fn state_digest(&self) -> Digest {
        let mut h = Sha256::new();
        h.update(self.r_round.0.to_le_bytes());
        h.update((self.agg_voters.len() as u32).to_le_bytes());
        for v in &self.agg_voters {
            h.update(v.0.to_le_bytes());
        }
        for slot in self.w_cur.iter().chain(&self.w_last) {
            match slot {
                Some(d) => {
                    h.update([1u8]);
                    h.update(d.0);
                }
                None => h.update([0u8]),
            }
        }
        Digest(h.finalize().into())
    }
}

/// Last-round weights resolved through a pool.
#[derive(Debug, Clone, PartialEq)]
pub struct LastSnapshot {
    pub slots: Vec<Option<WeightVector>>,
    /// Digests committed for the last round but absent from the pool.
    pub missing: Vec<(NodeId, Digest)>,
}

impl LastSnapshot {
    pub fn available(&self) -> impl Iterator<Item = (NodeId, &WeightVector)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|w| (NodeId(i as u32), w)))
    }

    pub fn available_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}

pub fn snapshot_last(state: &ReplicaState, pool: &WeightPool) -> LastSnapshot {
    let mut missing = Vec::new();
    let slots = state
        .w_last
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            let dg = (*slot)?;
            match pool.get(&dg) {
                Ok(w) => Some(w.clone()),
                Err(_) => {
                    missing.push((NodeId(i as u32), dg));
                    None
                }
            }
        })
        .collect();
    LastSnapshot { slots, missing }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dg(x: u8) -> Digest {
        Digest([x; 32])
    }

    fn at_round(r: u64) -> ReplicaState {
        let mut s = ReplicaState::new(6, 1);
        s.r_round = RoundId(r);
        s
    }

    #[test]
    fn upd_for_next_round_is_accepted() {
        let mut s = at_round(5);
        let tx = Transaction::upd(NodeId(2), RoundId(6), 0, dg(1));
        assert_eq!(s.exec(&tx), Response::Ok);
        assert_eq!(s.w_cur()[2], Some(dg(1)));
    }

    #[test]
    fn upd_for_wrong_round_is_rejected() {
        let mut s = at_round(5);
        for r in [5, 7, 0] {
            let tx = Transaction::upd(NodeId(2), RoundId(r), 0, dg(1));
            assert_eq!(s.exec(&tx), Response::AlreadyUpdError);
        }
        assert!(s.w_cur().iter().all(Option::is_none));
    }

    #[test]
    fn duplicate_upd_last_writer_wins() {
        let mut s = at_round(5);
        assert_eq!(s.exec(&Transaction::upd(NodeId(2), RoundId(6), 0, dg(1))), Response::Ok);
        assert_eq!(s.exec(&Transaction::upd(NodeId(2), RoundId(6), 1, dg(2))), Response::Ok);
        assert_eq!(s.w_cur()[2], Some(dg(2)));
    }

    #[test]
    fn agg_quorum_rotates() {
        let mut s = at_round(5);
        s.exec(&Transaction::upd(NodeId(0), RoundId(6), 0, dg(7)));
        let cur_before = s.w_cur().to_vec();
        assert_eq!(
            s.exec(&Transaction::agg(NodeId(0), RoundId(6), 1)),
            Response::NotMeetQuorumWarning
        );
        assert_eq!(s.exec(&Transaction::agg(NodeId(3), RoundId(6), 0)), Response::Ok);
        assert_eq!(s.round(), RoundId(6));
        assert!(s.agg_voters().is_empty());
        assert_eq!(s.w_last(), &cur_before[..]);
        assert!(s.w_cur().iter().all(Option::is_none));
    }

    #[test]
    fn agg_for_current_round_is_rejected() {
        let mut s = at_round(5);
        assert_eq!(
            s.exec(&Transaction::agg(NodeId(0), RoundId(5), 0)),
            Response::AlreadyAggError
        );
    }

    #[test]
    fn repeated_agg_from_one_sender_counts_once() {
        let mut s = at_round(5);
        for seq in 0..5 {
            assert_eq!(
                s.exec(&Transaction::agg(NodeId(4), RoundId(6), seq)),
                Response::NotMeetQuorumWarning
            );
        }
        assert_eq!(s.round(), RoundId(5));
        assert_eq!(s.agg_voters().len(), 1);
    }

    #[test]
    fn unknown_sender_has_no_effect() {
        let mut s = at_round(0);
        let before = s.state_digest();
        assert_eq!(
            s.exec(&Transaction::upd(NodeId(6), RoundId(1), 0, dg(1))),
            Response::UnknownSender
        );
        assert_eq!(before, s.state_digest());
    }

    #[test]
    fn snapshot_bootstrap_and_missing() {
        let mut pool = WeightPool::new();
        let s = ReplicaState::new(4, 0);
        let snap = snapshot_last(&s, &pool);
        assert_eq!(snap.available_count(), 0);
        assert!(snap.missing.is_empty());

        let mut s = ReplicaState::new(4, 0);
        let mut stored = vec![];
        for i in 0..3u32 {
            let w = WeightVector::new(vec![i as f64]);
            let d = pool.put(w, RoundId(0)).unwrap();
            stored.push(d);
            s.exec(&Transaction::upd(NodeId(i), RoundId(1), 0, d));
        }
        s.exec(&Transaction::agg(NodeId(0), RoundId(1), 1));
        let snap = snapshot_last(&s, &pool);
        assert_eq!(snap.available_count(), 3);
        assert!(snap.slots[3].is_none());

        // A digest the pool never saw surfaces as missing.
        s.exec(&Transaction::upd(NodeId(3), RoundId(2), 0, dg(9)));
        s.exec(&Transaction::agg(NodeId(1), RoundId(2), 1));
        let snap = snapshot_last(&s, &pool);
        assert_eq!(snap.missing, vec![(NodeId(3), dg(9))]);
    }

    fn arb_tx() -> impl Strategy<Value = Transaction> {
        (any::<bool>(), 0u32..7, 0u64..6, 0u64..4, any::<u8>()).prop_map(|(upd, s, r, seq, d)| {
            if upd {
                Transaction::upd(NodeId(s), RoundId(r), seq, Digest([d; 32]))
            } else {
                Transaction::agg(NodeId(s), RoundId(r), seq)
            }
        })
    }

    proptest! {
        #[test]
        fn replicas_fed_the_same_log_agree(log in prop::collection::vec(arb_tx(), 0..200)) {
            let mut a = ReplicaState::new(6, 1);
            let mut b = ReplicaState::new(6, 1);
            for tx in &log {
                let ra = a.exec(tx);
                let rb = b.exec(tx);
                prop_assert_eq!(ra, rb);
                prop_assert_eq!(a.state_digest(), b.state_digest());
            }
        }

        #[test]
        fn round_monotone_and_rotation_atomic(log in prop::collection::vec(arb_tx(), 0..200)) {
            let mut s = ReplicaState::new(6, 1);
            for tx in &log {
                let before_round = s.round();
                let before_cur = s.w_cur().to_vec();
                let resp = s.exec(tx);
                prop_assert!(s.round() >= before_round);
                if tx.kind() == TxKind::Agg && resp == Response::Ok {
                    prop_assert_eq!(s.round().0, before_round.0 + 1);
                    prop_assert!(s.w_cur().iter().all(Option::is_none));
                    prop_assert_eq!(s.w_last(), &before_cur[..]);
                } else {
                    prop_assert_eq!(s.round(), before_round);
                }
            }
        }
    }
}
