//! The local-training client.
//!
//! A client whose local round lags the replica round aggregates the last
//! round's weights, trains, publishes its weights with an `UPD` for the next
//! round and, once that `UPD` is accepted, votes `AGG` no earlier than
//! `GST_LT` after the round started.

use crate::aggregation::{aggregate, AggregationRule};
use crate::model::{digest, NodeId, RoundId, Transaction, WeightVector};
use crate::replica::{LastSnapshot, Response};
use crate::simnet::Time;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub start_time: Time,
    pub target_round: RoundId,
    pub w_agg: WeightVector,
    /// Owners whose last-round weights were aggregated.
    pub selected: Vec<NodeId>,
    /// Aggregation was impossible and the client reused its own weights.
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Phase {
    Idle,
    Training(RoundPlan),
    UpdPending { plan: RoundPlan, upd: Transaction },
    /// `UPD` accepted; `AGG` due at `agg_at` (or already sent).
    Voting { target: RoundId, agg_at: Time, agg_sent: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdOutcome {
    /// Send `AGG` for `target` at time `at`.
    ScheduleAgg { target: RoundId, at: Time },
    /// Rejected; start over once the replica reaches the planned target.
    Abandon,
    /// Not this client's pending update.
    Ignored,
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: NodeId,
    pub l_round: RoundId,
    pub current_weights: WeightVector,
    pub gst_lt: Time,
    pub rule: AggregationRule,
    pub f_assumed: usize,
    pub k: Option<usize>,
    pub neighborhood: Option<usize>,
    phase: Phase,
    seq: u64,
}

impl ClientState {
    pub fn new(id: NodeId, initial: WeightVector, gst_lt: Time, rule: AggregationRule, f_assumed: usize) -> Self {
        Self {
            id,
            l_round: RoundId(0),
            current_weights: initial,
            gst_lt,
            rule,
            f_assumed,
            k: None,
            neighborhood: None,
            phase: Phase::Idle,
            seq: 0,
        }
    }

    pub fn with_selection(mut self, k: Option<usize>, neighborhood: Option<usize>) -> Self {
        self.k = k;
        self.neighborhood = neighborhood;
        self
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    /// An `UPD` is being prepared or awaits commit.
    pub fn upd_in_flight(&self) -> bool {
        matches!(self.phase, Phase::Training(_) | Phase::UpdPending { .. })
    }

    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    /// Starts a round when the client does not lead the replica.
    /// Round 0 trains from `bootstrap`; later rounds aggregate the available
    /// last-round weights, or reuse the client's own weights if too few exist.
    pub fn maybe_start_round(
        &mut self,
        now: Time,
        observed: RoundId,
        last: &LastSnapshot,
        bootstrap: &WeightVector,
    ) -> Option<RoundPlan> {
        if self.l_round > observed || self.upd_in_flight() {
            return None;
        }
        let (w_agg, selected, fell_back) = if observed == RoundId(0) {
            (bootstrap.clone(), Vec::new(), false)
        } else {
            let (vs, owners): (Vec<WeightVector>, Vec<NodeId>) =
                last.available().map(|(id, w)| (w.clone(), id)).unzip();
            match aggregate(self.rule, &vs, &owners, self.f_assumed, self.k, self.neighborhood) {
                Ok(a) => (a.weights, a.selected, false),
                Err(_) => (self.current_weights.clone(), Vec::new(), true),
            }
        };
        let plan = RoundPlan {
            start_time: now,
            target_round: observed.next(),
            w_agg,
            selected,
            fell_back,
        };
        self.phase = Phase::Training(plan.clone());
        Some(plan)
    }

    /// Training done: returns the `UPD` to commit for `plan`.
    pub fn finish_round(&mut self, plan: RoundPlan, trained: WeightVector) -> Transaction {
        let dg = digest(&trained).expect("trained weights are finite");
        self.current_weights = trained;
        let upd = Transaction::upd(self.id, plan.target_round, self.next_seq(), dg);
        self.phase = Phase::UpdPending { plan, upd: upd.clone() };
        upd
    }

    /// Replaces the pending `UPD` (used by protocol attacks).
    pub fn override_pending_upd(&mut self, tx: Transaction) {
        if let Phase::UpdPending { upd, .. } = &mut self.phase {
            *upd = tx;
        }
    }

    /// `AGG` is due at `start + max(gst_lt, elapsed)`, never before `now`.
    pub fn agg_time(&self, start: Time, now: Time) -> Time {
        start + self.gst_lt.max(now - start)
    }

    pub fn on_upd_response(&mut self, tx: &Transaction, resp: Response, now: Time) -> UpdOutcome {
        let Phase::UpdPending { plan, upd } = &self.phase else {
            return UpdOutcome::Ignored;
        };
        if upd.id() != tx.id() {
            return UpdOutcome::Ignored;
        }
        match resp {
            Response::Ok => {
                let target = plan.target_round;
                let at = self.agg_time(plan.start_time, now);
                self.l_round = target;
                self.phase = Phase::Voting { target, agg_at: at, agg_sent: false };
                UpdOutcome::ScheduleAgg { target, at }
            }
            _ => {
                // No second attempt at the same round: wait for the replica to
                // reach the planned target (immediate if it already has).
                self.l_round = self.l_round.max(plan.target_round);
                self.phase = Phase::Idle;
                UpdOutcome::Abandon
            }
        }
    }

    /// Marks the `AGG` sent and returns it, if one is due for `target`.
    pub fn take_agg(&mut self, target: RoundId) -> Option<Transaction> {
        let seq = self.seq + 1;
        match &mut self.phase {
            Phase::Voting { target: t, agg_sent, .. } if *t == target && !*agg_sent => {
                *agg_sent = true;
                self.seq = seq;
                Some(Transaction::agg(self.id, target, seq))
            }
            _ => None,
        }
    }

    /// An `AGG` built outside the normal schedule (early-vote attack).
    pub fn early_agg(&mut self, target: RoundId) -> Transaction {
        let seq = self.next_seq();
        Transaction::agg(self.id, target, seq)
    }

    /// The replica reached `round`: drop work aimed at rounds already closed.
    /// Returns true if an in-progress round was abandoned.
    pub fn on_rotation(&mut self, round: RoundId) -> bool {
        let stale = match &self.phase {
            Phase::Training(p) => p.target_round <= round,
            Phase::Voting { target, .. } => *target <= round,
            Phase::UpdPending { .. } | Phase::Idle => false,
        };
        if stale {
            let abandoned = matches!(self.phase, Phase::Training(_));
            self.phase = Phase::Idle;
            return abandoned;
        }
        false
    }
}
