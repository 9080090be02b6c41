//! Byzantine behaviours.
//!
//! Weight attacks (`Gaussian`, `SignFlip`) rewrite a victim's trained weights
//! before they are published. `LabelFlip` poisons the victim's data once at
//! setup. Protocol attacks (`WrongRoundUpd`, `EarlyAgg`, `Crash`) rewrite the
//! transactions a victim submits. By default victims keep voting honestly in
//! consensus; `consensus_crash` silences a crashed victim entirely.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::ContractError;
use crate::model::{NodeId, RoundId, Transaction, TxKind, WeightVector};
use crate::tasks::DataShard;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackKind {
    #[default]
    None,
    Gaussian,
    SignFlip,
    LabelFlip,
    WrongRoundUpd,
    EarlyAgg,
    Crash,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "NONE",
            AttackKind::Gaussian => "GAUSSIAN",
            AttackKind::SignFlip => "SIGN_FLIP",
            AttackKind::LabelFlip => "LABEL_FLIP",
            AttackKind::WrongRoundUpd => "WRONG_ROUND_UPD",
            AttackKind::EarlyAgg => "EARLY_AGG",
            AttackKind::Crash => "CRASH",
        }
    }

    pub fn poisons_weights(self) -> bool {
        matches!(self, AttackKind::Gaussian | AttackKind::SignFlip)
    }

    pub fn misbehaves_in_protocol(self) -> bool {
        matches!(
            self,
            AttackKind::WrongRoundUpd | AttackKind::EarlyAgg | AttackKind::Crash
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttackSpec {
    #[serde(default)]
    pub kind: AttackKind,
    /// Gaussian std, or the sign-flip scale (negative).
    #[serde(default)]
    pub factor: f64,
    #[serde(default)]
    pub victims: BTreeSet<NodeId>,
    /// First round a `Crash` victim stays silent for.
    #[serde(default)]
    pub crash_round: u64,
    /// A crashed victim also stops participating in consensus.
    #[serde(default)]
    pub consensus_crash: bool,
    /// Gaussian attack replaces the weights with pure noise instead of adding it.
    #[serde(default)]
    pub gaussian_replace: bool,
    /// Victims' consensus replicas send conflicting proposals when they lead.
    #[serde(default)]
    pub equivocate: bool,
}

impl AttackSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(kind: AttackKind, factor: f64, victims: impl IntoIterator<Item = NodeId>) -> Self {
        Self {
            kind,
            factor,
            victims: victims.into_iter().collect(),
            ..Self::default()
        }
    }

    /// The `count` highest node ids out of `n`.
    pub fn top_victims(n: usize, count: usize) -> BTreeSet<NodeId> {
        (n.saturating_sub(count)..n).map(|i| NodeId(i as u32)).collect()
    }

    pub fn is_victim(&self, id: NodeId) -> bool {
        self.kind != AttackKind::None && self.victims.contains(&id)
    }

    /// Byzantine rate `|victims| / n`.
    pub fn beta(&self, n: usize) -> f64 {
        if self.kind == AttackKind::None || n == 0 {
            0.0
        } else {
            self.victims.len() as f64 / n as f64
        }
    }

    /// Whether `id` is crashed once its replica has reached `round`.
    pub fn crashed_at(&self, id: NodeId, round: RoundId) -> bool {
        self.is_victim(id) && self.kind == AttackKind::Crash && round.0 >= self.crash_round
    }
}

/// Rewrites a victim's trained weights.
pub fn poison_weights(
    spec: &AttackSpec,
    w_agg: &WeightVector,
    w_trained: &WeightVector,
    rng: &mut impl Rng,
) -> Result<WeightVector, ContractError> {
    match spec.kind {
        AttackKind::Gaussian => {
            let base = if spec.gaussian_replace {
                WeightVector::zeros(w_trained.dim())
            } else {
                w_trained.clone()
            };
            Ok(WeightVector::new(
                base.as_slice()
                    .iter()
                    .map(|x| x + spec.factor * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            ))
        }
        AttackKind::SignFlip => Ok(WeightVector::new(
            w_agg
                .as_slice()
                .iter()
                .zip(w_trained.as_slice())
                .map(|(a, t)| a + spec.factor * (t - a))
                .collect(),
        )),
        other => Err(ContractError(format!(
            "poison_weights called with {}",
            other.as_str()
        ))),
    }
}

/// Replaces every binary label `y` by `1 - y`.
pub fn flip_labels(shard: &DataShard) -> DataShard {
    let mut out = shard.clone();
    for e in &mut out.examples {
        e.label = 1 - e.label.min(1);
    }
    out
}

/// When in a round a victim's transaction is released.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    RoundStart,
    AfterTraining,
    AfterGstLt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxIntent {
    pub tx: Transaction,
    pub schedule: Schedule,
}

/// Rewrites the transactions a client plans for `round`.
pub fn misbehave_protocol(
    spec: &AttackSpec,
    round: RoundId,
    planned: Vec<TxIntent>,
    rng: &mut impl Rng,
) -> Vec<TxIntent> {
    match spec.kind {
        AttackKind::WrongRoundUpd => planned
            .into_iter()
            .map(|mut i| {
                if i.tx.kind() == TxKind::Upd {
                    let t = i.tx.target_round().0;
                    let wrong = if t == 0 || rng.random::<bool>() { t + 1 } else { t - 1 };
                    i.tx = i.tx.with_target_round(RoundId(wrong));
                }
                i
            })
            .collect(),
        AttackKind::EarlyAgg => planned
            .into_iter()
            .map(|mut i| {
                if i.tx.kind() == TxKind::Agg {
                    i.schedule = Schedule::RoundStart;
                }
                i
            })
            .collect(),
        AttackKind::Crash if round.0 >= spec.crash_round => Vec::new(),
        _ => planned,
    }
}
