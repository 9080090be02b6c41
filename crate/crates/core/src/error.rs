//! Error types shared across the crate.

use thiserror::Error;

use crate::model::{Digest, NodeId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("cannot serialize non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("serialized weights must be a multiple of 8 bytes, got {0}")]
    BadLength(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid configuration: {reason}")]
pub struct ConfigError {
    pub reason: String,
}

impl ConfigError {
    pub fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregationError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("insufficient candidates: have {available}, need {required}")]
    InsufficientCandidates { available: usize, required: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("digest {0} not found in pool")]
    NotFound(Digest),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("partition failed: {0}")]
pub struct PartitionError(pub String);

#[derive(Debug, Clone, PartialEq, Error)]
#[error("training diverged at step {step}: loss {loss}, weight norm {weight_norm}")]
pub struct DivergenceError {
    pub step: u64,
    pub loss: f64,
    pub weight_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("contract violation: {0}")]
pub struct ContractError(pub String);

/// Why a simulation stopped before its goal was reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StallReason {
    QueueExhausted,
    TimeLimit(u64),
}

/// The simulation could not reach its stop condition.
///
/// `trace` holds the most recent processed events, oldest first, for
/// post-mortem inspection.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("simulation stalled at t={at} ({reason:?}); last events: {}", trace.join(" | "))]
pub struct StallError {
    pub at: u64,
    pub reason: StallReason,
    pub trace: Vec<String>,
}

/// Any failure surfaced by an experiment run.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Stall(#[from] StallError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error("node {node} failed: {reason}")]
    Node { node: NodeId, reason: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
