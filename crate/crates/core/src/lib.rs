//! Decentralized, Byzantine-robust federated learning on a desk-scale simulator.
//!
//! Every simulated node runs two loops. The *client* loop aggregates the
//! previous round's weights with Multi-Krum, trains locally and commits an
//! `UPD` transaction followed by an `AGG` vote. The *replica* loop executes the
//! totally ordered transaction log produced by a basic HotStuff instance and
//! rotates the per-node weight slots once `f + 1` distinct `AGG` votes arrive.
//! Weights never travel through consensus: transactions carry SHA-256
//! digests, and the bytes live in a per-node content-addressed pool that is
//! filled on demand.
//!
//! Module map:
//!
//! * [`model`] – weight vectors, digests, transactions, system configuration.
//! * [`aggregation`] – FedAvg, Krum, Multi-Krum and the `eta(n, f)` margin.
//! * [`consensus`] – basic HotStuff with quorum certificates and a pacemaker.
//! * [`pool`] – the content-addressed weight pool.
//! * [`replica`] – round/weight synchronization state machine.
//! * [`client`] – the local-training client state machine.
//! * [`tasks`] – synthetic learning tasks, partitioning, SGD, evaluation.
//! * [`adversary`] – Byzantine behaviours.
//! * [`simnet`] – deterministic discrete-event network simulator.
//! * [`engine`] – a full node wiring all of the above onto the simulator.
//! * [`harness`] – experiment configs, runs, scenarios and CSV output.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` rejects NaN too.

pub mod adversary;
pub mod aggregation;
pub mod client;
pub mod consensus;
pub mod engine;
pub mod error;
pub mod harness;
pub mod model;
pub mod pool;
pub mod replica;
pub mod rng;
pub mod simnet;
pub mod tasks;

pub use error::{
    AggregationError, ConfigError, ContractError, DivergenceError, ModelError, PartitionError,
    PoolError, StallError,
};
pub use model::{
    canonical_deserialize, canonical_serialize, digest, validate_config, Digest, FaultBound,
    NodeId, RoundId, SystemConfig, Transaction, TxKind, WeightVector,
};
