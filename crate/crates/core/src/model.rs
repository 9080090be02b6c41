//! Core domain types: weight vectors, digests, identifiers, transactions and
//! the system configuration.
//!
//! Weights are serialized canonically as `d` little-endian IEEE-754 binary64
//! values (8·d bytes, no header). A [`Digest`] is the SHA-256 hash of that
//! byte string, which makes digests stable across runs and platforms.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{ConfigError, ModelError};

/// Flat model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sq_dist(&self, other: &WeightVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Size of the canonical encoding in bytes.
    pub fn byte_len(&self) -> usize {
        8 * self.0.len()
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Canonical byte layout: `d` consecutive little-endian `f64` values.
pub fn canonical_serialize(w: &WeightVector) -> Result<Vec<u8>, ModelError> {
    let mut out = Vec::with_capacity(w.byte_len());
    for (index, &value) in w.as_slice().iter().enumerate() {
        if !value.is_finite() {
            return Err(ModelError::NonFinite { index, value });
        }
        out.extend_from_slice(&value.to_le_bytes());
    }
    Ok(out)
}

pub fn canonical_deserialize(bytes: &[u8]) -> Result<WeightVector, ModelError> {
    if !bytes.len().is_multiple_of(8) {
        return Err(ModelError::BadLength(bytes.len()));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect::<Vec<_>>();
    let w = WeightVector(values);
    if let Some((index, &value)) = w.as_slice().iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(ModelError::NonFinite { index, value });
    }
    Ok(w)
}

/// 32-byte SHA-256 content hash.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const LEN: usize = 32;

    pub fn of_bytes(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Hash of the canonical serialization.
pub fn digest(w: &WeightVector) -> Result<Digest, ModelError> {
    Ok(Digest::of_bytes(&canonical_serialize(w)?))
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct RoundId(pub u64);

impl RoundId {
    pub fn next(self) -> Self {
        RoundId(self.0 + 1)
    }
}

impl fmt::Display for RoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TxKind {
    Upd,
    Agg,
}

/// A transaction ordered by consensus and executed by every replica.
///
/// `seq` is a per-sender counter so that two submissions with the same
/// content are still distinct log entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Transaction {
    kind: TxKind,
    sender: NodeId,
    target_round: RoundId,
    seq: u64,
    payload: Option<Digest>,
}

impl Transaction {
    pub const UPD_TAG: u8 = 0x01;
    pub const AGG_TAG: u8 = 0x02;

    pub fn upd(sender: NodeId, target_round: RoundId, seq: u64, payload: Digest) -> Self {
        Self {
            kind: TxKind::Upd,
            sender,
            target_round,
            seq,
            payload: Some(payload),
        }
    }

    pub fn agg(sender: NodeId, target_round: RoundId, seq: u64) -> Self {
        Self {
            kind: TxKind::Agg,
            sender,
            target_round,
            seq,
            payload: None,
        }
    }

    pub fn kind(&self) -> TxKind {
        self.kind
    }

    pub fn sender(&self) -> NodeId {
        self.sender
    }

    pub fn target_round(&self) -> RoundId {
        self.target_round
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn payload(&self) -> Option<Digest> {
        self.payload
    }

    /// Same transaction with a different target round.
    pub fn with_target_round(mut self, round: RoundId) -> Self {
        self.target_round = round;
        self
    }

    pub fn encoded_len(&self) -> usize {
        1 + 4 + 8 + 8 + if self.payload.is_some() { Digest::LEN } else { 0 }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(match self.kind {
            TxKind::Upd => Self::UPD_TAG,
            TxKind::Agg => Self::AGG_TAG,
        });
        out.extend_from_slice(&self.sender.0.to_le_bytes());
        out.extend_from_slice(&self.target_round.0.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        if let Some(d) = &self.payload {
            out.extend_from_slice(&d.0);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn id(&self) -> Digest {
        Digest::of_bytes(&self.encode())
    }
}

/// Which resilience bound [`validate_config`] enforces.
///
/// `Theorem` is the `n >= 3f + 3` bound under which Multi-Krum aggregation
/// over a HotStuff log is Byzantine fault tolerant. `Consensus` is the plain
/// `n >= 3f + 1` HotStuff bound, needed to reproduce the small `a+b`
/// deployments (3+1, 5+2, 7+3) used in the robustness sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultBound {
    #[default]
    Theorem,
    Consensus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n: usize,
    pub f: usize,
    /// Model dimension.
    pub d: usize,
    /// Pool retention in rounds.
    #[serde(default = "default_tau")]
    pub tau: u64,
    /// Round budget T.
    pub rounds: u64,
    /// Local-training stabilization time, in simulated ticks.
    pub gst_lt: u64,
    /// Multi-Krum selection count; `None` means `available - f`.
    #[serde(default)]
    pub k: Option<usize>,
    /// Krum neighborhood; `None` means `available - f - 2`.
    #[serde(default)]
    pub neighborhood: Option<usize>,
    #[serde(default)]
    pub fault_bound: FaultBound,
}

fn default_tau() -> u64 {
    2
}

impl SystemConfig {
    /// Consensus quorum size.
    pub fn quorum(&self) -> usize {
        self.n - self.f
    }

    /// Number of distinct `AGG` votes that rotate a round.
    pub fn agg_quorum(&self) -> usize {
        self.f + 1
    }
}

pub fn validate_config(c: &SystemConfig) -> Result<(), ConfigError> {
    if c.n == 0 {
        return Err(ConfigError::new("n must be positive"));
    }
    match c.fault_bound {
        FaultBound::Theorem if c.n < 3 * c.f + 3 => {
            return Err(ConfigError::new(format!(
                "n < 3f+3 (n={}, f={})",
                c.n, c.f
            )))
        }
        FaultBound::Consensus if c.n < 3 * c.f + 1 => {
            return Err(ConfigError::new(format!(
                "n < 3f+1 (n={}, f={})",
                c.n, c.f
            )))
        }
        _ => {}
    }
    if c.tau < 2 {
        return Err(ConfigError::new(format!("tau < 2 (tau={})", c.tau)));
    }
    if c.d == 0 {
        return Err(ConfigError::new("d must be positive"));
    }
    if c.gst_lt == 0 {
        return Err(ConfigError::new("gst_lt must be positive"));
    }
    if let Some(k) = c.k {
        if k < 1 || k > c.n - c.f {
            return Err(ConfigError::new(format!(
                "k out of range: need 1 <= k <= n-f = {}, got {k}",
                c.n - c.f
            )));
        }
    }
    if let Some(nb) = c.neighborhood {
        if nb < 1 || nb + 2 > c.n {
            return Err(ConfigError::new(format!(
                "neighborhood out of range: need 1 <= neighborhood <= n-2 = {}, got {nb}",
                c.n.saturating_sub(2)
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: usize, f: usize, tau: u64) -> SystemConfig {
        SystemConfig {
            n,
            f,
            d: 4,
            tau,
            rounds: 10,
            gst_lt: 100,
            k: None,
            neighborhood: None,
            fault_bound: FaultBound::Theorem,
        }
    }

    #[test]
    fn zero_vector_serializes_to_zero_bytes() {
        let bytes = canonical_serialize(&WeightVector::zeros(2)).unwrap();
        assert_eq!(bytes, vec![0u8; 16]);
    }

    #[test]
    fn one_matches_reference_ieee754_encoding() {
        // binary64 1.0: sign 0, biased exponent 1023 (0x3ff), mantissa 0.
        let reference: u64 = 1023u64 << 52;
        assert_eq!(reference, 0x3ff0_0000_0000_0000);
        let bytes = canonical_serialize(&WeightVector::new(vec![1.0])).unwrap();
        assert_eq!(bytes, reference.to_le_bytes().to_vec());
        assert_eq!(bytes, vec![0, 0, 0, 0, 0, 0, 0xf0, 0x3f]);
    }

    #[test]
    fn non_finite_is_rejected() {
        let err = canonical_serialize(&WeightVector::new(vec![0.0, f64::NAN])).unwrap_err();
        assert!(matches!(err, ModelError::NonFinite { index: 1, .. }));
        assert!(digest(&WeightVector::new(vec![f64::INFINITY])).is_err());
    }

    #[test]
    fn zero_vector_digest_is_pinned() {
        // SHA-256 of 32 zero bytes (d = 4).
        let d = digest(&WeightVector::zeros(4)).unwrap();
        assert_eq!(
            d.to_hex(),
            "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925"
        );
    }

    #[test]
    fn digest_is_deterministic() {
        let w = WeightVector::new(vec![0.5, -1.25, 3.0]);
        assert_eq!(digest(&w).unwrap(), digest(&w.clone()).unwrap());
    }

    #[test]
    fn random_pairs_never_collide() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(7, 0);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..10_000 {
            let a = WeightVector::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            let mut b = a.clone();
            let c = rng.random_range(0..3);
            b.as_mut_slice()[c] += 1e-9;
            let (da, db) = (digest(&a).unwrap(), digest(&b).unwrap());
            assert_ne!(da, db);
            seen.insert(da);
        }
        assert_eq!(seen.len(), 10_000);
    }

    #[test]
    fn validate_examples() {
        assert!(validate_config(&cfg(6, 1, 2)).is_ok());
        let e = validate_config(&cfg(5, 1, 2)).unwrap_err();
        assert!(e.reason.contains("n < 3f+3"), "{e}");
        let e = validate_config(&cfg(4, 0, 1)).unwrap_err();
        assert!(e.reason.contains("tau < 2"), "{e}");
    }

    #[test]
    fn validate_is_exactly_the_theorem_bound() {
        for n in 1..=30 {
            for f in 0..=9 {
                let ok = validate_config(&cfg(n, f, 2)).is_ok();
                assert_eq!(ok, n >= 3 * f + 3, "n={n} f={f}");
            }
        }
    }

    #[test]
    fn consensus_bound_admits_small_deployments() {
        let mut c = cfg(4, 1, 2);
        assert!(validate_config(&c).is_err());
        c.fault_bound = FaultBound::Consensus;
        assert!(validate_config(&c).is_ok());
        c.n = 3;
        assert!(validate_config(&c).is_err());
    }

    #[test]
    fn selection_bounds() {
        let mut c = cfg(6, 1, 2);
        c.k = Some(6);
        assert!(validate_config(&c).is_err());
        c.k = Some(5);
        c.neighborhood = Some(5);
        assert!(validate_config(&c).is_err());
        c.neighborhood = Some(4);
        assert!(validate_config(&c).is_ok());
    }

    #[test]
    fn transaction_shape() {
        let d = Digest::of_bytes(b"x");
        let u = Transaction::upd(NodeId(1), RoundId(3), 0, d);
        let a = Transaction::agg(NodeId(1), RoundId(3), 1);
        assert_eq!(u.payload(), Some(d));
        assert_eq!(a.payload(), None);
        assert_eq!(u.encode().len(), u.encoded_len());
        assert_eq!(a.encode().len(), a.encoded_len());
        assert_ne!(u.id(), a.id());
    }

    proptest! {
        #[test]
        fn serialization_round_trips(values in prop::collection::vec(-1e300f64..1e300, 0..64)) {
            let w = WeightVector::new(values);
            let bytes = canonical_serialize(&w).unwrap();
            prop_assert_eq!(bytes.len(), 8 * w.dim());
            let back = canonical_deserialize(&bytes).unwrap();
            for (a, b) in w.as_slice().iter().zip(back.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn swapping_unequal_coordinates_changes_digest(
            values in prop::collection::vec(-10.0f64..10.0, 2..16),
            i in 0usize..16, j in 0usize..16,
        ) {
            let (i, j) = (i % values.len(), j % values.len());
            prop_assume!(values[i] != values[j]);
            let mut swapped = values.clone();
            swapped.swap(i, j);
            let a = digest(&WeightVector::new(values)).unwrap();
            let b = digest(&WeightVector::new(swapped)).unwrap();
            prop_assert_ne!(a, b);
        }
    }
}
