//! Benchmark fixtures. The benches live in `benches/`.

use defl_core::model::{NodeId, WeightVector};

/// `n` deterministic candidate vectors of dimension `d`.
pub fn candidates(n: usize, d: usize) -> (Vec<WeightVector>, Vec<NodeId>) {
    let vs = (0..n)
        .map(|i| WeightVector::new((0..d).map(|j| ((i * 31 + j * 7) as f64 * 0.37).sin()).collect()))
        .collect();
    let owners = (0..n as u32).map(NodeId).collect();
    (vs, owners)
}
