//! Robust aggregation rules.
//!
//! Krum scores each candidate by the sum of squared distances to its
//! `neighborhood` closest peers; Multi-Krum averages the `k` best-scored
//! candidates. Every ranking breaks ties by ascending [`NodeId`] and then by
//! input position, and every mean is accumulated in ascending owner order, so
//! replicas that see the same candidate set compute bit-identical outputs
//! regardless of the order in which candidates were listed.

use serde::{Deserialize, Serialize};

use crate::error::AggregationError;
use crate::model::{NodeId, WeightVector};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub owner: NodeId,
    pub weights: WeightVector,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationParams {
    pub f_assumed: usize,
    pub k: usize,
    pub neighborhood: usize,
    #[serde(default)]
    pub sample_sizes: Option<Vec<f64>>,
}

impl AggregationParams {
    /// Parameters for `available` candidates. Unset overrides fall back to
    /// the classic definitions `k = available - f` and
    /// `neighborhood = available - f - 2`.
    pub fn for_available(
        available: usize,
        f_assumed: usize,
        k: Option<usize>,
        neighborhood: Option<usize>,
    ) -> Result<Self, AggregationError> {
        let k = k.unwrap_or_else(|| available.saturating_sub(f_assumed));
        let neighborhood =
            neighborhood.unwrap_or_else(|| available.saturating_sub(f_assumed + 2));
        let params = Self {
            f_assumed,
            k,
            neighborhood,
            sample_sizes: None,
        };
        params.check(available)?;
        Ok(params)
    }

    pub fn check(&self, available: usize) -> Result<(), AggregationError> {
        if self.k < 1 {
            return Err(AggregationError::Parameter("k must be at least 1".into()));
        }
        if self.neighborhood < 1 {
            return Err(AggregationError::InsufficientCandidates {
                available,
                required: self.f_assumed + 3,
            });
        }
        if self.neighborhood + 2 > available {
            return Err(AggregationError::InsufficientCandidates {
                available,
                required: self.neighborhood + 2,
            });
        }
        if self.k > available {
            return Err(AggregationError::InsufficientCandidates {
                available,
                required: self.k,
            });
        }
        Ok(())
    }
}

fn check_dims(vs: &[WeightVector]) -> Result<usize, AggregationError> {
    let d = vs.first().map(WeightVector::dim).unwrap_or(0);
    for v in vs {
        if v.dim() != d {
            return Err(AggregationError::Dimension {
                expected: d,
                actual: v.dim(),
            });
        }
    }
    Ok(d)
}

/// Symmetric matrix of squared Euclidean distances.
pub fn pairwise_sq_dists(vs: &[WeightVector]) -> Result<Vec<Vec<f64>>, AggregationError> {
    if vs.len() < 2 {
        return Err(AggregationError::InsufficientCandidates {
            available: vs.len(),
            required: 2,
        });
    }
    check_dims(vs)?;
    let m = vs.len();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let d = vs[i].sq_dist(&vs[j]);
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    Ok(out)
}

fn scores_from_dists(dists: &[Vec<f64>], neighborhood: usize) -> Vec<f64> {
    dists
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut others: Vec<f64> = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &d)| d)
                .collect();
            others.sort_by(f64::total_cmp);
            others[..neighborhood].iter().sum()
        })
        .collect()
}

pub fn krum_scores(vs: &[WeightVector], neighborhood: usize) -> Result<Vec<f64>, AggregationError> {
    if neighborhood < 1 || vs.len() < neighborhood + 1 {
        return Err(AggregationError::Parameter(format!(
            "neighborhood {neighborhood} needs 1 <= neighborhood <= m-1 (m={})",
            vs.len()
        )));
    }
    let dists = pairwise_sq_dists(vs)?;
    Ok(scores_from_dists(&dists, neighborhood))
}

/// Candidate positions ordered best-first: by score, then owner, then position.
fn ranking(scores: &[f64], owners: &[NodeId]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[a]
            .total_cmp(&scores[b])
            .then(owners[a].cmp(&owners[b]))
            .then(a.cmp(&b))
    });
    idx
}

fn check_owners(vs: &[WeightVector], owners: &[NodeId]) -> Result<(), AggregationError> {
    if vs.len() != owners.len() {
        return Err(AggregationError::Parameter(format!(
            "{} candidates but {} owners",
            vs.len(),
            owners.len()
        )));
    }
    Ok(())
}

pub fn krum_select(
    vs: &[WeightVector],
    owners: &[NodeId],
    neighborhood: usize,
) -> Result<ScoredCandidate, AggregationError> {
    check_owners(vs, owners)?;
    let scores = krum_scores(vs, neighborhood)?;
    let best = ranking(&scores, owners)[0];
    Ok(ScoredCandidate {
        owner: owners[best],
        weights: vs[best].clone(),
        score: scores[best],
    })
}

/// Positions of the `k` candidates Multi-Krum keeps, best first.
pub fn multi_krum_selection(
    vs: &[WeightVector],
    owners: &[NodeId],
    params: &AggregationParams,
) -> Result<Vec<usize>, AggregationError> {
    check_owners(vs, owners)?;
    if vs.len() < params.k {
        return Err(AggregationError::InsufficientCandidates {
            available: vs.len(),
            required: params.k,
        });
    }
    if params.k < 1 {
        return Err(AggregationError::Parameter("k must be at least 1".into()));
    }
    let scores = krum_scores(vs, params.neighborhood)?;
    let mut chosen = ranking(&scores, owners);
    chosen.truncate(params.k);
    Ok(chosen)
}

pub fn multi_krum(
    vs: &[WeightVector],
    owners: &[NodeId],
    params: &AggregationParams,
) -> Result<WeightVector, AggregationError> {
    let chosen = multi_krum_selection(vs, owners, params)?;
    Ok(mean_in_owner_order(vs, owners, &chosen))
}

/// Unweighted mean of `vs[chosen]`, summed in ascending owner order.
fn mean_in_owner_order(vs: &[WeightVector], owners: &[NodeId], chosen: &[usize]) -> WeightVector {
    let mut order = chosen.to_vec();
    order.sort_by_key(|&i| (owners[i], i));
    let d = vs[order[0]].dim();
    let mut acc = vec![0.0; d];
    for &i in &order {
        for (a, v) in acc.iter_mut().zip(vs[i].as_slice()) {
            *a += v;
        }
    }
    let k = order.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    WeightVector::new(acc)
}

/// Sample-size weighted average `Σ sᵢ·vᵢ / Σ sᵢ`.
pub fn fed_avg(vs: &[WeightVector], sample_sizes: &[f64]) -> Result<WeightVector, AggregationError> {
    if vs.is_empty() {
        return Err(AggregationError::InsufficientCandidates {
            available: 0,
            required: 1,
        });
    }
    if vs.len() != sample_sizes.len() {
        return Err(AggregationError::Parameter(format!(
            "{} vectors but {} sample sizes",
            vs.len(),
            sample_sizes.len()
        )));
    }
    if let Some(bad) = sample_sizes.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(AggregationError::Parameter(format!(
            "sample sizes must be positive, got {bad}"
        )));
    }
    let d = check_dims(vs)?;
    let total: f64 = sample_sizes.iter().sum();
    let mut acc = vec![0.0; d];
    for (v, s) in vs.iter().zip(sample_sizes) {
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += s * x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Ok(WeightVector::new(acc))
}

/// Unweighted mean, summed in ascending owner order.
pub fn mean(vs: &[WeightVector], owners: &[NodeId]) -> Result<WeightVector, AggregationError> {
    check_owners(vs, owners)?;
    if vs.is_empty() {
        return Err(AggregationError::InsufficientCandidates {
            available: 0,
            required: 1,
        });
    }
    check_dims(vs)?;
    let all: Vec<usize> = (0..vs.len()).collect();
    Ok(mean_in_owner_order(vs, owners, &all))
}

/// The margin factor
/// `eta(n, f) = sqrt(2 (n - f + (f (n - f - 2) + f² (n - f - 1)) / (n - 2f - 2)))`.
pub fn eta(n: usize, f: usize) -> Result<f64, AggregationError> {
    if n <= 2 * f + 2 {
        return Err(AggregationError::Parameter(format!(
            "eta needs n > 2f+2 (n={n}, f={f})"
        )));
    }
    let (n, f) = (n as f64, f as f64);
    let inner = n - f + (f * (n - f - 2.0) + f * f * (n - f - 1.0)) / (n - 2.0 * f - 2.0);
    Ok((2.0 * inner).sqrt())
}

/// Whether `eta(n, f)·√d·σ < ‖g‖`.
pub fn bft_margin_ok(
    n: usize,
    f: usize,
    d: usize,
    sigma_grad: f64,
    grad_norm: f64,
) -> Result<bool, AggregationError> {
    Ok(eta(n, f)? * (d as f64).sqrt() * sigma_grad < grad_norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AggregationRule {
    FedAvg,
    Krum,
    MultiKrum,
}

impl AggregationRule {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationRule::FedAvg => "FEDAVG",
            AggregationRule::Krum => "KRUM",
            AggregationRule::MultiKrum => "MULTI_KRUM",
        }
    }
}

impl std::fmt::Display for AggregationRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result of applying an [`AggregationRule`] to the available candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub weights: WeightVector,
    /// Owners whose vectors contributed, ascending.
    pub selected: Vec<NodeId>,
}

/// Applies `rule` to the candidate set. FedAvg is unweighted here: replicas
/// never learn other nodes' dataset sizes.
pub fn aggregate(
    rule: AggregationRule,
    vs: &[WeightVector],
    owners: &[NodeId],
    f_assumed: usize,
    k: Option<usize>,
    neighborhood: Option<usize>,
) -> Result<Aggregate, AggregationError> {
    check_owners(vs, owners)?;
    let mut selected: Vec<NodeId>;
    let weights = match rule {
        AggregationRule::FedAvg => {
            selected = owners.to_vec();
            mean(vs, owners)?
        }
        AggregationRule::Krum => {
            let nb = AggregationParams::for_available(vs.len(), f_assumed, Some(1), neighborhood)?
                .neighborhood;
            let best = krum_select(vs, owners, nb)?;
            selected = vec![best.owner];
            best.weights
        }
        AggregationRule::MultiKrum => {
            let params = AggregationParams::for_available(vs.len(), f_assumed, k, neighborhood)?;
            let chosen = multi_krum_selection(vs, owners, &params)?;
            selected = chosen.iter().map(|&i| owners[i]).collect();
            mean_in_owner_order(vs, owners, &chosen)
        }
    };
    selected.sort();
    Ok(Aggregate { weights, selected })
}
