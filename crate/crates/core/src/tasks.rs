//! Synthetic learning tasks, data partitioning, local SGD and evaluation.
//!
//! Two tasks are provided:
//!
//! * `Quadratic`: each example is a point `ξ` scattered around an optimum and
//!   the per-example loss is `½‖w − ξ‖²`.
//! * `Logistic`: binary labels from a fixed teacher direction on standard
//!   normal features (with an optional label-flip rate), per-example loss
//!   `ln(1 + exp(−s·w·x))` with `s = ±1`.
//!
//! Both losses are non-negative. Local training runs mini-batch SGD with the
//! step size `γ_t = γ₀ / (1 + t)`, where `t` counts a client's steps across
//! the whole run.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DivergenceError, PartitionError};
use crate::model::{NodeId, WeightVector};
use crate::rng::{stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskKind {
    Quadratic,
    Logistic,
}

/// Generator parameters for a synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub d: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Quadratic: std of examples around the optimum. Logistic: label-flip rate.
    #[serde(default)]
    pub noise: f64,
    /// Quadratic: std of the optimum's coordinates. Logistic: teacher norm.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    pub owner: NodeId,
    pub examples: Vec<Example>,
}

impl DataShard {
    pub fn size(&self) -> usize {
        self.examples.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub kind: TaskKind,
    pub d: usize,
    /// Optimum centre (quadratic) or teacher weights (logistic).
    pub target: WeightVector,
}

fn normal_vec(rng: &mut impl Rng, d: usize, std: f64) -> Vec<f64> {
    (0..d)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Task {
    /// Builds the task and its train/test sets from `seed`.
    pub fn generate(spec: &TaskSpec, seed: u64) -> (Task, Dataset, Dataset) {
        let mut rng = stream_rng(seed, stream::DATA);
        let d = spec.d;
        let target = match spec.kind {
            TaskKind::Quadratic => normal_vec(&mut rng, d, spec.scale),
            TaskKind::Logistic => {
                let mut t = normal_vec(&mut rng, d, 1.0);
                let norm = dot(&t, &t).sqrt().max(f64::MIN_POSITIVE);
                t.iter_mut().for_each(|x| *x *= spec.scale / norm);
                t
            }
        };
        let task = Task {
            kind: spec.kind,
            d,
            target: WeightVector::new(target),
        };
        let mut sample = |count: usize| Dataset {
            examples: (0..count).map(|_| task.sample_example(spec, &mut rng)).collect(),
        };
        let train = sample(spec.train_size);
        let test = sample(spec.test_size);
        (task, train, test)
    }

    fn sample_example(&self, spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Example {
        match self.kind {
            TaskKind::Quadratic => {
                let noise = normal_vec(rng, self.d, spec.noise);
                Example {
                    features: self
                        .target
                        .as_slice()
                        .iter()
                        .zip(noise)
                        .map(|(c, e)| c + e)
                        .collect(),
                    label: 0,
                }
            }
            TaskKind::Logistic => {
                let x = normal_vec(rng, self.d, 1.0);
                let mut y = u8::from(dot(self.target.as_slice(), &x) > 0.0);
                if spec.noise > 0.0 && rng.random::<f64>() < spec.noise {
                    y = 1 - y;
                }
                Example { features: x, label: y }
            }
        }
    }

    pub fn example_loss(&self, w: &[f64], ex: &Example) -> f64 {
        match self.kind {
            TaskKind::Quadratic => {
                0.5 * w
                    .iter()
                    .zip(&ex.features)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            }
            TaskKind::Logistic => {
                let s = if ex.label == 1 { 1.0 } else { -1.0 };
                softplus(-s * dot(w, &ex.features))
            }
        }
    }

    /// Adds `scale · ∇loss(w; ex)` into `out`.
    pub fn add_example_grad(&self, w: &[f64], ex: &Example, scale: f64, out: &mut [f64]) {
        match self.kind {
            TaskKind::Quadratic => {
                for ((o, a), b) in out.iter_mut().zip(w).zip(&ex.features) {
                    *o += scale * (a - b);
                }
            }
            TaskKind::Logistic => {
                let s = if ex.label == 1 { 1.0 } else { -1.0 };
                let coef = -s * sigmoid(-s * dot(w, &ex.features));
                for (o, x) in out.iter_mut().zip(&ex.features) {
                    *o += scale * coef * x;
                }
            }
        }
    }

    pub fn loss(&self, w: &WeightVector, examples: &[Example]) -> f64 {
        if examples.is_empty() {
            return 0.0;
        }
        examples
            .iter()
            .map(|e| self.example_loss(w.as_slice(), e))
            .sum::<f64>()
            / examples.len() as f64
    }

    /// Mean gradient over `examples`.
    pub fn gradient(&self, w: &WeightVector, examples: &[Example]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        if examples.is_empty() {
            return g;
        }
        let scale = 1.0 / examples.len() as f64;
        for e in examples {
            self.add_example_grad(w.as_slice(), e, scale, &mut g);
        }
        g
    }

    pub fn predict(&self, w: &[f64], ex: &Example) -> u8 {
        // Ties go to class 0.
        u8::from(dot(w, &ex.features) > 0.0)
    }
}

/// Shared seeded initial weights, `N(0, scale²)` per coordinate.
pub fn init_weights(d: usize, scale: f64, seed: u64) -> WeightVector {
    let mut rng = stream_rng(seed, stream::INIT);
    WeightVector::new(normal_vec(&mut rng, d, scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub gamma0: f64,
}

impl LrSchedule {
    pub fn new(gamma0: f64) -> Self {
        assert!(gamma0 > 0.0, "gamma0 must be positive");
        Self { gamma0 }
    }

    pub fn rate(&self, t: u64) -> f64 {
        self.gamma0 / (1.0 + t as f64)
    }
}

/// Splits `dataset` across `n` owners with per-class proportions drawn from
/// `Dir(alpha·1_n)`. Draws that leave a shard empty are repeated.
pub fn dirichlet_partition(
    dataset: &Dataset,
    n: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<DataShard>, PartitionError> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(PartitionError(format!("alpha must be positive, got {alpha}")));
    }
    if n == 0 {
        return Err(PartitionError("n must be positive".into()));
    }
    let mut by_class: std::collections::BTreeMap<u8, Vec<usize>> = Default::default();
    for (i, e) in dataset.examples.iter().enumerate() {
        by_class.entry(e.label).or_default().push(i);
    }
    if let Some((c, idx)) = by_class.iter().find(|(_, idx)| idx.len() < n) {
        return Err(PartitionError(format!(
            "class {c} has {} examples, fewer than n={n}",
            idx.len()
        )));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| PartitionError(e.to_string()))?;
    let mut rng = stream_rng(seed, stream::PARTITION);
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut degenerate = false;
        for idx in by_class.values() {
            let mut idx = idx.clone();
            idx.shuffle(&mut rng);
            let draws: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            if !(total > 0.0) || !total.is_finite() {
                degenerate = true;
                break;
            }
            let counts = largest_remainder(&draws, total, idx.len());
            let mut start = 0;
            for (owner, c) in counts.into_iter().enumerate() {
                assignment[owner].extend_from_slice(&idx[start..start + c]);
                start += c;
            }
        }
        if degenerate || assignment.iter().any(Vec::is_empty) {
            continue;
        }
        return Ok(assignment
            .into_iter()
            .enumerate()
            .map(|(owner, mut idx)| {
                idx.sort_unstable();
                DataShard {
                    owner: NodeId(owner as u32),
                    examples: idx.into_iter().map(|i| dataset.examples[i].clone()).collect(),
                }
            })
            .collect());
    }
    Err(PartitionError(format!(
        "no non-empty assignment after {ATTEMPTS} draws (alpha={alpha}, n={n})"
    )))
}

/// Integer counts proportional to `weights` summing to `total_items`;
/// leftovers go to the largest fractional parts, lowest index first.
fn largest_remainder(weights: &[f64], total: f64, total_items: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights
        .iter()
        .map(|w| w / total * total_items as f64)
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total_items.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Shuffles and deals examples round-robin: shard sizes differ by at most one.
pub fn iid_partition(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<DataShard>, PartitionError> {
    if n == 0 || dataset.len() < n {
        return Err(PartitionError(format!(
            "cannot split {} examples into {n} non-empty shards",
            dataset.len()
        )));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut stream_rng(seed, stream::PARTITION));
    let mut shards: Vec<DataShard> = (0..n)
        .map(|i| DataShard {
            owner: NodeId(i as u32),
            examples: Vec::new(),
        })
        .collect();
    for (pos, i) in idx.into_iter().enumerate() {
        shards[pos % n].examples.push(dataset.examples[i].clone());
    }
    Ok(shards)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
}

/// Mini-batch SGD from `w0` over shuffled passes of `shard`.
/// `step_counter` is the client's global step index `t`.
pub fn local_train(
    task: &Task,
    w0: &WeightVector,
    shard: &DataShard,
    params: &LocalTraining,
    step_counter: &mut u64,
    rng: &mut impl Rng,
) -> Result<WeightVector, DivergenceError> {
    let mut w = w0.clone().into_inner();
    if shard.examples.is_empty() {
        return Ok(WeightVector::new(w));
    }
    let batch = params.batch_size.max(1);
    let mut order: Vec<usize> = (0..shard.size()).collect();
    let mut grad = vec![0.0; task.d];
    for _ in 0..params.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &i in chunk {
                let ex = &shard.examples[i];
                loss += task.example_loss(&w, ex);
                task.add_example_grad(&w, ex, scale, &mut grad);
            }
            let gamma = params.schedule.rate(*step_counter);
            for (wi, gi) in w.iter_mut().zip(&grad) {
                *wi -= gamma * gi;
            }
            *step_counter += 1;
            if !loss.is_finite() || w.iter().any(|x| !x.is_finite()) {
                return Err(DivergenceError {
                    step: *step_counter,
                    loss: loss * scale,
                    weight_norm: dot(&w, &w).sqrt(),
                });
            }
        }
    }
    Ok(WeightVector::new(w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Classification accuracy; `None` for the quadratic task.
    pub accuracy: Option<f64>,
    pub loss: f64,
}

pub fn evaluate(task: &Task, w: &WeightVector, test: &[Example]) -> Evaluation {
    let loss = task.loss(w, test);
    let accuracy = match task.kind {
        TaskKind::Quadratic => None,
        TaskKind::Logistic if test.is_empty() => Some(0.0),
        TaskKind::Logistic => {
            let correct = test
                .iter()
                .filter(|e| task.predict(w.as_slice(), e) == e.label)
                .count();
            Some(correct as f64 / test.len() as f64)
        }
    };
    Evaluation { accuracy, loss }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradStats {
    /// `‖∇Q(w)‖` over the pooled shards.
    pub grad_norm: f64,
    /// Per-coordinate std of a size-`batch_size` mini-batch gradient drawn
    /// without replacement, i.e. `d·σ² = E‖G − ∇Q‖²`.
    pub sigma: f64,
}

pub fn grad_stats(task: &Task, w: &WeightVector, shards: &[DataShard], batch_size: usize) -> GradStats {
    let examples: Vec<&Example> = shards.iter().flat_map(|s| &s.examples).collect();
    let n = examples.len();
    if n == 0 {
        return GradStats {
            grad_norm: 0.0,
            sigma: 0.0,
        };
    }
    let per_example: Vec<Vec<f64>> = examples
        .iter()
        .map(|e| {
            let mut g = vec![0.0; task.d];
            task.add_example_grad(w.as_slice(), e, 1.0, &mut g);
            g
        })
        .collect();
    let mut mean = vec![0.0; task.d];
    for g in &per_example {
        for (m, x) in mean.iter_mut().zip(g) {
            *m += x / n as f64;
        }
    }
    let grad_norm = dot(&mean, &mean).sqrt();
    let b = batch_size.max(1);
    if b >= n {
        return GradStats {
            grad_norm,
            sigma: 0.0,
        };
    }
    let spread: f64 = per_example
        .iter()
        .map(|g| g.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let batch_var = spread / b as f64 * (n - b) as f64 / (n - 1) as f64;
    GradStats {
        grad_norm,
        sigma: (batch_var / task.d as f64).sqrt(),
    }
}
