use crate::adversary::{AttackKind, AttackSpec};
use crate::aggregation::AggregationRule;
use crate::error::ConfigError;
use crate::model::{FaultBound, SystemConfig};
use crate::simnet::DelayModel;
use crate::tasks::{TaskKind, TaskSpec};

use super::config::{ExperimentConfig, TrainingConfig};

pub const SCENARIOS: [&str; 3] = ["attack-sweep", "byzantine-rate-sweep", "scale-sweep"];

/// The rules compared in every sweep.
pub const RULES: [AggregationRule; 2] = [AggregationRule::FedAvg, AggregationRule::MultiKrum];

/// Logistic regression, d=20, 2000/500 examples, Dirichlet(1) split, 50 rounds.
pub fn base_logistic(n: usize, f: usize, rule: AggregationRule) -> ExperimentConfig {
    let d = 20;
    ExperimentConfig {
        name: format!("logistic-n{n}"),
        system: SystemConfig {
            n,
            f,
            d,
            tau: 2,
            rounds: 50,
            gst_lt: 400,
            k: None,
            neighborhood: None,
            fault_bound: FaultBound::Consensus,
        },
        task: TaskSpec {
            kind: TaskKind::Logistic,
            d,
            train_size: 2000,
            test_size: 500,
            noise: 0.05,
            scale: 1.0,
        },
        training: TrainingConfig {
            epochs: 1,
            batch_size: 50,
            gamma0: 10.0,
            init_scale: 2.0,
        },
        partition_alpha: Some(1.0),
        attack: AttackSpec::none(),
        rule,
        delay: DelayModel::default(),
        view_timeout: 200,
        train_frac: (0.2, 0.5),
        seeds: (0..10).collect(),
        output: None,
    }
}

/// Quadratic task with `f = 0` and an IID split.
pub fn base_quadratic(n: usize, rule: AggregationRule) -> ExperimentConfig {
    let d = 8;
    ExperimentConfig {
        name: format!("quadratic-n{n}"),
        system: SystemConfig {
            n,
            f: 0,
            d,
            tau: 2,
            rounds: 200,
            gst_lt: 400,
            k: None,
            neighborhood: None,
            fault_bound: FaultBound::Theorem,
        },
        task: TaskSpec {
            kind: TaskKind::Quadratic,
            d,
            train_size: 600,
            test_size: 100,
            noise: 1.0,
            scale: 1.0,
        },
        training: TrainingConfig {
            epochs: 1,
            batch_size: 10,
            gamma0: 2.0,
            init_scale: 3.0,
        },
        partition_alpha: None,
        attack: AttackSpec::none(),
        rule,
        delay: DelayModel::default(),
        view_timeout: 200,
        train_frac: (0.2, 0.5),
        seeds: (0..10).collect(),
        output: None,
    }
}

fn with_attack(mut cfg: ExperimentConfig, kind: AttackKind, factor: f64, victims: usize, label: &str) -> ExperimentConfig {
    cfg.attack = if kind == AttackKind::None || victims == 0 {
        AttackSpec::none()
    } else {
        AttackSpec {
            victims: AttackSpec::top_victims(cfg.system.n, victims),
            ..AttackSpec::new(kind, factor, [])
        }
    };
    cfg.name = format!("{label}/{}", cfg.rule);
    cfg
}

/// Threat rows: no attack, Gaussian ×2, sign-flip ×3, label-flip; one victim of 4.
pub fn attack_rows() -> Vec<(&'static str, AttackKind, f64)> {
    vec![
        ("none", AttackKind::None, 0.0),
        ("gaussian-0.03", AttackKind::Gaussian, 0.03),
        ("gaussian-1", AttackKind::Gaussian, 1.0),
        ("sign-flip-1", AttackKind::SignFlip, -1.0),
        ("sign-flip-2", AttackKind::SignFlip, -2.0),
        ("sign-flip-4", AttackKind::SignFlip, -4.0),
        ("label-flip", AttackKind::LabelFlip, 0.0),
    ]
}

/// The nine `a+b` splits; `f` is the largest `b` used with each `n`.
pub fn byzantine_rate_rows() -> Vec<(usize, usize, usize)> {
    let mut rows = Vec::new();
    for (n, f) in [(4, 1), (7, 2), (10, 3)] {
        for b in 0..=f {
            rows.push((n, f, b));
        }
    }
    rows
}

pub fn byzantine_rate_configs(kind: AttackKind, factor: f64, rule: AggregationRule) -> Vec<ExperimentConfig> {
    byzantine_rate_rows()
        .into_iter()
        .map(|(n, f, b)| with_attack(base_logistic(n, f, rule), kind, factor, b, &format!("{}+{b}", n - b)))
        .collect()
}

pub fn scale_configs(rule: AggregationRule, rounds: u64) -> Vec<ExperimentConfig> {
    [4usize, 7, 10]
        .into_iter()
        .map(|n| {
            let mut cfg = base_logistic(n, (n - 1) / 3, rule);
            cfg.system.rounds = rounds;
            cfg.name = format!("n{n}/{rule}");
            cfg
        })
        .collect()
}

/// Expands a named sweep into configs, one per row and rule.
pub fn scenario_table(name: &str) -> Result<Vec<ExperimentConfig>, ConfigError> {
    let mut out = Vec::new();
    match name {
        "attack-sweep" => {
            for rule in RULES {
                for (label, kind, factor) in attack_rows() {
                    out.push(with_attack(base_logistic(4, 1, rule), kind, factor, 1, label));
                }
            }
        }
        "byzantine-rate-sweep" => {
            for rule in RULES {
                out.extend(byzantine_rate_configs(AttackKind::Gaussian, 1.0, rule));
            }
        }
        "scale-sweep" => {
            for rule in RULES {
                out.extend(scale_configs(rule, 20));
            }
        }
        other => {
            return Err(ConfigError::new(format!(
                "unknown scenario {other:?}; expected one of {}",
                SCENARIOS.join(", ")
            )))
        }
    }
    for cfg in &out {
        cfg.validate()?;
    }
    Ok(out)
}
