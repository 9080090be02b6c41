use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::{AttackKind, AttackSpec};
use crate::aggregation::AggregationRule;
use crate::error::ConfigError;
use crate::model::{validate_config, SystemConfig};
use crate::simnet::DelayModel;
use crate::tasks::{LocalTraining, LrSchedule, TaskKind, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma0: f64,
    /// Std of the shared initial weights.
    #[serde(default)]
    pub init_scale: f64,
}

impl TrainingConfig {
    pub fn local(&self) -> LocalTraining {
        LocalTraining {
            epochs: self.epochs,
            batch_size: self.batch_size,
            schedule: LrSchedule { gamma0: self.gamma0 },
        }
    }
}

fn default_view_timeout() -> u64 {
    200
}

fn default_train_frac() -> (f64, f64) {
    (0.2, 0.5)
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub system: SystemConfig,
    pub task: TaskSpec,
    pub training: TrainingConfig,
    /// Dirichlet concentration; absent means an IID split.
    #[serde(default)]
    pub partition_alpha: Option<f64>,
    #[serde(default)]
    pub attack: AttackSpec,
    pub rule: AggregationRule,
    #[serde(default)]
    pub delay: DelayModel,
    #[serde(default = "default_view_timeout")]
    pub view_timeout: u64,
    /// Training duration as a fraction range of `gst_lt`.
    #[serde(default = "default_train_frac")]
    pub train_frac: (f64, f64),
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::new(format!("parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.system;
        validate_config(s)?;
        if self.task.d != s.d {
            return Err(ConfigError::new(format!("task d={} but system d={}", self.task.d, s.d)));
        }
        if self.task.train_size < s.n {
            return Err(ConfigError::new("fewer training examples than nodes"));
        }
        if self.task.test_size == 0 {
            return Err(ConfigError::new("test_size must be positive"));
        }
        if self.task.kind == TaskKind::Logistic && !(0.0..0.5).contains(&self.task.noise) {
            return Err(ConfigError::new("logistic label noise must lie in [0, 0.5)"));
        }
        let t = &self.training;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(ConfigError::new("epochs and batch_size must be positive"));
        }
        if !(t.gamma0 > 0.0 && t.gamma0.is_finite()) {
            return Err(ConfigError::new("gamma0 must be positive"));
        }
        if !(t.init_scale >= 0.0 && t.init_scale.is_finite()) {
            return Err(ConfigError::new("init_scale must be non-negative"));
        }
        if let Some(a) = self.partition_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(ConfigError::new("partition_alpha must be positive"));
            }
        }
        let a = &self.attack;
        if a.kind != AttackKind::None {
            if a.victims.len() > s.f {
                return Err(ConfigError::new(format!(
                    "{} victims exceed f={}",
                    a.victims.len(),
                    s.f
                )));
            }
            if let Some(v) = a.victims.iter().find(|v| v.index() >= s.n) {
                return Err(ConfigError::new(format!("victim {v} outside [0, n)")));
            }
            if a.victims.contains(&crate::model::NodeId(0)) {
                return Err(ConfigError::new("node 0 reports accuracy and must stay honest"));
            }
            if a.kind == AttackKind::SignFlip && !(a.factor < 0.0) {
                return Err(ConfigError::new("sign-flip factor must be negative"));
            }
            if a.kind == AttackKind::Gaussian && !(a.factor >= 0.0 && a.factor.is_finite()) {
                return Err(ConfigError::new("gaussian factor must be a non-negative std"));
            }
            if a.kind == AttackKind::LabelFlip && self.task.kind != TaskKind::Logistic {
                return Err(ConfigError::new("label flipping needs a classification task"));
            }
        }
        let d = &self.delay;
        if d.delta == 0 || d.pre_gst_max == 0 || !(0.0..1.0).contains(&d.drop_before_gst) {
            return Err(ConfigError::new("delay model: delta and pre_gst_max must be positive, drop in [0,1)"));
        }
        if self.view_timeout == 0 {
            return Err(ConfigError::new("view_timeout must be positive"));
        }
        let (lo, hi) = self.train_frac;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(ConfigError::new("train_frac must satisfy 0 < lo <= hi"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::new("seeds must be non-empty"));
        }
        Ok(())
    }
}
