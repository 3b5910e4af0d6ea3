//! PPO training for batched environments.

pub mod buffer;
pub mod checkpoint;
mod eval;
pub mod net;
pub mod policy;
pub mod ppo;
pub mod toy;
mod train;

use serde::{Deserialize, Serialize};

pub use buffer::{gae, RolloutBuffer};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use eval::{evaluate, EvalSummary, StepRecord};
pub use policy::{Policy, PolicyLayout, PolicyOutput};
pub use ppo::{loss_and_grad, ppo_update, Adam, LossCoefs, LossStats, MiniBatch, UpdateMetrics};
pub use train::{MetricsRecord, RolloutStats, TrainOutcome, Trainer};

use crate::envs::EnvError;

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Minimum rollout length per update.
pub const MIN_N_STEPS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub vf_coef: f64,
    pub ent_coef: f64,
    /// Global gradient norm limit; 0 disables clipping.
    pub max_grad_norm: f64,
    /// Aggregate env transitions to collect.
    pub total_steps: u64,
    pub n_steps: usize,
    pub n_robots: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub bootstrap_timeouts: bool,
    pub normalize_advantages: bool,
    /// Updates between checkpoint writes; the final policy is always saved.
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            lr: 3e-4,
            epochs: 5,
            minibatches: 4,
            vf_coef: 1.0,
            ent_coef: 0.0,
            max_grad_norm: 1.0,
            total_steps: 2_000_000,
            n_steps: 32,
            n_robots: 1024,
            seed: 0,
            hidden: vec![256, 128, 64],
            init_log_std: -1.0,
            bootstrap_timeouts: true,
            normalize_advantages: true,
            checkpoint_interval: 10,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.n_steps * self.n_robots
    }

    /// Updates needed to reach `total_steps`.
    pub fn n_updates(&self) -> u64 {
        self.total_steps.div_ceil(self.batch_size() as u64)
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: String| Err(LearnError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must be in [0, 1], got {}", self.lambda));
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive".into());
        }
        if self.epochs < 1 || self.minibatches < 1 {
            return bad("epochs and minibatches must be at least 1".into());
        }
        if self.n_steps < MIN_N_STEPS {
            return bad(format!("n_steps must be at least {MIN_N_STEPS}, got {}", self.n_steps));
        }
        if self.n_robots < 1 || self.total_steps < 1 {
            return bad("n_robots and total_steps must be at least 1".into());
        }
        if self.minibatches > self.batch_size() {
            return bad("more minibatches than slots".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden sizes must be positive".into());
        }
        if !(policy::LOG_STD_MIN..=policy::LOG_STD_MAX).contains(&self.init_log_std) {
            return bad("init_log_std outside [-5, 2]".into());
        }
        if !(self.vf_coef >= 0.0 && self.ent_coef >= 0.0 && self.max_grad_norm >= 0.0) {
            return bad("coefficients must be non-negative".into());
        }
        Ok(())
    }
}
