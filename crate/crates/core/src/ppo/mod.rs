//! PPO with GAE, clipped surrogate, chunked recurrent updates and an optional
//! count-based exploration bonus.

mod agent;
mod buffer;
mod count;
mod metrics;
mod rollout;
mod trainer;
mod update;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;

pub use agent::ActorCritic;
pub use buffer::{compute_gae, Chunk, RolloutBuffer};
pub use count::VisitCounter;
pub use metrics::{MetricsRow, MetricsWriter, METRICS_SCHEMA_VERSION};
pub use rollout::{
    evaluate, play_episode, self_play_slots, Opponent, OpponentPool, OpponentState, PolicyOpponent, RecordedStep, Slot,
};
pub use trainer::{worker_count, RewardMix, Trainer, TrainerSpec, UpdateReport};
pub use update::{ppo_loss_and_grad, ppo_update, LossStats, UpdateMode};

/// Hyperparameters. Defaults follow the gridworld settings; presets shrink
/// the parallel batch for desk-scale runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub anneal_lr: bool,
    pub adam_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub value_loss_coeff: f64,
    pub entropy_coeff: f64,
    pub grad_clip: f64,
    /// Passes over each rollout.
    pub ppo_epochs: usize,
    /// Chunks per minibatch.
    pub minibatch_chunks: usize,
    pub chunk_length: usize,
    /// Concurrent environment instances per rollout.
    pub parallel_threads: usize,
    pub reward_scale: f64,
    /// Steps collected per environment instance per rollout.
    pub episode_length: usize,
    /// Upper bound on how many passes may reuse one rollout.
    pub buffer_reuse: usize,
    pub normalize_advantages: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// GRU hidden size of the policy, if recurrent.
    pub recurrent: Option<usize>,
    /// Count bonus scale `α`; `None` disables the bonus.
    pub count_bonus: Option<f64>,
    /// Agents share one set of parameters.
    pub shared_params: bool,
    /// Initialize the policy output bias to a random point of the simplex.
    pub random_initial_policy: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            anneal_lr: true,
            adam_epsilon: 1e-5,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            value_loss_coeff: 1.0,
            entropy_coeff: 0.01,
            grad_clip: 0.5,
            ppo_epochs: 4,
            minibatch_chunks: 320,
            chunk_length: 10,
            parallel_threads: 64,
            reward_scale: 0.1,
            episode_length: 50,
            buffer_reuse: 4,
            normalize_advantages: true,
            hidden: vec![crate::nn::HIDDEN_UNITS; 2],
            activation: Activation::Tanh,
            recurrent: None,
            count_bonus: None,
            shared_params: false,
            random_initial_policy: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        let coeffs = [
            self.learning_rate,
            self.adam_epsilon,
            self.clip,
            self.value_loss_coeff,
            self.entropy_coeff,
            self.grad_clip,
            self.reward_scale,
        ];
        if coeffs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return fail("coefficients must be finite and nonnegative");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gae_lambda must lie in [0, 1]");
        }
        if self.chunk_length == 0 || self.episode_length % self.chunk_length != 0 {
            return fail("chunk_length must divide episode_length");
        }
        if self.ppo_epochs == 0 || self.minibatch_chunks == 0 || self.parallel_threads == 0 {
            return fail("ppo_epochs, minibatch_chunks and parallel_threads must be positive");
        }
        if self.buffer_reuse < self.ppo_epochs {
            return fail("buffer_reuse must be at least ppo_epochs");
        }
        if let Some(a) = self.count_bonus {
            if !(a.is_finite() && a >= 0.0) {
                return fail("count bonus must be nonnegative");
            }
        }
        Ok(())
    }

    /// Environment steps gathered by one rollout.
    pub fn steps_per_rollout(&self) -> usize {
        self.parallel_threads * self.episode_length
    }
}

/// `lr(t) = lr₀ (1 − t/T)`, clamped at zero past `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub initial: f64,
    pub total: u64,
}

impl LinearSchedule {
    pub fn at(&self, t: u64) -> f64 {
        if self.total == 0 {
            return self.initial;
        }
        let frac = t.min(self.total) as f64 / self.total as f64;
        self.initial * (1.0 - frac)
    }
}
