use serde::{Deserialize, Serialize};

use super::AgentError;

/// Hyperparameters of the skill-discovery run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_skills: usize,
    pub episodes: usize,
    /// Shared by the actor, both critics, and the discriminator.
    pub learning_rate: f64,
    pub gamma: f64,
    /// Fixed entropy temperature.
    pub alpha: f64,
    /// Polyak rate for the target critics.
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub updates_per_step: usize,
    pub warmup_transitions: usize,
    pub seed: u64,
    pub log_q_floor: f64,
    /// Width of the two hidden layers of every network.
    pub hidden_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_skills: 64,
            episodes: 25_000,
            learning_rate: 1e-5,
            gamma: 0.99,
            alpha: 0.01,
            tau: 0.001,
            batch_size: 256,
            buffer_capacity: 100_000,
            updates_per_step: 1,
            warmup_transitions: 1_000,
            seed: 0,
            log_q_floor: -20.0,
            hidden_width: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |msg: String| Err(AgentError::InvalidConfig(msg));
        if self.n_skills < 2 {
            return fail(format!("n_skills must be >= 2, got {}", self.n_skills));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return fail(format!(
                "need 0 < batch_size <= buffer_capacity, got {} / {}",
                self.batch_size, self.buffer_capacity
            ));
        }
        if self.hidden_width == 0 {
            return fail("hidden_width must be positive".into());
        }
        if !self.log_q_floor.is_finite() {
            return fail("log_q_floor must be finite".into());
        }
        // Checkpoint headers store integers as signed 64-bit values.
        if self.seed > i64::MAX as u64 {
            return fail(format!("seed must be <= {}", i64::MAX));
        }
        Ok(())
    }
}
