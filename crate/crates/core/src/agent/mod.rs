//! Skill-conditioned entropy-regularized actor-critic with a skill
//! discriminator providing the intrinsic reward.

mod buffer;
mod checkpoint;
mod config;
mod learner;
mod policy;
mod skill;
mod train;

use thiserror::Error;

pub use buffer::{ReplayBuffer, Transition};
pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION};
pub use config::TrainConfig;
pub use learner::{update, Losses, OptimizerStates};
pub use policy::{
    actor_act, critic_input, critic_value, log_one_minus_tanh_sq, observe, squash, ActionScale,
    AgentParams, Networks, SquashedSample, LOG_STD_MAX, LOG_STD_MIN,
};
pub use skill::{augment_observation, intrinsic_reward, sample_skill, SkillId};
pub use train::{train, train_with_progress, Progress, PROGRESS_INTERVAL};

use crate::env::EnvError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error("numerical failure: {0}")]
    NonFinite(String),
    #[error("episode {episode} exceeded the {limit}-step bound")]
    EpisodeTooLong { episode: usize, limit: usize },
}

impl AgentError {
    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            AgentError::NonFinite(_) | AgentError::EpisodeTooLong { .. } | AgentError::Network(NnError::NonFiniteGradient { .. })
        )
    }
}

impl Checkpoint {
    /// Action for `skill` at `state` from this checkpoint's policy.
    pub fn act<R: rand::Rng + ?Sized>(
        &self,
        nets: &Networks,
        state: &crate::ResourceVector,
        skill: SkillId,
        rng: &mut R,
        deterministic: bool,
    ) -> Result<(crate::ResourceVector, f64), AgentError> {
        let obs = observe(state, skill, &self.env, self.train.n_skills);
        actor_act(nets, &self.params, &ActionScale::new(&self.env), &obs, rng, deterministic)
    }
}
