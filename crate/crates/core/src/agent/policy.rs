//! Network topologies and the squashed-Gaussian action map.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{AgentError, SkillId, TrainConfig};
use crate::nn::{Activation, Mlp, NnError};
use crate::{EnvConfig, ParameterSet, ResourceVector};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// The three topologies used by the agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Networks {
    /// Observation -> per-component mean and raw log-std.
    pub actor: Mlp,
    /// Observation ++ scaled action -> value.
    pub critic: Mlp,
    /// Cap-scaled state -> skill logits.
    pub discriminator: Mlp,
}

impl Networks {
    pub fn new(config: &TrainConfig) -> Result<Self, NnError> {
        let obs = 4 + config.n_skills;
        let hidden = [config.hidden_width; 2];
        Ok(Self {
            actor: Mlp::stack(obs, &hidden, 8, Activation::Relu, Activation::Identity)?,
            critic: Mlp::stack(obs + 4, &hidden, 1, Activation::Relu, Activation::Identity)?,
            discriminator: Mlp::stack(
                4,
                &hidden,
                config.n_skills,
                Activation::Relu,
                Activation::Identity,
            )?,
        })
    }

    pub fn observation_size(&self) -> usize {
        self.actor.input_size()
    }
}

/// Trainable parameters of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub actor: ParameterSet,
    pub critic1: ParameterSet,
    pub critic2: ParameterSet,
    pub target1: ParameterSet,
    pub target2: ParameterSet,
    pub discriminator: ParameterSet,
}

impl AgentParams {
    /// Fresh parameters; targets start as copies of their critics.
    pub fn init<R: Rng + ?Sized>(nets: &Networks, rng: &mut R) -> Self {
        let actor = nets.actor.init(rng);
        let critic1 = nets.critic.init(rng);
        let critic2 = nets.critic.init(rng);
        let discriminator = nets.discriminator.init(rng);
        Self {
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            discriminator,
        }
    }

    /// Group names as used in checkpoint files, in storage order.
    pub const GROUPS: [&'static str; 6] = [
        "actor",
        "critic1",
        "critic2",
        "target1",
        "target2",
        "discriminator",
    ];

    pub fn groups(&self) -> [(&'static str, &ParameterSet); 6] {
        [
            ("actor", &self.actor),
            ("critic1", &self.critic1),
            ("critic2", &self.critic2),
            ("target1", &self.target1),
            ("target2", &self.target2),
            ("discriminator", &self.discriminator),
        ]
    }

    pub fn check(&self, nets: &Networks) -> Result<(), NnError> {
        nets.actor.check_params(&self.actor)?;
        for c in [&self.critic1, &self.critic2, &self.target1, &self.target2] {
            nets.critic.check_params(c)?;
        }
        nets.discriminator.check_params(&self.discriminator)
    }
}

/// Affine map between the squashed value in (-1, 1) and the action interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionScale {
    pub midpoint: f64,
    pub half_range: f64,
}

impl ActionScale {
    pub fn new(env: &EnvConfig) -> Self {
        Self {
            midpoint: env.action_midpoint(),
            half_range: env.action_half_range(),
        }
    }

    pub fn to_action(&self, squashed: &[f64; 4]) -> ResourceVector {
        ResourceVector::from(squashed.map(|u| self.midpoint + self.half_range * u))
    }

    pub fn to_squashed(&self, action: &ResourceVector) -> [f64; 4] {
        action.0.map(|a| (a - self.midpoint) / self.half_range)
    }
}

/// One reparameterized draw from the squashed Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquashedSample {
    pub noise: [f64; 4],
    pub std: [f64; 4],
    /// tanh of the pre-activation, in (-1, 1).
    pub squashed: [f64; 4],
    /// Whether the raw log-std was inside the clamp range.
    pub log_std_free: [bool; 4],
    pub log_prob: f64,
}

/// `log(1 - tanh(x)^2)` without cancellation for large `|x|`.
pub fn log_one_minus_tanh_sq(x: f64) -> f64 {
    let softplus = |v: f64| v.max(0.0) + (-v.abs()).exp().ln_1p();
    2.0 * (std::f64::consts::LN_2 - x - softplus(-2.0 * x))
}

/// Applies `tanh(mean + std * noise)` and returns the log-density of the
/// resulting action, including the tanh and affine change-of-variables terms.
pub fn squash(head: &[f64], noise: [f64; 4], scale: &ActionScale) -> SquashedSample {
    let mut std = [0.0; 4];
    let mut squashed = [0.0; 4];
    let mut log_std_free = [false; 4];
    let mut log_prob = 0.0;
    let log_half_range = scale.half_range.ln();
    for i in 0..4 {
        let raw = head[4 + i];
        log_std_free[i] = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
        let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
        std[i] = log_std.exp();
        let pre = head[i] + std[i] * noise[i];
        squashed[i] = pre.tanh();
        log_prob += -0.5 * noise[i] * noise[i]
            - HALF_LN_2PI
            - log_std
            - log_one_minus_tanh_sq(pre)
            - log_half_range;
    }
    SquashedSample {
        noise,
        std,
        squashed,
        log_std_free,
        log_prob,
    }
}

pub fn standard_noise<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    std::array::from_fn(|_| rng.sample(StandardNormal))
}

/// Samples (or, when `deterministic`, takes the mean of) the policy at one
/// observation. Returns the action and its log-density.
pub fn actor_act<R: Rng + ?Sized>(
    nets: &Networks,
    params: &AgentParams,
    scale: &ActionScale,
    observation: &[f64],
    rng: &mut R,
    deterministic: bool,
) -> Result<(ResourceVector, f64), AgentError> {
    let (head, _) = nets.actor.forward(&params.actor, observation)?;
    if let Some(bad) = head.iter().find(|v| !v.is_finite()) {
        return Err(AgentError::NonFinite(format!("actor output {bad}")));
    }
    let noise = if deterministic {
        [0.0; 4]
    } else {
        standard_noise(rng)
    };
    let s = squash(&head, noise, scale);
    Ok((scale.to_action(&s.squashed), s.log_prob))
}

/// Critic input: observation followed by the action mapped into (-1, 1).
pub fn critic_input(observation: &[f64], action: &ResourceVector, scale: &ActionScale) -> Vec<f64> {
    let mut input = observation.to_vec();
    input.extend(scale.to_squashed(action));
    input
}

pub fn critic_value(
    critic: &Mlp,
    params: &ParameterSet,
    scale: &ActionScale,
    observation: &[f64],
    action: &ResourceVector,
) -> Result<f64, AgentError> {
    let (out, _) = critic.forward(params, &critic_input(observation, action, scale))?;
    Ok(out[0])
}

/// Convenience wrapper: observation for `skill` at `state`.
pub fn observe(state: &ResourceVector, skill: SkillId, env: &EnvConfig, n_skills: usize) -> Vec<f64> {
    super::augment_observation(state, skill, env.cap, n_skills)
}
