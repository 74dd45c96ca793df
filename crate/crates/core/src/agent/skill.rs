use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::ResourceVector;

/// Index of the latent skill conditioning the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkillId(pub usize);

impl SkillId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn one_hot(self, n_skills: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_skills];
        v[self.0] = 1.0;
        v
    }
}

impl std::fmt::Display for SkillId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Draws a skill from the uniform prior.
pub fn sample_skill<R: Rng + ?Sized>(rng: &mut R, n_skills: usize) -> Result<SkillId, AgentError> {
    if n_skills < 2 {
        return Err(AgentError::InvalidConfig(format!(
            "need at least 2 skills, got {n_skills}"
        )));
    }
    Ok(SkillId(rng.random_range(0..n_skills)))
}

/// Policy and critic input: the cap-scaled state followed by the skill one-hot.
pub fn augment_observation(state: &ResourceVector, skill: SkillId, cap: f64, n_skills: usize) -> Vec<f64> {
    let mut obs = Vec::with_capacity(4 + n_skills);
    write_observation(&mut obs, state, skill, cap, n_skills);
    obs
}

pub(crate) fn write_observation(
    out: &mut Vec<f64>,
    state: &ResourceVector,
    skill: SkillId,
    cap: f64,
    n_skills: usize,
) {
    out.extend(state.iter().map(|v| v / cap));
    let start = out.len();
    out.resize(start + n_skills, 0.0);
    out[start + skill.0] = 1.0;
}

/// `max(log q(z|s'), floor) - log p(z)` with the uniform prior `p(z) = 1/n`.
pub fn intrinsic_reward(
    discriminator_log_probs: &[f64],
    skill: SkillId,
    n_skills: usize,
    log_q_floor: f64,
) -> f64 {
    discriminator_log_probs[skill.0].max(log_q_floor) + (n_skills as f64).ln()
}
