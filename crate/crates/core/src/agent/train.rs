//! The episode loop of the pre-training phase.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::learner::{update, Losses, OptimizerStates};
use super::policy::{actor_act, observe, ActionScale};
use super::{sample_skill, AgentError, Checkpoint, ReplayBuffer, TrainConfig, Transition};
use crate::{EnvConfig, Environment};

/// Episodes between progress reports.
pub const PROGRESS_INTERVAL: usize = 1000;

/// Aggregates over the episodes since the previous report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub episodes_completed: usize,
    pub mean_episode_length: f64,
    /// `None` while the buffer is still warming up.
    pub mean_intrinsic_reward: Option<f64>,
    pub discriminator_accuracy: Option<f64>,
    pub updates: usize,
}

#[derive(Default)]
struct Window {
    episodes: usize,
    steps: usize,
    updates: usize,
    reward: f64,
    accuracy: f64,
}

impl Window {
    fn record(&mut self, l: &Losses) {
        self.updates += 1;
        self.reward += l.mean_reward;
        self.accuracy += l.discriminator_accuracy;
    }

    fn report(&self, episodes_completed: usize) -> Progress {
        let per_update = |v: f64| (self.updates > 0).then(|| v / self.updates as f64);
        Progress {
            episodes_completed,
            mean_episode_length: self.steps as f64 / self.episodes.max(1) as f64,
            mean_intrinsic_reward: per_update(self.reward),
            discriminator_accuracy: per_update(self.accuracy),
            updates: self.updates,
        }
    }
}

pub fn train(env: EnvConfig, config: TrainConfig) -> Result<Checkpoint, AgentError> {
    train_with_progress(env, config, |_| {})
}

/// Runs `config.episodes` episodes; `on_progress` fires every
/// [`PROGRESS_INTERVAL`] episodes and after the last one.
///
/// The whole run draws from one RNG seeded with `config.seed`.
pub fn train_with_progress(
    env_config: EnvConfig,
    config: TrainConfig,
    mut on_progress: impl FnMut(&Progress),
) -> Result<Checkpoint, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let env = Environment::new(env_config)?;
    let mut ckpt = Checkpoint::fresh_with(env_config, config, &mut rng)?;
    let nets = ckpt.networks();
    let scale = ActionScale::new(&env_config);
    let mut opt = OptimizerStates::new(&ckpt.params);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let start_updates = config.warmup_transitions.max(config.batch_size);
    let max_steps = env_config.max_episode_steps();
    let mut window = Window::default();

    for episode in 0..config.episodes {
        let skill = sample_skill(&mut rng, config.n_skills)?;
        let mut state = env.reset(&mut rng);
        loop {
            let obs = observe(&state.allocation, skill, &env_config, config.n_skills);
            let (action, _) = actor_act(&nets, &ckpt.params, &scale, &obs, &mut rng, false)?;
            let (next, kind) = env.step(&state, &action)?;
            buffer.push(Transition {
                state: state.allocation,
                skill,
                action,
                next_state: next.allocation,
                done: kind.is_terminal(),
                terminal_kind: kind,
            });
            if buffer.len() >= start_updates {
                for _ in 0..config.updates_per_step {
                    let batch = buffer.sample(&mut rng, config.batch_size);
                    let losses = update(&nets, &mut ckpt.params, &mut opt, &batch, &config, &env_config, &mut rng)
                        .map_err(|e| match e {
                            AgentError::NonFinite(msg) => AgentError::NonFinite(format!(
                                "episode {episode}, step {}: {msg}",
                                next.step_count
                            )),
                            other => other,
                        })?;
                    window.record(&losses);
                }
            }
            state = next;
            if kind.is_terminal() {
                break;
            }
            if state.step_count >= max_steps {
                return Err(AgentError::EpisodeTooLong {
                    episode,
                    limit: max_steps,
                });
            }
        }
        window.episodes += 1;
        window.steps += state.step_count;
        ckpt.episodes_completed = episode + 1;
        if ckpt.episodes_completed % PROGRESS_INTERVAL == 0 || ckpt.episodes_completed == config.episodes {
            on_progress(&window.report(ckpt.episodes_completed));
            window = Window::default();
        }
    }
    Ok(ckpt)
}
