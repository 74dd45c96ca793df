//! One gradient update of the discriminator, the twin critics, and the actor.

use rand::Rng;

use super::policy::{squash, standard_noise, ActionScale, AgentParams, Networks, SquashedSample};
use super::skill::write_observation;
use super::{intrinsic_reward, AgentError, TrainConfig, Transition};
use crate::nn::{adam_step, log_softmax, polyak_update, Mlp};
use crate::ParameterSet as Params;
use crate::{AdamState, EnvConfig};

/// Adam moments for every trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerStates {
    pub actor: AdamState,
    pub critic1: AdamState,
    pub critic2: AdamState,
    pub discriminator: AdamState,
}

impl OptimizerStates {
    pub fn new(params: &AgentParams) -> Self {
        Self {
            actor: AdamState::new(&params.actor),
            critic1: AdamState::new(&params.critic1),
            critic2: AdamState::new(&params.critic2),
            discriminator: AdamState::new(&params.discriminator),
        }
    }
}

/// Diagnostics of one update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Losses {
    /// Mean cross-entropy of the true skill before the discriminator step.
    pub discriminator: f64,
    /// Top-1 accuracy of the discriminator on the batch, before its step.
    pub discriminator_accuracy: f64,
    pub critic1: f64,
    pub critic2: f64,
    /// Mean of `alpha * log pi - min Q` over the batch.
    pub actor: f64,
    /// Mean intrinsic reward under the updated discriminator.
    pub mean_reward: f64,
    pub mean_log_prob: f64,
}

impl Losses {
    fn check(&self) -> Result<(), AgentError> {
        let fields = [
            ("discriminator", self.discriminator),
            ("critic1", self.critic1),
            ("critic2", self.critic2),
            ("actor", self.actor),
            ("mean_reward", self.mean_reward),
            ("mean_log_prob", self.mean_log_prob),
        ];
        match fields.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(AgentError::NonFinite(format!(
                "{name} loss is {v} (losses: {self:?})"
            ))),
            None => Ok(()),
        }
    }
}

/// Batch tensors shared by the update stages.
struct BatchInputs {
    size: usize,
    /// `(B, obs)`: current state with skill.
    obs: Vec<f64>,
    /// `(B, obs)`: next state with skill.
    next_obs: Vec<f64>,
    /// `(B, 4)`: cap-scaled next state.
    next_scaled: Vec<f64>,
    /// `(B, obs + 4)`: observation with the stored action in (-1, 1).
    critic_in: Vec<f64>,
}

impl BatchInputs {
    fn new(batch: &[Transition], env: &EnvConfig, n_skills: usize, scale: &ActionScale) -> Self {
        let obs_len = 4 + n_skills;
        let size = batch.len();
        let mut obs = Vec::with_capacity(size * obs_len);
        let mut next_obs = Vec::with_capacity(size * obs_len);
        let mut next_scaled = Vec::with_capacity(size * 4);
        let mut critic_in = Vec::with_capacity(size * (obs_len + 4));
        for t in batch {
            write_observation(&mut obs, &t.state, t.skill, env.cap, n_skills);
            write_observation(&mut next_obs, &t.next_state, t.skill, env.cap, n_skills);
            next_scaled.extend(t.next_state.iter().map(|v| v / env.cap));
            write_observation(&mut critic_in, &t.state, t.skill, env.cap, n_skills);
            critic_in.extend(scale.to_squashed(&t.action));
        }
        Self {
            size,
            obs,
            next_obs,
            next_scaled,
            critic_in,
        }
    }
}

/// Reparameterized samples for every row of an actor head batch.
fn sample_rows<R: Rng + ?Sized>(head: &[f64], scale: &ActionScale, rng: &mut R) -> Vec<SquashedSample> {
    head.chunks_exact(8)
        .map(|h| squash(h, standard_noise(rng), scale))
        .collect()
}

/// Rows of `obs` with the squashed actions appended.
fn with_actions(obs: &[f64], obs_len: usize, samples: &[SquashedSample]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len() * (obs_len + 4));
    for (row, s) in obs.chunks_exact(obs_len).zip(samples) {
        out.extend_from_slice(row);
        out.extend_from_slice(&s.squashed);
    }
    out
}

fn values(critic: &Mlp, params: &Params, input: &[f64], batch: usize) -> Result<Vec<f64>, AgentError> {
    Ok(critic.forward_batch(params, input, batch)?.into_output())
}

/// Performs one full update on `batch`:
///
/// 1. discriminator cross-entropy step on `q(z | s')`;
/// 2. intrinsic rewards from the updated discriminator;
/// 3. critic regression to `r + gamma (1 - done) (min Q'(s', a') - alpha log pi(a'|s'))`;
/// 4. actor step on `alpha log pi(a|s) - min Q(s, a)` with reparameterized `a`;
/// 5. Polyak averaging of both targets.
#[allow(clippy::too_many_arguments)]
pub fn update<R: Rng + ?Sized>(
    nets: &Networks,
    params: &mut AgentParams,
    opt: &mut OptimizerStates,
    batch: &[Transition],
    config: &TrainConfig,
    env: &EnvConfig,
    rng: &mut R,
) -> Result<Losses, AgentError> {
    if batch.is_empty() {
        return Err(AgentError::InvalidConfig("empty update batch".into()));
    }
    let n = config.n_skills;
    let obs_len = 4 + n;
    let lr = config.learning_rate;
    let scale = ActionScale::new(env);
    let inputs = BatchInputs::new(batch, env, n, &scale);
    let b = inputs.size;
    let inv_b = 1.0 / b as f64;
    let mut losses = Losses::default();

    // 1. Discriminator.
    let tape = nets
        .discriminator
        .forward_batch(&params.discriminator, &inputs.next_scaled, b)?;
    let mut d_logits = Vec::with_capacity(b * n);
    let mut correct = 0usize;
    for (logits, t) in tape.output().chunks_exact(n).zip(batch) {
        let lp = log_softmax(logits);
        let z = t.skill.index();
        losses.discriminator -= lp[z] * inv_b;
        let argmax = lp
            .iter()
            .enumerate()
            .fold(0, |best, (k, &v)| if v > lp[best] { k } else { best });
        correct += usize::from(argmax == z);
        d_logits.extend(lp.iter().enumerate().map(|(k, &l)| {
            let target = if k == z { 1.0 } else { 0.0 };
            (l.exp() - target) * inv_b
        }));
    }
    losses.discriminator_accuracy = correct as f64 * inv_b;
    let grads = nets
        .discriminator
        .backward(&params.discriminator, &tape, &d_logits)?;
    adam_step(&mut params.discriminator, &grads, &mut opt.discriminator, lr)?;

    // 2. Rewards from the updated discriminator.
    let logits = nets
        .discriminator
        .forward_batch(&params.discriminator, &inputs.next_scaled, b)?
        .into_output();
    let rewards: Vec<f64> = logits
        .chunks_exact(n)
        .zip(batch)
        .map(|(l, t)| intrinsic_reward(&log_softmax(l), t.skill, n, config.log_q_floor))
        .collect();
    losses.mean_reward = rewards.iter().sum::<f64>() * inv_b;

    // 3. Critics.
    let next_head = nets
        .actor
        .forward_batch(&params.actor, &inputs.next_obs, b)?
        .into_output();
    let next_samples = sample_rows(&next_head, &scale, rng);
    let next_in = with_actions(&inputs.next_obs, obs_len, &next_samples);
    let q1_next = values(&nets.critic, &params.target1, &next_in, b)?;
    let q2_next = values(&nets.critic, &params.target2, &next_in, b)?;
    let targets: Vec<f64> = (0..b)
        .map(|i| {
            let soft = q1_next[i].min(q2_next[i]) - config.alpha * next_samples[i].log_prob;
            let live = if batch[i].done { 0.0 } else { 1.0 };
            rewards[i] + config.gamma * live * soft
        })
        .collect();
    for (critic, state, loss) in [
        (&mut params.critic1, &mut opt.critic1, &mut losses.critic1),
        (&mut params.critic2, &mut opt.critic2, &mut losses.critic2),
    ] {
        let tape = nets.critic.forward_batch(critic, &inputs.critic_in, b)?;
        let d_q: Vec<f64> = tape
            .output()
            .iter()
            .zip(&targets)
            .map(|(q, y)| {
                *loss += (q - y) * (q - y) * inv_b;
                2.0 * (q - y) * inv_b
            })
            .collect();
        let grads = nets.critic.backward(critic, &tape, &d_q)?;
        adam_step(critic, &grads, state, lr)?;
    }

    // 4. Actor.
    let noise: Vec<[f64; 4]> = (0..b).map(|_| standard_noise(rng)).collect();
    let actor = actor_objective(nets, params, &inputs.obs, &noise, config.alpha, &scale)?;
    losses.actor = actor.loss;
    losses.mean_log_prob = actor.mean_log_prob;
    adam_step(&mut params.actor, &actor.grads, &mut opt.actor, lr)?;

    // 5. Targets.
    polyak_update(&mut params.target1, &params.critic1, config.tau)?;
    polyak_update(&mut params.target2, &params.critic2, config.tau)?;

    losses.check()?;
    Ok(losses)
}

pub(crate) struct ActorObjective {
    pub loss: f64,
    pub mean_log_prob: f64,
    pub grads: Params,
}

/// Mean of `alpha * log pi(a|s) - min(Q1, Q2)(s, a)` over the rows of `obs`,
/// with `a` reparameterized by the given noise, and its actor gradient.
pub(crate) fn actor_objective(
    nets: &Networks,
    params: &AgentParams,
    obs: &[f64],
    noise: &[[f64; 4]],
    alpha: f64,
    scale: &ActionScale,
) -> Result<ActorObjective, AgentError> {
    let b = noise.len();
    let obs_len = nets.observation_size();
    let inv_b = 1.0 / b as f64;
    let actor_tape = nets.actor.forward_batch(&params.actor, obs, b)?;
    let samples: Vec<SquashedSample> = actor_tape
        .output()
        .chunks_exact(8)
        .zip(noise)
        .map(|(h, &e)| squash(h, e, scale))
        .collect();
    let policy_in = with_actions(obs, obs_len, &samples);
    let tape1 = nets.critic.forward_batch(&params.critic1, &policy_in, b)?;
    let tape2 = nets.critic.forward_batch(&params.critic2, &policy_in, b)?;
    let (q1, q2) = (tape1.output(), tape2.output());
    let mut loss = 0.0;
    let mut mean_log_prob = 0.0;
    let mut d_q1 = vec![0.0; b];
    let mut d_q2 = vec![0.0; b];
    for i in 0..b {
        let min_q = q1[i].min(q2[i]);
        loss += (alpha * samples[i].log_prob - min_q) * inv_b;
        mean_log_prob += samples[i].log_prob * inv_b;
        if q1[i] <= q2[i] {
            d_q1[i] = -inv_b;
        } else {
            d_q2[i] = -inv_b;
        }
    }
    let actions = obs_len..obs_len + 4;
    let g1 = nets.critic.input_gradient(&params.critic1, &tape1, &d_q1, actions.clone())?;
    let g2 = nets.critic.input_gradient(&params.critic2, &tape2, &d_q2, actions)?;
    let mut d_head = vec![0.0; b * 8];
    for (i, s) in samples.iter().enumerate() {
        let row = &mut d_head[i * 8..(i + 1) * 8];
        for k in 0..4 {
            let d_squashed = g1[i * 4 + k] + g2[i * 4 + k];
            let u = s.squashed[k];
            // d log pi / d pre = 2 tanh(pre); d log pi / d log_std = -1 directly.
            let d_pre = alpha * inv_b * 2.0 * u + d_squashed * (1.0 - u * u);
            row[k] = d_pre;
            if s.log_std_free[k] {
                row[4 + k] = d_pre * s.std[k] * s.noise[k] - alpha * inv_b;
            }
        }
    }
    let grads = nets.actor.backward(&params.actor, &actor_tape, &d_head)?;
    Ok(ActorObjective {
        loss,
        mean_log_prob,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{ResourceVector, SkillId, TerminalKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(n_skills: usize, batch_size: usize) -> TrainConfig {
        TrainConfig {
            n_skills,
            hidden_width: 8,
            batch_size,
            ..TrainConfig::default()
        }
    }

    fn perturbed(nets: &Networks, rng: &mut ChaCha8Rng) -> AgentParams {
        let mut p = AgentParams::init(nets, rng);
        for set in [&mut p.actor, &mut p.critic1, &mut p.critic2] {
            for a in set.arrays_mut() {
                for v in &mut a.data {
                    *v += rng.random_range(-0.3..0.3);
                }
            }
        }
        p
    }

    fn transition(rng: &mut ChaCha8Rng, skill: usize) -> Transition {
        let state = ResourceVector::from(std::array::from_fn(|_| rng.random_range(2.0..10.0)));
        let action = ResourceVector::from(std::array::from_fn(|_| rng.random_range(1.1..4.9)));
        Transition {
            state,
            skill: SkillId(skill),
            action,
            next_state: state.add(&action),
            done: false,
            terminal_kind: TerminalKind::None,
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        const H: f64 = 1e-6;
        let env = EnvConfig::default();
        let scale = ActionScale::new(&env);
        let config = small_config(4, 5);
        let nets = Networks::new(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mut ok, mut total) = (0, 0);
        for _ in 0..5 {
            let params = perturbed(&nets, &mut rng);
            let batch: Vec<_> = (0..5).map(|i| transition(&mut rng, i % 4)).collect();
            let inputs = BatchInputs::new(&batch, &env, 4, &scale);
            let noise: Vec<[f64; 4]> = (0..5).map(|_| standard_noise(&mut rng)).collect();
            let base = actor_objective(&nets, &params, &inputs.obs, &noise, 0.5, &scale).unwrap();
            for ai in 0..params.actor.len() {
                for k in 0..params.actor.arrays()[ai].data.len() {
                    let eval = |d: f64| {
                        let mut p = params.clone();
                        p.actor.arrays_mut()[ai].data[k] += d;
                        actor_objective(&nets, &p, &inputs.obs, &noise, 0.5, &scale).unwrap().loss
                    };
                    let numeric = (eval(H) - eval(-H)) / (2.0 * H);
                    let analytic = base.grads.arrays()[ai].data[k];
                    let scale = analytic.abs().max(numeric.abs());
                    ok += usize::from(if scale < 1e-8 {
                        (analytic - numeric).abs() < 1e-8
                    } else {
                        (analytic - numeric).abs() / scale <= 1e-4
                    });
                    total += 1;
                }
            }
        }
        assert!(ok as f64 >= 0.99 * total as f64, "{ok}/{total}");
    }

    #[test]
    fn uniform_discriminator_gives_zero_mean_reward() {
        let env = EnvConfig::default();
        let config = small_config(4, 8);
        let nets = Networks::new(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = AgentParams::init(&nets, &mut rng);
        // All-zero weights give equal logits; a skill-balanced batch then has
        // zero discriminator gradient, so it stays uniform through its step.
        params.discriminator = params.discriminator.zeros_like();
        let mut opt = OptimizerStates::new(&params);
        let batch: Vec<_> = (0..8).map(|i| transition(&mut rng, i % 4)).collect();
        let losses = update(&nets, &mut params, &mut opt, &batch, &config, &env, &mut rng).unwrap();
        assert!(losses.mean_reward.abs() < 1e-12, "{}", losses.mean_reward);
        assert!((losses.discriminator - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn discriminator_overfits_a_single_transition() {
        let env = EnvConfig::default();
        let config = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let nets = Networks::new(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = AgentParams::init(&nets, &mut rng);
        let mut opt = OptimizerStates::new(&params);
        let t = transition(&mut rng, 17);
        let batch = vec![t; 32];
        for _ in 0..1000 {
            update(&nets, &mut params, &mut opt, &batch, &config, &env, &mut rng).unwrap();
        }
        let input: Vec<f64> = t.next_state.iter().map(|v| v / env.cap).collect();
        let (logits, _) = nets.discriminator.forward(&params.discriminator, &input).unwrap();
        let ce = -log_softmax(&logits)[17];
        assert!(ce < 0.1, "cross-entropy {ce}");
    }

    #[test]
    fn targets_track_critics_by_tau() {
        let env = EnvConfig::default();
        let config = small_config(4, 4);
        let nets = Networks::new(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = AgentParams::init(&nets, &mut rng);
        let before = params.target1.clone();
        let mut opt = OptimizerStates::new(&params);
        let batch: Vec<_> = (0..4).map(|i| transition(&mut rng, i)).collect();
        update(&nets, &mut params, &mut opt, &batch, &config, &env, &mut rng).unwrap();
        for ((t, b), c) in params.target1.arrays().iter().zip(before.arrays()).zip(params.critic1.arrays()) {
            for ((tv, bv), cv) in t.data.iter().zip(&b.data).zip(&c.data) {
                let expected = config.tau * cv + (1.0 - config.tau) * bv;
                assert!((tv - expected).abs() < 1e-15);
            }
        }
    }
}
