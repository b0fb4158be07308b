use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::replay::{ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::nn::gradcheck::{check_parameters, GradcheckReport};
use crate::nn::{weighted_mse, Adam, Checkpoint, Layer, Mode, Sequential, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    /// Target smoothing noise and its clip, in units of the action bound.
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub warmup_steps: usize,
    pub buffer_capacity: usize,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    pub priority_eps: f64,
    /// Exploration noise, in units of the action bound, annealed linearly
    /// over episodes.
    pub explore_start: f64,
    pub explore_end: f64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            batch_size: 64,
            actor_hidden: vec![100, 100],
            critic_hidden: vec![500, 500],
            warmup_steps: 1000,
            buffer_capacity: 50_000,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            priority_eps: 1e-3,
            explore_start: 0.5,
            explore_end: 0.3,
        }
    }
}

impl Td3Config {
    pub fn exploration(&self, episode: usize, episodes: usize) -> f64 {
        if episodes <= 1 {
            return self.explore_start;
        }
        let t = (episode as f64 / (episodes - 1) as f64).min(1.0);
        self.explore_start + (self.explore_end - self.explore_start) * t
    }

    pub fn per_beta(&self, step: usize, total_steps: usize) -> f64 {
        let t = if total_steps == 0 {
            1.0
        } else {
            (step as f64 / total_steps as f64).min(1.0)
        };
        self.per_beta_start + (self.per_beta_end - self.per_beta_start) * t
    }
}

/// `r + (1 − done)·γ·min(q1, q2)`.
pub fn bootstrap_target(reward: f64, done: bool, gamma: f64, q1: f64, q2: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q1.min(q2)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: Option<f64>,
    pub mean_abs_td: f64,
}

/// Twin-critic deterministic actor-critic. Actions are bounded by
/// `action_bound`; critics see actions divided by the bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Td3Agent {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_bound: f64,
    pub config: Td3Config,
    actor: Sequential,
    actor_target: Sequential,
    critic1: Sequential,
    critic2: Sequential,
    critic1_target: Sequential,
    critic2_target: Sequential,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    updates: u64,
}

fn mlp(sizes: &[usize], hidden: fn() -> Layer, rng: &mut impl Rng) -> Vec<Layer> {
    let mut layers = Vec::new();
    for w in sizes.windows(2) {
        layers.push(Layer::dense(w[0], w[1], rng));
        layers.push(hidden());
    }
    layers
}

fn critic_net(inputs: usize, hidden: &[usize], rng: &mut impl Rng) -> Sequential {
    let mut sizes = vec![inputs];
    sizes.extend(hidden);
    let mut layers = mlp(&sizes, Layer::relu, rng);
    layers.push(Layer::dense(*sizes.last().unwrap(), 1, rng));
    Sequential::new(layers)
}

impl Td3Agent {
    pub fn new(state_dim: usize, action_dim: usize, action_bound: f64, config: Td3Config, rng: &mut impl Rng) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 || !(action_bound > 0.0) {
            return Err(Error::InvalidArgument("agent needs positive dimensions and action bound".into()));
        }
        let mut sizes = vec![state_dim];
        sizes.extend(&config.actor_hidden);
        let mut actor_layers = mlp(&sizes, Layer::tanh, rng);
        let mut head = crate::nn::Dense::new(*sizes.last().unwrap(), action_dim, rng);
        head.weight.value.fill(0.0);
        actor_layers.push(Layer::Dense(head));
        actor_layers.push(Layer::tanh());
        let actor = Sequential::new(actor_layers);

        let critic1 = critic_net(state_dim + action_dim, &config.critic_hidden, rng);
        let critic2 = critic_net(state_dim + action_dim, &config.critic_hidden, rng);
        Ok(Self {
            state_dim,
            action_dim,
            action_bound,
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            actor_opt: Adam::new(config.actor_lr),
            critic1_opt: Adam::new(config.critic_lr),
            critic2_opt: Adam::new(config.critic_lr),
            config,
            updates: 0,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn actor(&self) -> &Sequential {
        &self.actor
    }

    pub fn critics(&self) -> (&Sequential, &Sequential) {
        (&self.critic1, &self.critic2)
    }

    pub fn targets(&self) -> (&Sequential, &Sequential, &Sequential) {
        (&self.actor_target, &self.critic1_target, &self.critic2_target)
    }

    fn state_batch(&self, states: &[&[f64]]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(states.len() * self.state_dim);
        for s in states {
            if s.len() != self.state_dim {
                return Err(Error::Dimension {
                    context: "agent state",
                    expected: self.state_dim,
                    got: s.len(),
                });
            }
            data.extend_from_slice(s);
        }
        Tensor::new(vec![states.len(), self.state_dim], data)
    }

    /// Deterministic action `a_max·π(s)`.
    pub fn policy_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let out = self.actor.infer(&self.state_batch(&[state])?)?;
        Ok(out.data().iter().map(|v| v * self.action_bound).collect())
    }

    /// `clamp(a_max·π(s) + ε, ±a_max)` with `ε ~ N(0, (σ·a_max)²)`.
    pub fn act(&self, state: &[f64], explore: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let mut a = self.policy_action(state)?;
        if explore > 0.0 {
            let normal = Normal::new(0.0, explore * self.action_bound)
                .map_err(|e| Error::InvalidArgument(format!("exploration noise: {e}")))?;
            a.iter_mut().for_each(|v| *v += normal.sample(rng));
        }
        let b = self.action_bound;
        Ok(a.into_iter().map(|v| v.clamp(-b, b)).collect())
    }

    fn critic_input(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let scaled = actions.map(|v| v / self.action_bound);
        Tensor::concat_columns(states, &scaled)
    }

    /// Clipped double-Q targets with target-policy smoothing.
    pub fn td3_targets(&self, batch: &[&Transition], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let next: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
        let s2 = self.state_batch(&next)?;
        let b = self.action_bound;
        let clip = self.config.noise_clip * b;
        let normal = Normal::new(0.0, self.config.policy_noise * b)
            .map_err(|e| Error::InvalidArgument(format!("policy noise: {e}")))?;
        let mut a2 = self.actor_target.infer(&s2)?;
        for v in a2.data_mut() {
            let eps: f64 = normal.sample(rng);
            *v = (*v * b + eps.clamp(-clip, clip)).clamp(-b, b);
        }
        let input = self.critic_input(&s2, &a2)?;
        let q1 = self.critic1_target.infer(&input)?;
        let q2 = self.critic2_target.infer(&input)?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| bootstrap_target(t.reward, t.done, self.config.gamma, q1.data()[i], q2.data()[i]))
            .collect())
    }

    /// One TD3 update from a prioritised batch. Returns `None` while the
    /// buffer holds fewer transitions than a batch.
    pub fn train_step(&mut self, buffer: &mut ReplayBuffer, per_beta: f64, rng: &mut impl Rng) -> Result<Option<TrainStats>> {
        let n = self.config.batch_size;
        if buffer.len() < n {
            return Ok(None);
        }
        let sampled = buffer.sample(n, per_beta, rng)?;
        let batch: Vec<&Transition> = sampled.indices.iter().map(|&i| buffer.get(i)).collect();
        let targets = self.td3_targets(&batch, rng)?;
        let states = self.state_batch(&batch.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())?;
        let mut actions = Vec::with_capacity(n * self.action_dim);
        for t in &batch {
            check_action(t, self.action_dim)?;
            actions.extend_from_slice(&t.action);
        }
        let actions = Tensor::new(vec![n, self.action_dim], actions)?;
        let input = self.critic_input(&states, &actions)?;

        let mut td = vec![0.0; n];
        let mut losses = [0.0; 2];
        for (k, (critic, opt)) in [
            (&mut self.critic1, &mut self.critic1_opt),
            (&mut self.critic2, &mut self.critic2_opt),
        ]
        .into_iter()
        .enumerate()
        {
            critic.zero_grad();
            let q = critic.forward(&input, Mode::Train)?;
            let (loss, grad, errors) = weighted_mse(&q, &targets, &sampled.weights)?;
            critic.backward(&grad)?;
            opt.step(critic)?;
            losses[k] = loss;
            if k == 0 {
                td = errors;
            }
        }
        buffer.update_priorities(&sampled.indices, &td);

        self.updates += 1;
        let mut actor_loss = None;
        if self.updates % self.config.policy_delay.max(1) as u64 == 0 {
            self.actor.zero_grad();
            let pi = self.actor.forward(&states, Mode::Train)?;
            let q_in = Tensor::concat_columns(&states, &pi)?;
            let q = self.critic1.forward(&q_in, Mode::Train)?;
            actor_loss = Some(-q.sum() / n as f64);
            let dq = Tensor::filled(&[n, 1], -1.0 / n as f64);
            let d_in = self.critic1.backward(&dq)?;
            self.critic1.zero_grad();
            let (_, d_pi) = d_in.split_columns(self.state_dim)?;
            self.actor.backward(&d_pi)?;
            self.actor_opt.step(&mut self.actor)?;
            self.soft_update(self.config.tau)?;
        }
        Ok(Some(TrainStats {
            critic1_loss: losses[0],
            critic2_loss: losses[1],
            actor_loss,
            mean_abs_td: td.iter().map(|d| d.abs()).sum::<f64>() / n as f64,
        }))
    }

    /// `θ′ ← τθ + (1 − τ)θ′` for the actor and both critics.
    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        self.actor_target.soft_update_from(&self.actor, tau)?;
        self.critic1_target.soft_update_from(&self.critic1, tau)?;
        self.critic2_target.soft_update_from(&self.critic2, tau)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "td3");
        ck.set_meta("state_dim", self.state_dim);
        ck.set_meta("action_dim", self.action_dim);
        ck.set_meta("action_bound", self.action_bound);
        ck.set_meta("updates", self.updates);
        let hidden = |h: &[usize]| h.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        ck.set_meta("actor_hidden", hidden(&self.config.actor_hidden));
        ck.set_meta("critic_hidden", hidden(&self.config.critic_hidden));
        ck.push_network("actor", &self.actor)?;
        ck.push_network("actor_target", &self.actor_target)?;
        ck.push_network("critic1", &self.critic1)?;
        ck.push_network("critic2", &self.critic2)?;
        ck.push_network("critic1_target", &self.critic1_target)?;
        ck.push_network("critic2_target", &self.critic2_target)?;
        Ok(ck)
    }

    /// Restore networks from a checkpoint; optimiser moments start fresh.
    pub fn from_checkpoint(ck: &Checkpoint, config: Td3Config, rng: &mut impl Rng) -> Result<Self> {
        if ck.meta("kind") != Some("td3") {
            return Err(Error::Checkpoint("file is not a TD3 checkpoint".into()));
        }
        let num = |key: &str| -> Result<f64> {
            ck.meta(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or invalid {key}")))
        };
        let sizes = |key: &str| -> Result<Vec<usize>> {
            let raw = ck.meta(key).ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
            raw.split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| Error::Checkpoint(format!("invalid {key}"))))
                .collect()
        };
        let config = Td3Config {
            actor_hidden: sizes("actor_hidden")?,
            critic_hidden: sizes("critic_hidden")?,
            ..config
        };
        let mut agent = Self::new(
            num("state_dim")? as usize,
            num("action_dim")? as usize,
            num("action_bound")?,
            config,
            rng,
        )?;
        agent.updates = num("updates")? as u64;
        ck.load_network("actor", &mut agent.actor)?;
        ck.load_network("actor_target", &mut agent.actor_target)?;
        ck.load_network("critic1", &mut agent.critic1)?;
        ck.load_network("critic2", &mut agent.critic2)?;
        ck.load_network("critic1_target", &mut agent.critic1_target)?;
        ck.load_network("critic2_target", &mut agent.critic2_target)?;
        Ok(agent)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>, config: Td3Config, rng: &mut impl Rng) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, config, rng)
    }

    /// Finite-difference check of the importance-weighted critic loss on a
    /// small batch of transitions.
    pub fn critic_gradcheck(&self, batch: &[Transition], targets: &[f64], weights: &[f64], rng: &mut impl Rng) -> Result<GradcheckReport> {
        let states = self.state_batch(&batch.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())?;
        let mut actions = Vec::new();
        for t in batch {
            check_action(t, self.action_dim)?;
            actions.extend_from_slice(&t.action);
        }
        let input = self.critic_input(&states, &Tensor::new(vec![batch.len(), self.action_dim], actions)?)?;
        let mut critic = self.critic1.clone();
        check_parameters(
            "td3_critic_loss",
            &mut critic,
            |c, backward| {
                let q = c.forward(&input, Mode::Train)?;
                let (loss, grad, _) = weighted_mse(&q, targets, weights)?;
                if backward {
                    c.backward(&grad)?;
                } else {
                    c.clear_cache();
                }
                Ok(loss)
            },
            25,
            rng,
        )
    }
}

fn check_action(t: &Transition, dim: usize) -> Result<()> {
    if t.action.len() != dim {
        return Err(Error::Dimension {
            context: "transition action",
            expected: dim,
            got: t.action.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> Td3Config {
        Td3Config {
            actor_hidden: vec![8, 8],
            critic_hidden: vec![16, 16],
            batch_size: 4,
            ..Default::default()
        }
    }

    #[test]
    fn bootstrap_examples() {
        assert_eq!(bootstrap_target(1.5, true, 0.99, 10.0, 20.0), 1.5);
        assert!((bootstrap_target(1.0, false, 0.99, 2.0, 3.0) - 2.98).abs() < 1e-15);
        assert_eq!(
            bootstrap_target(0.3, false, 0.9, 4.0, 4.0),
            0.3 + 0.9 * 4.0
        );
    }

    #[test]
    fn fresh_actor_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = Td3Agent::new(5, 3, 0.5, small_config(), &mut rng).unwrap();
        assert_eq!(agent.act(&[0.3; 5], 0.0, &mut rng).unwrap(), vec![0.0; 3]);
        let noisy = agent.act(&[0.3; 5], 5.0, &mut rng).unwrap();
        assert!(noisy.iter().all(|a| a.abs() <= 0.5));
        assert!(agent.act(&[0.3; 4], 0.0, &mut rng).is_err());
    }

    #[test]
    fn schedules_hit_endpoints() {
        let c = Td3Config::default();
        assert_eq!(c.exploration(0, 100), 0.5);
        assert!((c.exploration(99, 100) - 0.3).abs() < 1e-15);
        assert_eq!(c.per_beta(0, 10), 0.4);
        assert_eq!(c.per_beta(10, 10), 1.0);
    }

    #[test]
    fn train_step_waits_for_a_full_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = Td3Agent::new(2, 1, 0.5, small_config(), &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(10, 0.6, 1e-3).unwrap();
        let tr = Transition {
            state: vec![0.1, 0.2],
            action: vec![0.1],
            reward: 1.0,
            next_state: vec![0.2, 0.2],
            done: false,
        };
        for _ in 0..3 {
            buf.push(tr.clone());
        }
        assert!(agent.train_step(&mut buf, 0.4, &mut rng).unwrap().is_none());
        buf.push(tr);
        let stats = agent.train_step(&mut buf, 0.4, &mut rng).unwrap().unwrap();
        assert!(stats.critic1_loss.is_finite());
        assert!(stats.actor_loss.is_none());
        let stats = agent.train_step(&mut buf, 0.4, &mut rng).unwrap().unwrap();
        assert!(stats.actor_loss.is_some());
    }

    #[test]
    fn checkpoint_round_trip_preserves_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = Td3Agent::new(3, 2, 0.5, small_config(), &mut rng).unwrap();
        let mut buf = ReplayBuffer::new(16, 0.6, 1e-3).unwrap();
        for i in 0..8 {
            buf.push(Transition {
                state: vec![i as f64 * 0.1, 0.0, 1.0],
                action: vec![0.2, -0.1],
                reward: i as f64,
                next_state: vec![0.0, 0.1, 1.0],
                done: i == 7,
            });
        }
        for _ in 0..4 {
            agent.train_step(&mut buf, 0.5, &mut rng).unwrap();
        }
        let back = Td3Agent::from_checkpoint(&agent.to_checkpoint().unwrap(), small_config(), &mut rng).unwrap();
        let s = [0.3, -0.2, 0.5];
        let a = agent.policy_action(&s).unwrap();
        let b = back.policy_action(&s).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}
