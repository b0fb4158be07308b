//! Residual policy learning: a TD3 agent whose action drives the reactive
//! leaf of the RMP tree, trained from prioritised replay.

pub mod replay;
pub mod td3;

use nalgebra::DVector;
use rand::Rng;

pub use replay::{ReplayBuffer, SampledBatch, SumTree, Transition};
pub use td3::{bootstrap_target, Td3Agent, Td3Config, TrainStats};

use crate::error::Result;
use crate::harness::metrics::{classify_trial, EpisodeMetrics, Outcome};
use crate::kinematics::RobotModel;
use crate::policies::{PolicyConfig, TreeLayout};
use crate::vae::VaeModel;
use crate::world::{sample_scene, EpisodeTrace, Scene, World, WorldConfig};

/// Where the visual part `z` of the agent state comes from.
#[derive(Clone, Copy, Debug)]
pub enum LatentSource<'a> {
    /// Posterior mean of a trained VAE on the rendered observation.
    Vae(&'a VaeModel),
    /// Ground-truth obstacle centres and bounding radii, zero-padded to
    /// `slots` obstacles; skips rendering entirely.
    SceneFeatures { slots: usize },
}

impl LatentSource<'_> {
    pub fn dim(&self) -> usize {
        match self {
            LatentSource::Vae(v) => v.latent_dim,
            LatentSource::SceneFeatures { slots } => 3 * slots,
        }
    }

    pub fn needs_render(&self) -> bool {
        matches!(self, LatentSource::Vae(_))
    }

    pub fn latent(&self, world: &World) -> Result<Vec<f64>> {
        match self {
            LatentSource::Vae(vae) => match &world.state().image {
                Some(image) => vae.encode_image(image),
                None => vae.encode_image(&world.observe()?),
            },
            LatentSource::SceneFeatures { slots } => {
                let mut z = vec![0.0; 3 * slots];
                for (i, o) in world.scene().obstacles.iter().take(*slots).enumerate() {
                    z[3 * i] = o.center[0];
                    z[3 * i + 1] = o.center[1];
                    z[3 * i + 2] = o.shape.bounding_radius();
                }
                Ok(z)
            }
        }
    }
}

/// `s_r = [q, q̇, x, ẋ, z]`.
pub fn agent_state(world: &World, latent: &LatentSource) -> Result<Vec<f64>> {
    let s = world.state();
    let mut v: Vec<f64> = s.q.iter().chain(&s.qdot).chain(&s.x).chain(&s.xdot).copied().collect();
    v.extend(latent.latent(world)?);
    Ok(v)
}

pub fn state_dim(model: &RobotModel, latent: &LatentSource) -> usize {
    2 * model.dof() + 2 * model.task_dim() + latent.dim()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSetup {
    pub model: RobotModel,
    pub world: WorldConfig,
    pub policy: PolicyConfig,
    pub layout: TreeLayout,
    pub td3: Td3Config,
    pub episodes: usize,
    pub hold_steps: usize,
}

impl TrainSetup {
    fn world_config(&self, latent: &LatentSource) -> WorldConfig {
        WorldConfig {
            render: latent.needs_render(),
            ..self.world.clone()
        }
    }

    fn new_world(&self, scene: Scene, latent: &LatentSource) -> Result<World> {
        World::new(
            self.model.clone(),
            self.world_config(latent),
            self.policy.clone(),
            self.layout,
            scene,
        )
    }

    pub fn classify(&self, trace: &EpisodeTrace) -> Outcome {
        classify_trial(trace, self.world.goal_radius, self.world.near_goal_radius, self.hold_steps)
    }
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub agent: Td3Agent,
    pub metrics: Vec<EpisodeMetrics>,
}

/// Full training loop: one fresh scene per episode, one gradient step per
/// environment step once the warm-up is over.
pub fn run_training(setup: &TrainSetup, latent: &LatentSource, rng: &mut impl Rng) -> Result<TrainingRun> {
    let mut agent = Td3Agent::new(
        state_dim(&setup.model, latent),
        setup.model.dof(),
        setup.policy.action_bound,
        setup.td3.clone(),
        rng,
    )?;
    let mut buffer = ReplayBuffer::new(setup.td3.buffer_capacity, setup.td3.per_alpha, setup.td3.priority_eps)?;
    let budget = setup.episodes * setup.world.max_steps;
    let mut env_steps = 0;
    let mut metrics = Vec::with_capacity(setup.episodes);
    for episode in 0..setup.episodes {
        let explore = setup.td3.exploration(episode, setup.episodes);
        let scene = sample_scene(rng, &setup.model, &setup.world.scene)?;
        let mut world = setup.new_world(scene, latent)?;
        let mut state = agent_state(&world, latent)?;
        let mut trace = EpisodeTrace::default();
        loop {
            let action = agent.act(&state, explore, rng)?;
            let step = world.step(&DVector::from_vec(action.clone()))?;
            let next = agent_state(&world, latent)?;
            buffer.push(Transition {
                state,
                action,
                reward: step.reward,
                next_state: next.clone(),
                done: step.collided,
            });
            env_steps += 1;
            if env_steps > setup.td3.warmup_steps {
                agent.train_step(&mut buffer, setup.td3.per_beta(env_steps, budget), rng)?;
            }
            trace.push(&step);
            state = next;
            if step.terminated {
                break;
            }
        }
        let m = EpisodeMetrics::from_trace(episode, &trace, setup.classify(&trace));
        log::debug!(
            "episode {episode}: return {:.2} steps {} {} ({})",
            m.ret,
            m.steps,
            m.outcome.as_str(),
            m.cause.as_str()
        );
        metrics.push(m);
        if (episode + 1) % 50 == 0 {
            let recent = &metrics[metrics.len() - 50..];
            let rate = recent.iter().filter(|m| m.success()).count() as f64 / 50.0;
            log::info!("episode {}/{}: success rate over the last 50 episodes {rate:.2}", episode + 1, setup.episodes);
        }
    }
    Ok(TrainingRun { agent, metrics })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub outcome: Outcome,
    pub min_distance: f64,
    pub steps: usize,
    pub trace: EpisodeTrace,
}

/// Run one noise-free episode; without an agent the residual action is zero.
pub fn rollout(setup: &TrainSetup, agent: Option<&Td3Agent>, latent: &LatentSource, scene: Scene) -> Result<EpisodeTrace> {
    let mut world = setup.new_world(scene, latent)?;
    let mut trace = EpisodeTrace::default();
    loop {
        let action = match agent {
            Some(a) => DVector::from_vec(a.policy_action(&agent_state(&world, latent)?)?),
            None => DVector::zeros(setup.model.dof()),
        };
        let step = world.step(&action)?;
        trace.push(&step);
        if step.terminated {
            return Ok(trace);
        }
    }
}

/// Deterministic evaluation on `trials` freshly sampled scenes.
pub fn evaluate(
    setup: &TrainSetup,
    agent: Option<&Td3Agent>,
    latent: &LatentSource,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TrialRecord>> {
    (0..trials)
        .map(|trial| {
            let scene = sample_scene(rng, &setup.model, &setup.world.scene)?;
            let trace = rollout(setup, agent, latent, scene)?;
            Ok(TrialRecord {
                trial,
                outcome: setup.classify(&trace),
                min_distance: trace.min_distance(),
                steps: trace.len(),
                trace,
            })
        })
        .collect()
}
