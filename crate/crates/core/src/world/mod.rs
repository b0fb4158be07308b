//! The reaching MDP: scenes, collision checks, rendering, reward and
//! semi-implicit Euler stepping of the controlled arm.

pub mod geometry;
pub mod render;
pub mod reward;
pub mod scene;
pub mod trace;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use geometry::{check_collision, Collision, Obstacle, Shape, ShapeKind};
pub use render::{render, Image, RenderOptions};
pub use reward::{reward, RewardTerms};
pub use scene::{sample_scene, Scene, SceneConfig};
pub use trace::{EpisodeTrace, TraceRow};

use crate::error::{check_dim, Error, Result};
use crate::kinematics::RobotModel;
use crate::policies::{PolicyConfig, TreeLayout};
use crate::rmpflow::{PolicyInputs, RmpTree};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub dt: f64,
    pub max_joint_speed: f64,
    pub goal_radius: f64,
    pub near_goal_radius: f64,
    pub max_steps: usize,
    pub resolution: usize,
    /// Half-width of the rendered workspace window.
    pub extent: f64,
    pub render: bool,
    pub terminate_on_collision: bool,
    pub scene: SceneConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            max_joint_speed: 2.0,
            goal_radius: 0.05,
            near_goal_radius: 0.07,
            max_steps: 400,
            resolution: 32,
            extent: 1.3,
            render: true,
            terminate_on_collision: true,
            scene: SceneConfig::default(),
        }
    }
}

impl WorldConfig {
    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            resolution: self.resolution,
            extent: self.extent,
            draw_arm: true,
            draw_goal: true,
            goal_radius: self.goal_radius,
        }
    }

    /// Diameter of the reachable workspace, used for reward bounds.
    pub fn workspace_diameter(&self, model: &RobotModel) -> f64 {
        2.0 * model.reach()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub x: DVector<f64>,
    pub xdot: DVector<f64>,
    pub image: Option<Image>,
    pub step_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    None,
    Collision,
    MaxSteps,
}

impl TerminationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationCause::None => "none",
            TerminationCause::Collision => "collision",
            TerminationCause::MaxSteps => "max_steps",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: WorldState,
    /// Action after clamping, as seen by the reactive leaf and the reward.
    pub action: DVector<f64>,
    pub terms: RewardTerms,
    pub reward: f64,
    pub distance: f64,
    pub min_clearance: f64,
    pub collided: bool,
    pub at_goal: bool,
    pub terminated: bool,
    pub cause: TerminationCause,
}

/// One episode's simulation: robot, scene, control tree and current state.
pub struct World {
    model: RobotModel,
    config: WorldConfig,
    policy: PolicyConfig,
    scene: Scene,
    tree: RmpTree,
    state: WorldState,
    terminated: bool,
}

impl World {
    pub fn new(
        model: RobotModel,
        config: WorldConfig,
        policy: PolicyConfig,
        layout: TreeLayout,
        scene: Scene,
    ) -> Result<Self> {
        let tree = policy.build(&model, &scene.goal, layout)?;
        Self::with_tree(model, config, policy, scene, tree)
    }

    /// Use a caller-assembled tree instead of one of the standard layouts.
    pub fn with_tree(
        model: RobotModel,
        config: WorldConfig,
        policy: PolicyConfig,
        scene: Scene,
        tree: RmpTree,
    ) -> Result<Self> {
        check_dim("tree root", model.dof(), tree.root_dim())?;
        check_dim("scene start", model.dof(), scene.start.len())?;
        let q = scene.start.clone();
        let qdot = DVector::zeros(model.dof());
        let x = model.forward_kinematics(&q)?;
        let xdot = DVector::zeros(model.task_dim());
        let mut world = Self {
            model,
            config,
            policy,
            scene,
            tree,
            state: WorldState {
                q,
                qdot,
                x,
                xdot,
                image: None,
                step_index: 0,
            },
            terminated: false,
        };
        if world.config.render {
            world.state.image = Some(world.observe()?);
        }
        Ok(world)
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn tree(&self) -> &RmpTree {
        &self.tree
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn distance_to_goal(&self) -> f64 {
        (&self.state.x - &self.scene.goal).norm()
    }

    /// Render the current state regardless of the `render` setting.
    pub fn observe(&self) -> Result<Image> {
        render(
            &self.scene.obstacles,
            Some(&self.scene.goal),
            &self.model,
            &self.state.q,
            &self.config.render_options(),
        )
    }

    pub fn step(&mut self, action: &DVector<f64>) -> Result<StepResult> {
        if self.terminated {
            return Err(Error::Terminated);
        }
        check_dim("action", self.model.dof(), action.len())?;
        let bound = self.policy.action_bound;
        let action = action.map(|a| a.clamp(-bound, bound));
        let inputs = PolicyInputs { action: Some(&action) };
        let qddot = self.tree.evaluate(&self.state.q, &self.state.qdot, &inputs)?;
        if qddot.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("tree produced a non-finite acceleration".into()));
        }

        let dt = self.config.dt;
        let vmax = self.config.max_joint_speed;
        let mut qdot = (&self.state.qdot + qddot * dt).map(|v| v.clamp(-vmax, vmax));
        let unclamped = &self.state.q + &qdot * dt;
        let q = self.model.clamp_to_limits(&unclamped)?;
        for i in 0..q.len() {
            if q[i] != unclamped[i] {
                qdot[i] = 0.0;
            }
        }
        let x = self.model.forward_kinematics(&q)?;
        let xdot = self.model.jacobian(&q)? * &qdot;

        let collision = check_collision(&self.model, &q, &self.scene.obstacles)?;
        let distance = (&x - &self.scene.goal).norm();
        let at_goal = distance < self.config.goal_radius;
        let (terms, total) = reward(&x, &self.scene.goal, &action, collision.colliding, at_goal);

        let step_index = self.state.step_index + 1;
        let cause = if collision.colliding && self.config.terminate_on_collision {
            TerminationCause::Collision
        } else if step_index >= self.config.max_steps {
            TerminationCause::MaxSteps
        } else {
            TerminationCause::None
        };
        self.terminated = cause != TerminationCause::None;
        self.state = WorldState {
            q,
            qdot,
            x,
            xdot,
            image: None,
            step_index,
        };
        if self.config.render {
            self.state.image = Some(self.observe()?);
        }
        Ok(StepResult {
            state: self.state.clone(),
            action,
            terms,
            reward: total,
            distance,
            min_clearance: collision.min_clearance,
            collided: collision.colliding,
            at_goal,
            terminated: self.terminated,
            cause,
        })
    }
}
