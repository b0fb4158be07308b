//! Experiment configuration: one TOML tree holding every tunable constant.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::hold_steps;
use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::policies::{PolicyConfig, TreeLayout};
use crate::rl::{Td3Config, TrainSetup};
use crate::vae::VaeConfig;
use crate::world::{ShapeKind, WorldConfig};

/// Policy variant compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Residual policy on top of the baseline attractor.
    Rpl,
    /// Learned policy alone.
    Vl,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Rpl, Variant::Vl];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Rpl => "rpl",
            Variant::Vl => "vl",
        }
    }

    pub fn layout(self) -> TreeLayout {
        match self {
            Variant::Rpl => TreeLayout::Residual,
            Variant::Vl => TreeLayout::Vanilla,
        }
    }
}

/// Source of the visual half of the agent state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentKind {
    Vae,
    SceneFeatures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub episodes: usize,
    pub latent: LatentKind,
    pub td3: Td3Config,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            latent: LatentKind::Vae,
            td3: Td3Config::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentBConfig {
    pub train_obstacles: usize,
    pub episodes: usize,
    pub eval_obstacles: Vec<usize>,
}

impl Default for ExperimentBConfig {
    fn default() -> Self {
        Self {
            train_obstacles: 3,
            episodes: 3000,
            eval_obstacles: vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentCConfig {
    pub train_shapes: Vec<ShapeKind>,
    pub held_out: Vec<ShapeKind>,
    pub n_obstacles: usize,
    /// Success rate reported for the full-scale system, drawn as a reference.
    pub reference_success: f64,
}

impl Default for ExperimentCConfig {
    fn default() -> Self {
        Self {
            train_shapes: vec![ShapeKind::Cuboid, ShapeKind::Sphere],
            held_out: vec![ShapeKind::Cylinder],
            n_obstacles: 3,
            reference_success: 0.72,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub eval_trials: usize,
    /// Seconds the end effector must stay at the goal to count as success.
    pub hold_seconds: f64,
    pub robot: RobotModel,
    pub world: WorldConfig,
    pub policy: PolicyConfig,
    pub vae: VaeConfig,
    pub rl: RlConfig,
    pub experiment_b: ExperimentBConfig,
    pub experiment_c: ExperimentCConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            eval_trials: 50,
            hold_seconds: 5.0,
            robot: RobotModel::desk_default(),
            world: WorldConfig::default(),
            policy: PolicyConfig::default(),
            vae: VaeConfig::default(),
            rl: RlConfig::default(),
            experiment_b: ExperimentBConfig::default(),
            experiment_c: ExperimentCConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.robot.validate()?;
        self.policy.limits.validate(&self.robot)?;
        if self.world.scene.obstacle_types.is_empty() {
            return Err(Error::Config("world.scene.obstacle_types is empty".into()));
        }
        if !(self.world.dt > 0.0) || self.world.max_steps == 0 {
            return Err(Error::Config("world.dt and world.max_steps must be positive".into()));
        }
        if !(self.hold_seconds > 0.0) {
            return Err(Error::Config("hold_seconds must be positive".into()));
        }
        if self.experiment_b.eval_obstacles.is_empty() {
            return Err(Error::Config("experiment_b.eval_obstacles is empty".into()));
        }
        let c = &self.experiment_c;
        if c.train_shapes.is_empty() || c.held_out.is_empty() {
            return Err(Error::Config("experiment_c needs training and held-out shapes".into()));
        }
        if let Some(s) = c.train_shapes.iter().find(|s| c.held_out.contains(s)) {
            return Err(Error::Config(format!(
                "shape {} is both a training and a held-out shape",
                s.name()
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn hold_steps(&self) -> usize {
        hold_steps(self.hold_seconds, self.world.dt)
    }

    /// World settings with the obstacle count overridden.
    pub fn world_with_obstacles(&self, n_obstacles: usize) -> WorldConfig {
        let mut world = self.world.clone();
        world.scene.n_obstacles = n_obstacles;
        world
    }

    pub fn train_setup(&self, variant: Variant, world: WorldConfig, episodes: usize) -> TrainSetup {
        TrainSetup {
            model: self.robot.clone(),
            world,
            policy: self.policy.clone(),
            layout: variant.layout(),
            td3: self.rl.td3.clone(),
            episodes,
            hold_steps: self.hold_steps(),
        }
    }
}
