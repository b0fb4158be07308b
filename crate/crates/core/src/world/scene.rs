//! Scene sampling: start pose, goal, and obstacles that actually block the
//! straight path from the start end-effector position to the goal.

use nalgebra::{DVector, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{check_collision, Obstacle, Shape, ShapeKind};
use crate::error::{Error, Result};
use crate::kinematics::RobotModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_obstacles: usize,
    pub obstacle_types: Vec<ShapeKind>,
    /// Home configuration; episodes start here plus uniform jitter.
    pub home: Vec<f64>,
    pub start_jitter: f64,
    pub goal_radius_range: [f64; 2],
    pub goal_angle_range: [f64; 2],
    pub min_goal_distance: f64,
    /// Maximum lateral offset of an obstacle centre from the start–goal segment.
    pub lateral_spread: f64,
    /// Minimum distance of an obstacle centre from both segment endpoints.
    pub endpoint_clearance: f64,
    /// Minimum signed distance between the goal point and any obstacle.
    pub goal_keepout: f64,
    /// Minimum link clearance at the start configuration.
    pub start_clearance: f64,
    pub max_rejections: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_obstacles: 1,
            obstacle_types: ShapeKind::ALL.to_vec(),
            home: vec![-0.3, 1.2, 1.0],
            start_jitter: 0.05,
            goal_radius_range: [0.45, 1.0],
            goal_angle_range: [-0.6, 2.2],
            min_goal_distance: 0.4,
            lateral_spread: 0.15,
            endpoint_clearance: 0.12,
            goal_keepout: 0.06,
            start_clearance: 0.02,
            max_rejections: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub obstacles: Vec<Obstacle>,
    pub goal: DVector<f64>,
    pub start: DVector<f64>,
}

impl Scene {
    pub fn goal_point(&self) -> Vector2<f64> {
        Vector2::new(self.goal[0], self.goal[1])
    }
}

/// Sample a random obstacle shape of the given family.
pub fn sample_shape<R: Rng + ?Sized>(rng: &mut R, kind: ShapeKind) -> Shape {
    match kind {
        ShapeKind::Sphere => Shape::Circle {
            radius: rng.random_range(0.05..0.09),
        },
        ShapeKind::Cuboid => Shape::Rectangle {
            half_width: rng.random_range(0.04..0.08),
            half_height: rng.random_range(0.04..0.08),
        },
        ShapeKind::Cylinder => Shape::Capsule {
            half_length: rng.random_range(0.03..0.07),
            radius: rng.random_range(0.03..0.05),
        },
    }
}

/// Whether two obstacles' bounding disks are separated.
pub fn obstacles_disjoint(a: &Obstacle, b: &Obstacle) -> bool {
    (a.center() - b.center()).norm() > a.shape.bounding_radius() + b.shape.bounding_radius()
}

pub fn sample_scene<R: Rng + ?Sized>(rng: &mut R, model: &RobotModel, config: &SceneConfig) -> Result<Scene> {
    if !(1..=3).contains(&config.n_obstacles) {
        return Err(Error::InvalidArgument(format!(
            "scenes hold 1 to 3 obstacles, got {}",
            config.n_obstacles
        )));
    }
    if config.obstacle_types.is_empty() {
        return Err(Error::InvalidArgument("no obstacle types to sample from".into()));
    }
    if config.home.len() != model.dof() {
        return Err(Error::Dimension {
            context: "scene home configuration",
            expected: model.dof(),
            got: config.home.len(),
        });
    }
    let mut rejections = 0;
    while rejections < config.max_rejections {
        match try_sample(rng, model, config, &mut rejections)? {
            Some(scene) => return Ok(scene),
            None => rejections += 1,
        }
    }
    Err(Error::SceneSampling(rejections))
}

fn try_sample<R: Rng + ?Sized>(
    rng: &mut R,
    model: &RobotModel,
    config: &SceneConfig,
    rejections: &mut usize,
) -> Result<Option<Scene>> {
    let jitter = config.start_jitter;
    let start = DVector::from_iterator(
        model.dof(),
        config
            .home
            .iter()
            .map(|&q| if jitter > 0.0 { q + rng.random_range(-jitter..jitter) } else { q }),
    );
    let start = model.clamp_to_limits(&start)?;
    let start_ee = model.forward_kinematics(&start)?;
    let start_ee = Vector2::new(start_ee[0], start_ee[1]);

    let [r_lo, r_hi] = config.goal_radius_range;
    let [a_lo, a_hi] = config.goal_angle_range;
    let radius = rng.random_range(r_lo..r_hi);
    let angle = rng.random_range(a_lo..a_hi);
    let goal = Vector2::new(radius * angle.cos(), radius * angle.sin());
    if (goal - start_ee).norm() < config.min_goal_distance || goal.norm() > model.reach() - 1e-3 {
        return Ok(None);
    }

    let along = goal - start_ee;
    let normal = Vector2::new(-along.y, along.x).normalize();
    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(config.n_obstacles);
    while obstacles.len() < config.n_obstacles {
        if *rejections >= config.max_rejections {
            return Ok(None);
        }
        let kind = config.obstacle_types[rng.random_range(0..config.obstacle_types.len())];
        let shape = sample_shape(rng, kind);
        let t: f64 = rng.random_range(0.0..1.0);
        let offset = rng.random_range(-config.lateral_spread..=config.lateral_spread);
        let center = start_ee + along * t + normal * offset;
        let candidate = Obstacle {
            shape,
            center: [center.x, center.y],
            angle: rng.random_range(0.0..std::f64::consts::PI),
            texture_id: rng.random_range(0..4),
        };
        let clear_of_endpoints = (center - start_ee).norm() >= config.endpoint_clearance
            && (center - goal).norm() >= config.endpoint_clearance;
        let clear_of_goal = candidate.sdf(goal) >= config.goal_keepout;
        let disjoint = obstacles.iter().all(|o| obstacles_disjoint(o, &candidate));
        if clear_of_endpoints && clear_of_goal && disjoint {
            obstacles.push(candidate);
        } else {
            *rejections += 1;
        }
    }

    let collision = check_collision(model, &start, &obstacles)?;
    if collision.min_clearance < config.start_clearance {
        return Ok(None);
    }
    Ok(Some(Scene {
        obstacles,
        goal: DVector::from_column_slice(goal.as_slice()),
        start,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::geometry::point_segment_distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_obstacle_lies_near_the_path() {
        let model = RobotModel::desk_default();
        let config = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let scene = sample_scene(&mut rng, &model, &config).unwrap();
            let ee = model.forward_kinematics(&scene.start).unwrap();
            let d = point_segment_distance(
                scene.obstacles[0].center(),
                Vector2::new(ee[0], ee[1]),
                scene.goal_point(),
            );
            assert!(d <= config.lateral_spread + 1e-12);
        }
    }

    #[test]
    fn three_obstacles_do_not_overlap() {
        let model = RobotModel::desk_default();
        let config = SceneConfig {
            n_obstacles: 3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let scene = sample_scene(&mut rng, &model, &config).unwrap();
            assert_eq!(scene.obstacles.len(), 3);
            for i in 0..3 {
                for j in i + 1..3 {
                    let (a, b) = (&scene.obstacles[i], &scene.obstacles[j]);
                    let gap = (a.center() - b.center()).norm();
                    assert!(gap > a.shape.bounding_radius() + b.shape.bounding_radius());
                }
            }
        }
    }

    #[test]
    fn fixed_seed_gives_identical_scene() {
        let model = RobotModel::desk_default();
        let config = SceneConfig::default();
        let a = sample_scene(&mut ChaCha8Rng::seed_from_u64(11), &model, &config).unwrap();
        let b = sample_scene(&mut ChaCha8Rng::seed_from_u64(11), &model, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn obstacle_count_is_validated() {
        let model = RobotModel::desk_default();
        let config = SceneConfig {
            n_obstacles: 4,
            ..Default::default()
        };
        assert!(sample_scene(&mut ChaCha8Rng::seed_from_u64(0), &model, &config).is_err());
    }

    #[test]
    fn impossible_constraints_exhaust_the_sampler() {
        let model = RobotModel::desk_default();
        let config = SceneConfig {
            min_goal_distance: 10.0,
            max_rejections: 100,
            ..Default::default()
        };
        assert!(matches!(
            sample_scene(&mut ChaCha8Rng::seed_from_u64(0), &model, &config),
            Err(Error::SceneSampling(_))
        ));
    }
}
