//! Per-step reward `r = r_collide + r_goal + r_dist + r_control`.

use nalgebra::DVector;

pub const COLLISION_PENALTY: f64 = -10.0;
pub const GOAL_BONUS: f64 = 5.0;
pub const DISTANCE_SLOPE: f64 = -1.6;
pub const DISTANCE_OFFSET: f64 = 0.75;
pub const CONTROL_WEIGHT: f64 = -0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardTerms {
    pub collide: f64,
    pub goal: f64,
    pub dist: f64,
    pub control: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.collide + self.goal + self.dist + self.control
    }
}

impl std::ops::AddAssign for RewardTerms {
    fn add_assign(&mut self, rhs: Self) {
        self.collide += rhs.collide;
        self.goal += rhs.goal;
        self.dist += rhs.dist;
        self.control += rhs.control;
    }
}

pub fn reward(
    x: &DVector<f64>,
    goal: &DVector<f64>,
    action: &DVector<f64>,
    collided: bool,
    at_goal: bool,
) -> (RewardTerms, f64) {
    let terms = RewardTerms {
        collide: if collided { COLLISION_PENALTY } else { 0.0 },
        goal: if at_goal { GOAL_BONUS } else { 0.0 },
        dist: DISTANCE_SLOPE * (x - goal).norm() + DISTANCE_OFFSET,
        control: CONTROL_WEIGHT * action.norm(),
    };
    (terms, terms.total())
}
