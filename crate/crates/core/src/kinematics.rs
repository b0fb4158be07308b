//! Serial-link manipulator kinematics.
//!
//! The default robot is a planar revolute chain whose forward kinematics,
//! Jacobian and `J̇·q̇` term are computed in closed form. Joint `i` rotates
//! everything distal to it, so the absolute orientation of link `i` is the
//! cumulative sum `θᵢ = q₀ + … + qᵢ`.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Planar serial chain with capsule-shaped links.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    link_lengths: Vec<f64>,
    joint_limits: Vec<(f64, f64)>,
    link_radius: Vec<f64>,
}

/// Joint angles and velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

/// End-effector position and velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskState {
    pub x: DVector<f64>,
    pub xdot: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Result<Self> {
        check_dim("joint state", q.len(), qdot.len())?;
        if q.iter().chain(qdot.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite joint state".into()));
        }
        Ok(Self { q, qdot })
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: DVector::zeros(n),
        }
    }
}

impl RobotModel {
    pub fn new(
        link_lengths: Vec<f64>,
        joint_limits: Vec<(f64, f64)>,
        link_radius: Vec<f64>,
    ) -> Result<Self> {
        let model = Self {
            link_lengths,
            joint_limits,
            link_radius,
        };
        model.validate()?;
        Ok(model)
    }

    /// Planar 3-link arm: lengths 0.5/0.4/0.3, limits ±2.8 rad, 0.03 capsules.
    pub fn desk_default() -> Self {
        Self {
            link_lengths: vec![0.5, 0.4, 0.3],
            joint_limits: vec![(-2.8, 2.8); 3],
            link_radius: vec![0.03; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.link_lengths.len();
        if n == 0 {
            return Err(Error::InvalidArgument("robot needs at least one link".into()));
        }
        check_dim("joint limits", n, self.joint_limits.len())?;
        check_dim("link radii", n, self.link_radius.len())?;
        if self.link_lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidArgument("link lengths must be positive".into()));
        }
        if self.link_radius.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::InvalidArgument("link radii must be positive".into()));
        }
        if self.joint_limits.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidArgument("joint limits need q_min < q_max".into()));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn task_dim(&self) -> usize {
        2
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.link_lengths
    }

    pub fn joint_limits(&self) -> &[(f64, f64)] {
        &self.joint_limits
    }

    pub fn link_radius(&self) -> &[f64] {
        &self.link_radius
    }

    /// Sum of link lengths; the radius of the reachable disk.
    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        check_dim("joint vector", self.dof(), q.len())
    }

    fn cumulative_angles(&self, q: &DVector<f64>) -> Vec<f64> {
        q.iter()
            .scan(0.0, |acc, &qi| {
                *acc += qi;
                Some(*acc)
            })
            .collect()
    }

    /// Base, every joint, and the end effector: `dof + 1` points.
    pub fn joint_positions(&self, q: &DVector<f64>) -> Result<Vec<Vector2<f64>>> {
        self.check_q(q)?;
        let mut p = Vector2::zeros();
        let mut points = Vec::with_capacity(self.dof() + 1);
        points.push(p);
        for (theta, l) in self.cumulative_angles(q).into_iter().zip(&self.link_lengths) {
            p += Vector2::new(theta.cos(), theta.sin()) * *l;
            points.push(p);
        }
        Ok(points)
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let ee = *self.joint_positions(q)?.last().expect("nonempty chain");
        Ok(DVector::from_column_slice(ee.as_slice()))
    }

    /// End-effector Jacobian, `2 × dof`.
    pub fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_q(q)?;
        let n = self.dof();
        let angles = self.cumulative_angles(q);
        let mut jac = DMatrix::zeros(2, n);
        // Column j collects every link distal to joint j.
        let (mut sx, mut sy) = (0.0, 0.0);
        for i in (0..n).rev() {
            let l = self.link_lengths[i];
            sx -= l * angles[i].sin();
            sy += l * angles[i].cos();
            jac[(0, i)] = sx;
            jac[(1, i)] = sy;
        }
        Ok(jac)
    }

    /// `J̇(q, q̇)·q̇`: the end-effector acceleration at zero joint acceleration.
    pub fn jacobian_dot_qdot(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_q(q)?;
        check_dim("joint velocity", self.dof(), qdot.len())?;
        let angles = self.cumulative_angles(q);
        let mut omega = 0.0;
        let mut acc = DVector::zeros(2);
        for i in 0..self.dof() {
            omega += qdot[i];
            let l = self.link_lengths[i] * omega * omega;
            acc[0] -= l * angles[i].cos();
            acc[1] -= l * angles[i].sin();
        }
        Ok(acc)
    }

    pub fn task_state(&self, state: &JointState) -> Result<TaskState> {
        let x = self.forward_kinematics(&state.q)?;
        let xdot = self.jacobian(&state.q)? * &state.qdot;
        Ok(TaskState { x, xdot })
    }

    pub fn clamp_to_limits(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_q(q)?;
        Ok(DVector::from_iterator(
            q.len(),
            q.iter()
                .zip(&self.joint_limits)
                .map(|(&v, &(lo, hi))| v.clamp(lo, hi)),
        ))
    }

    pub fn within_limits(&self, q: &DVector<f64>, tol: f64) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(&v, &(lo, hi))| v >= lo - tol && v <= hi + tol)
    }
}

/// Generic `J̇q̇` by central differences of a Jacobian along the velocity
/// direction: `(J(q + εq̇) − J(q − εq̇)) / 2ε · q̇`.
pub fn fd_jacobian_dot_qdot<F>(jacobian: F, q: &DVector<f64>, qdot: &DVector<f64>, eps: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let plus = jacobian(&(q + qdot * eps));
    let minus = jacobian(&(q - qdot * eps));
    (plus - minus) / (2.0 * eps) * qdot
}

/// Central-difference Jacobian of an arbitrary map.
pub fn fd_jacobian<F>(map: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let base = map(x);
    let mut jac = DMatrix::zeros(base.len(), x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let orig = probe[j];
        probe[j] = orig + h;
        let up = map(&probe);
        probe[j] = orig - h;
        let down = map(&probe);
        probe[j] = orig;
        jac.set_column(j, &((up - down) / (2.0 * h)));
    }
    jac
}
