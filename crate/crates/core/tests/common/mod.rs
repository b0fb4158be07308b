//! Reference implementations shared by the integration tests. Everything
//! here is written independently of the library code it checks.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmpr::kinematics::RobotModel;
use rmpr::policies::{baseline_rmp, joint_limit_rmp, reactive_rmp, BaselineSpec, PolicyConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// Planar chain positions: base, every joint, end effector.
pub fn chain_points(lengths: &[f64], q: &DVector<f64>) -> Vec<Vector2<f64>> {
    let mut points = vec![Vector2::zeros()];
    let mut angle = 0.0;
    for (i, l) in lengths.iter().enumerate() {
        angle += q[i];
        let last = *points.last().unwrap();
        points.push(last + Vector2::new(l * angle.cos(), l * angle.sin()));
    }
    points
}

pub fn end_effector(lengths: &[f64], q: &DVector<f64>) -> DVector<f64> {
    let p = *chain_points(lengths, q).last().unwrap();
    v(&[p.x, p.y])
}

/// Revolute-joint Jacobian from geometry: column j is `ẑ × (p_ee − p_j)`.
pub fn jacobian(lengths: &[f64], q: &DVector<f64>) -> DMatrix<f64> {
    let points = chain_points(lengths, q);
    let ee = *points.last().unwrap();
    let mut jac = DMatrix::zeros(2, lengths.len());
    for j in 0..lengths.len() {
        let r = ee - points[j];
        jac[(0, j)] = -r.y;
        jac[(1, j)] = r.x;
    }
    jac
}

/// `J̇q̇` by central differences of the geometric Jacobian along `q̇`.
pub fn jacobian_dot_qdot(lengths: &[f64], q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
    let h = 1e-6;
    let plus = jacobian(lengths, &(q + qdot * h));
    let minus = jacobian(lengths, &(q - qdot * h));
    (plus - minus) / (2.0 * h) * qdot
}

/// Minimum-norm least-squares solution of `M a = f` through the SVD.
pub fn svd_solve(m: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DVector::zeros(f.len());
    }
    svd.solve(f, 1e-9 * smax).expect("svd with both factors")
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Random symmetric positive semidefinite matrix of the given rank.
pub fn random_psd(rng: &mut impl Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose()
}

/// Flat reference for the standard three-leaf tree: sum `Jᵀ(f − M J̇q̇)` and
/// `JᵀMJ` over the leaves with geometric Jacobians, then solve by SVD.
pub fn flat_tree_acceleration(
    model: &RobotModel,
    config: &PolicyConfig,
    goal: &DVector<f64>,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    action: &DVector<f64>,
) -> DVector<f64> {
    let lengths = model.link_lengths();
    let j = jacobian(lengths, q);
    let x = end_effector(lengths, q);
    let xdot = &j * qdot;
    let baseline = baseline_rmp(&BaselineSpec::new(goal.clone(), config.baseline_damping).unwrap(), &x, &xdot).unwrap();
    let reactive = reactive_rmp(&config.reactive().unwrap(), q, qdot, action).unwrap();
    let limits = joint_limit_rmp(&config.limits, model, q, qdot).unwrap();
    let jdq = jacobian_dot_qdot(lengths, q, qdot);
    let f = j.transpose() * (&baseline.f - &baseline.m * jdq) + &reactive.f + &limits.f;
    let m = j.transpose() * &baseline.m * &j + &reactive.m + &limits.m;
    svd_solve(&m, &f)
}
