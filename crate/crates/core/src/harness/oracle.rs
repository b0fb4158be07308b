//! Brute-force reference checks run by `rmpr oracle`: each compares a
//! production routine against a slower, independent computation on random
//! inputs and reports the worst error seen.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::kinematics::{fd_jacobian, fd_jacobian_dot_qdot, RobotModel};
use crate::rl::{ReplayBuffer, SumTree, Transition};
use crate::rmpflow::{
    gds_curvature, gds_to_rmp, resolve, ConstantLeaf, ForwardKinematicsMap, GdsSpec, IdentityMap, LinearMap,
    PolicyInputs, Rmp, RmpNode, RmpTree,
};
use crate::vae::kl_to_standard_normal;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn normal_mat(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn rel(err: f64, scale: f64) -> f64 {
    err / scale.max(1.0)
}

/// `G(x, ẋ) = I + Σⱼ pⱼ(x, ẋ) Sⱼ` with quadratic scalar polynomials
/// `pⱼ = aⱼ + bⱼᵀx + cⱼᵀẋ + (dⱼᵀx)² + (eⱼᵀẋ)²`.
#[derive(Clone, Debug)]
struct PolyMetric {
    s: Vec<DMatrix<f64>>,
    a: Vec<f64>,
    b: Vec<DVector<f64>>,
    c: Vec<DVector<f64>>,
    d: Vec<DVector<f64>>,
    e: Vec<DVector<f64>>,
}

impl PolyMetric {
    fn random(rng: &mut impl Rng, m: usize) -> Self {
        let terms = rng.random_range(1..=3);
        let mut p = Self {
            s: vec![],
            a: vec![],
            b: vec![],
            c: vec![],
            d: vec![],
            e: vec![],
        };
        for _ in 0..terms {
            let l = normal_mat(rng, m, m) * 0.5;
            p.s.push(&l * l.transpose());
            p.a.push(rng.random_range(0.5..1.5));
            p.b.push(normal_vec(rng, m) * 0.3);
            p.c.push(normal_vec(rng, m) * 0.3);
            p.d.push(normal_vec(rng, m) * 0.3);
            p.e.push(normal_vec(rng, m) * 0.3);
        }
        p
    }

    fn eval(&self, x: &DVector<f64>, xd: &DVector<f64>) -> DMatrix<f64> {
        let m = x.len();
        let mut g = DMatrix::identity(m, m);
        for j in 0..self.s.len() {
            let p = self.a[j] + self.b[j].dot(x) + self.c[j].dot(xd) + self.d[j].dot(x).powi(2) + self.e[j].dot(xd).powi(2);
            g += &self.s[j] * p;
        }
        g
    }

    fn dp_dx(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.b[j] + &self.d[j] * (2.0 * self.d[j].dot(x))
    }

    fn dp_dxd(&self, j: usize, xd: &DVector<f64>) -> DVector<f64> {
        &self.c[j] + &self.e[j] * (2.0 * self.e[j].dot(xd))
    }

    fn curvature(&self, x: &DVector<f64>, xd: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let m = x.len();
        let mut big = DMatrix::zeros(m, m);
        let mut small = DVector::zeros(m);
        for j in 0..self.s.len() {
            let sx = &self.s[j] * xd;
            let gx = self.dp_dx(j, x);
            let gv = self.dp_dxd(j, xd);
            for k in 0..m {
                let mut col = big.column_mut(k);
                col += &sx * (0.5 * gv[k]);
            }
            small += &sx * gx.dot(xd) - gx * (0.5 * xd.dot(&sx));
        }
        (big, small)
    }
}

pub fn gds_curvature_oracle(cases: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let m = rng.random_range(1..=4);
        let poly = PolyMetric::random(&mut rng, m);
        let x = normal_vec(&mut rng, m);
        let xd = normal_vec(&mut rng, m);
        let metric = poly.clone();
        let spec = GdsSpec::new(
            Box::new(move |x, xd| metric.eval(x, xd)),
            Box::new(move |_, _| DMatrix::zeros(m, m)),
            Box::new(move |_| DVector::zeros(m)),
        );
        let (big, small) = gds_curvature(&spec, &x, &xd)?;
        let (big_ref, small_ref) = poly.curvature(&x, &xd);
        worst = worst
            .max(rel((&big - &big_ref).amax(), big_ref.amax()))
            .max(rel((&small - &small_ref).amax(), small_ref.amax()));
    }
    Ok(OracleReport {
        name: "gds curvature vs analytic polynomial metric",
        cases,
        max_error: worst,
        tolerance: 1e-4,
    })
}

fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let l = normal_mat(rng, n, n);
    &l * l.transpose() + DMatrix::identity(n, n) * 0.1
}

fn random_rmp(rng: &mut impl Rng, n: usize) -> Result<Rmp> {
    Rmp::new(normal_vec(rng, n), random_spd(rng, n))
}

/// Random two-level trees over the desk arm compared against flat
/// `Σ Jᵀ(f − M J̇q̇)`, `Σ JᵀMJ` assembly with composed Jacobians.
pub fn tree_assembly_oracle(cases: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = RobotModel::desk_default();
    let n = model.dof();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let q = normal_vec(&mut rng, n);
        let qd = normal_vec(&mut rng, n);
        let ee_rmp = random_rmp(&mut rng, 2)?;
        let k = rng.random_range(1..=3);
        let sub_a = normal_mat(&mut rng, k, 2);
        let sub_b = normal_vec(&mut rng, k);
        let sub_rmp = random_rmp(&mut rng, k)?;
        let j = rng.random_range(1..=4);
        let lin_a = normal_mat(&mut rng, j, n);
        let lin_b = normal_vec(&mut rng, j);
        let poly = PolyMetric::random(&mut rng, j);
        let id_rmp = random_rmp(&mut rng, n)?;

        let gds = |poly: PolyMetric| {
            GdsSpec::new(
                Box::new(move |x, xd| poly.eval(x, xd)),
                Box::new(move |_, _| DMatrix::identity(j, j) * 0.3),
                Box::new(|x| x * 2.0),
            )
        };
        let tree = RmpTree::new(n)
            .with_child(
                RmpNode::leaf("ee", Box::new(ForwardKinematicsMap { model: model.clone() }), Box::new(ConstantLeaf(ee_rmp.clone())))
                    .with_child(RmpNode::leaf(
                        "ee_sub",
                        Box::new(LinearMap { a: sub_a.clone(), b: sub_b.clone() }),
                        Box::new(ConstantLeaf(sub_rmp.clone())),
                    ))?,
            )?
            .with_child(RmpNode::leaf(
                "linear",
                Box::new(LinearMap { a: lin_a.clone(), b: lin_b.clone() }),
                Box::new(gds(poly.clone())),
            ))?
            .with_child(RmpNode::leaf("identity", Box::new(IdentityMap { dim: n }), Box::new(ConstantLeaf(id_rmp.clone()))))?;
        let root = tree.root_rmp(&q, &qd, &PolicyInputs::default())?;

        let j_fk = model.jacobian(&q)?;
        let jdqd_fk = model.jacobian_dot_qdot(&q, &qd)?;
        let x_lin = &lin_a * &q + &lin_b;
        let xd_lin = &lin_a * &qd;
        let lin_rmp = gds_to_rmp(&gds(poly), &x_lin, &xd_lin)?;
        let leaves: [(DMatrix<f64>, DVector<f64>, &Rmp); 4] = [
            (j_fk.clone(), jdqd_fk.clone(), &ee_rmp),
            (&sub_a * &j_fk, &sub_a * &jdqd_fk, &sub_rmp),
            (lin_a.clone(), DVector::zeros(j), &lin_rmp),
            (DMatrix::identity(n, n), DVector::zeros(n), &id_rmp),
        ];
        let mut f = DVector::zeros(n);
        let mut m = DMatrix::zeros(n, n);
        for (jac, jdqd, rmp) in &leaves {
            f += jac.transpose() * (&rmp.f - &rmp.m * jdqd);
            m += jac.transpose() * &rmp.m * jac;
        }
        worst = worst
            .max(rel((&root.f - &f).amax(), f.amax()))
            .max(rel((&root.m - &m).amax(), m.amax()));
    }
    Ok(OracleReport {
        name: "rmp tree vs flat Jacobian assembly",
        cases,
        max_error: worst,
        tolerance: 1e-8,
    })
}

/// `resolve` against an SVD pseudoinverse, including rank-deficient metrics.
pub fn resolve_oracle(cases: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..=6);
        let r = rng.random_range(1..=n);
        let b = normal_mat(&mut rng, n, r);
        let m = &b * b.transpose();
        let f = normal_vec(&mut rng, n);
        let a = resolve(&Rmp::new(f.clone(), m.clone())?)?;
        let svd = m.svd(true, true);
        let cutoff = 1e-9 * svd.singular_values.max();
        let reference = svd.pseudo_inverse(cutoff).map_err(|e| crate::Error::Evaluation(e.to_string()))? * &f;
        worst = worst.max(rel((&a - &reference).amax(), reference.amax()));
    }
    Ok(OracleReport {
        name: "resolve vs SVD pseudoinverse",
        cases,
        max_error: worst,
        tolerance: 1e-8,
    })
}

/// Closed-form Jacobian and `J̇q̇` of the desk arm against finite differences.
pub fn kinematics_oracle(cases: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = RobotModel::desk_default();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let q = normal_vec(&mut rng, 3);
        let qd = normal_vec(&mut rng, 3);
        let fk = |p: &DVector<f64>| model.forward_kinematics(p).expect("fixed dimension");
        let j_fd = fd_jacobian(fk, &q, 1e-6);
        let jdqd_fd = fd_jacobian_dot_qdot(|p| model.jacobian(p).expect("fixed dimension"), &q, &qd, 1e-5);
        worst = worst
            .max((model.jacobian(&q)? - j_fd).amax())
            .max((model.jacobian_dot_qdot(&q, &qd)? - jdqd_fd).amax());
    }
    Ok(OracleReport {
        name: "arm Jacobian and J̇q̇ vs finite differences",
        cases,
        max_error: worst,
        tolerance: 1e-6,
    })
}

/// Random sets and prefix-mass queries against a plain array.
pub fn sum_tree_oracle(ops: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = 1000;
    let mut tree = SumTree::new(size);
    let mut naive = vec![0.0; size];
    let mut worst: f64 = 0.0;
    for _ in 0..ops {
        if rng.random_bool(0.7) {
            let i = rng.random_range(0..size);
            let v = rng.random_range(0.0..10.0);
            tree.set(i, v);
            naive[i] = v;
        } else {
            let total: f64 = naive.iter().sum();
            worst = worst.max((tree.total() - total).abs());
            if total > 0.0 {
                let mass = rng.random_range(0.0..total);
                let i = tree.find(mass);
                let before: f64 = naive[..i].iter().sum();
                // The found leaf must contain `mass` in its cumulative range.
                let miss = if mass < before {
                    before - mass
                } else if mass >= before + naive[i] {
                    mass - before - naive[i]
                } else {
                    0.0
                };
                worst = worst.max(miss);
            }
        }
    }
    Ok(OracleReport {
        name: "sum tree vs naive prefix sums",
        cases: ops,
        max_error: worst,
        tolerance: 1e-6,
    })
}

/// Empirical sampling frequencies against `pᵢ^α / Σ pⱼ^α`.
pub fn per_frequency_oracle(draws: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let priorities = [0.5, 1.0, 2.0, 4.0, 0.1];
    let alpha = 0.6;
    let mut buffer = ReplayBuffer::new(priorities.len(), alpha, 1e-3)?;
    for (i, &p) in priorities.iter().enumerate() {
        buffer.push(Transition {
            state: vec![0.0],
            action: vec![0.0],
            reward: 0.0,
            next_state: vec![0.0],
            done: false,
        });
        buffer.set_priority(i, p);
    }
    let mut counts = [0usize; 5];
    let batch = 100;
    for _ in 0..draws / batch {
        for i in buffer.sample(batch, 0.4, &mut rng)?.indices {
            counts[i] += 1;
        }
    }
    let z: f64 = priorities.iter().map(|p: &f64| p.powf(alpha)).sum();
    let total = (draws / batch * batch) as f64;
    let worst = priorities
        .iter()
        .zip(counts)
        .map(|(p, c)| (c as f64 / total - p.powf(alpha) / z).abs())
        .fold(0.0, f64::max);
    Ok(OracleReport {
        name: "PER sampling frequencies vs p^alpha proportions",
        cases: draws,
        max_error: worst,
        tolerance: 0.01,
    })
}

/// Closed-form KL against a Monte-Carlo estimate with antithetic pairs,
/// relative error.
pub fn kl_oracle(samples: usize, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ls: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
        let exact = kl_to_standard_normal(&mu, &ls);
        let mut acc = 0.0;
        for _ in 0..samples / 2 {
            for i in 0..4 {
                let eps: f64 = StandardNormal.sample(&mut rng);
                for e in [eps, -eps] {
                    let z = mu[i] + ls[i].exp() * e;
                    acc += -ls[i] - 0.5 * e * e + 0.5 * z * z;
                }
            }
        }
        worst = worst.max((acc / (samples / 2 * 2) as f64 - exact).abs() / exact.abs());
    }
    Ok(OracleReport {
        name: "Gaussian KL closed form vs Monte Carlo",
        cases: samples,
        max_error: worst,
        tolerance: 0.01,
    })
}

pub fn run_all(seed: u64) -> Result<Vec<OracleReport>> {
    Ok(vec![
        gds_curvature_oracle(200, seed)?,
        tree_assembly_oracle(100, seed)?,
        resolve_oracle(200, seed)?,
        kinematics_oracle(200, seed)?,
        sum_tree_oracle(10_000, seed)?,
        per_frequency_oracle(100_000, seed)?,
        kl_oracle(100_000, seed)?,
    ])
}
