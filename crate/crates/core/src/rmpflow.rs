//! RMP calculus: natural-form motion policies, geometric dynamical systems
//! and the tree operators (pushforward, pullback, add, resolve).
//!
//! Every RMP is stored in natural form `(f, M)`. A tree is evaluated by
//! pushing the root state `(q, q̇)` leafward through each task map, asking the
//! leaves for their RMPs, pulling the results back rootward with
//! `f ← Jᵀ(f − M·J̇q̇)`, `M ← JᵀMJ`, summing at every node, and finally
//! resolving the root RMP into an acceleration with a pseudoinverse.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::kinematics::{fd_jacobian, fd_jacobian_dot_qdot, RobotModel};

/// Step used for finite-difference curvature terms.
pub const CURVATURE_FD_STEP: f64 = 1e-5;
/// Relative singular-value cutoff used by [`resolve`].
pub const RESOLVE_CUTOFF: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-9;

/// A motion policy in natural form.
#[derive(Clone, Debug, PartialEq)]
pub struct Rmp {
    pub f: DVector<f64>,
    pub m: DMatrix<f64>,
}

impl Rmp {
    pub fn new(f: DVector<f64>, m: DMatrix<f64>) -> Result<Self> {
        check_dim("rmp metric rows", f.len(), m.nrows())?;
        check_dim("rmp metric cols", f.len(), m.ncols())?;
        Ok(Self { f, m })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            f: DVector::zeros(dim),
            m: DMatrix::zeros(dim, dim),
        }
    }

    /// Natural form of a canonical policy `(a, M)`.
    pub fn from_canonical(a: &DVector<f64>, m: DMatrix<f64>) -> Result<Self> {
        Self::new(&m * a, m)
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.m - self.m.transpose()).amax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.m + self.m.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.min()
    }
}

impl std::ops::Add for Rmp {
    type Output = Rmp;

    fn add(self, rhs: Rmp) -> Rmp {
        Rmp {
            f: self.f + rhs.f,
            m: self.m + rhs.m,
        }
    }
}

/// Sum of RMPs living on the same manifold.
pub fn add(rmps: &[Rmp]) -> Result<Rmp> {
    let first = rmps
        .first()
        .ok_or_else(|| Error::InvalidArgument("add needs at least one rmp".into()))?;
    let mut total = first.clone();
    for rmp in &rmps[1..] {
        check_dim("add", total.dim(), rmp.dim())?;
        total.f += &rmp.f;
        total.m += &rmp.m;
    }
    Ok(total)
}

/// Canonical acceleration `a = M⁺ f`.
///
/// The pseudoinverse comes from the eigendecomposition of the symmetric
/// metric, discarding eigenvalues below `RESOLVE_CUTOFF · λ_max`, which is the
/// minimum-norm least-squares solution of `M a = f`.
pub fn resolve(rmp: &Rmp) -> Result<DVector<f64>> {
    let scale = rmp.m.amax().max(1.0);
    if rmp.asymmetry() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidArgument(format!(
            "resolve needs a symmetric metric (asymmetry {:.3e})",
            rmp.asymmetry()
        )));
    }
    let n = rmp.dim();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let sym = (&rmp.m + rmp.m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let largest = eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let mut a = DVector::zeros(n);
    if largest == 0.0 {
        return Ok(a);
    }
    let cutoff = RESOLVE_CUTOFF * largest;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let v = eig.eigenvectors.column(i);
            a += v * (v.dot(&rmp.f) / lambda);
        }
    }
    Ok(a)
}

pub type MatrixFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type VectorFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type CurvatureFn =
    Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) + Send + Sync>;

/// Geometric dynamical system `(G + Ξ_G)ẍ + ξ_G = −∇Φ − Bẋ`.
pub struct GdsSpec {
    metric: MatrixFn,
    damping: MatrixFn,
    potential_grad: VectorFn,
    curvature: Option<CurvatureFn>,
    fd_step: f64,
}

impl GdsSpec {
    pub fn new(metric: MatrixFn, damping: MatrixFn, potential_grad: VectorFn) -> Self {
        Self {
            metric,
            damping,
            potential_grad,
            curvature: None,
            fd_step: CURVATURE_FD_STEP,
        }
    }

    /// Replace finite differences with analytic `(Ξ_G, ξ_G)`.
    pub fn with_analytic_curvature(mut self, curvature: CurvatureFn) -> Self {
        self.curvature = Some(curvature);
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn metric(&self, x: &DVector<f64>, xdot: &DVector<f64>) -> DMatrix<f64> {
        (self.metric)(x, xdot)
    }

    pub fn damping(&self, x: &DVector<f64>, xdot: &DVector<f64>) -> DMatrix<f64> {
        (self.damping)(x, xdot)
    }

    pub fn potential_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.potential_grad)(x)
    }

    fn checked_metric(&self, x: &DVector<f64>, xdot: &DVector<f64>) -> Result<DMatrix<f64>> {
        let g = self.metric(x, xdot);
        check_dim("gds metric", x.len(), g.nrows())?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("metric evaluated to a non-finite value".into()));
        }
        Ok(g)
    }
}

/// Curvature terms `Ξ_G = ½ Σᵢ ẋᵢ ∂_ẋ gᵢ` and `ξ_G = Gˣẋ − ½∇ₓ(ẋᵀGẋ)`.
pub fn gds_curvature(
    spec: &GdsSpec,
    x: &DVector<f64>,
    xdot: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_dim("gds state", x.len(), xdot.len())?;
    if let Some(curvature) = &spec.curvature {
        return Ok(curvature(x, xdot));
    }
    let m = x.len();
    let h = spec.fd_step;
    spec.checked_metric(x, xdot)?;

    // Column k of Ξ is ½ (∂G/∂ẋₖ) ẋ.
    let mut big_xi = DMatrix::zeros(m, m);
    let mut probe = xdot.clone();
    for k in 0..m {
        let orig = probe[k];
        probe[k] = orig + h;
        let up = spec.checked_metric(x, &probe)?;
        probe[k] = orig - h;
        let down = spec.checked_metric(x, &probe)?;
        probe[k] = orig;
        big_xi.set_column(k, &((up - down) / (2.0 * h) * xdot * 0.5));
    }

    // Gˣ is the directional derivative of G along ẋ.
    let g_up = spec.checked_metric(&(x + xdot * h), xdot)?;
    let g_down = spec.checked_metric(&(x - xdot * h), xdot)?;
    let g_x = (g_up - g_down) / (2.0 * h);
    let mut small_xi = g_x * xdot;

    let mut probe = x.clone();
    for k in 0..m {
        let orig = probe[k];
        probe[k] = orig + h;
        let up = spec.checked_metric(&probe, xdot)?;
        probe[k] = orig - h;
        let down = spec.checked_metric(&probe, xdot)?;
        probe[k] = orig;
        let d_g = (up - down) / (2.0 * h);
        small_xi[k] -= 0.5 * xdot.dot(&(d_g * xdot));
    }
    Ok((big_xi, small_xi))
}

/// Natural form of a GDS: `M = G + Ξ_G`, `f = −ξ_G − ∇Φ − Bẋ`.
pub fn gds_to_rmp(spec: &GdsSpec, x: &DVector<f64>, xdot: &DVector<f64>) -> Result<Rmp> {
    let (big_xi, small_xi) = gds_curvature(spec, x, xdot)?;
    let g = spec.checked_metric(x, xdot)?;
    let b = spec.damping(x, xdot);
    let grad = spec.potential_grad(x);
    check_dim("gds potential gradient", x.len(), grad.len())?;
    let f = -small_xi - grad - b * xdot;
    Rmp::new(f, g + big_xi)
}

/// Differentiable map from a parent manifold to a child manifold.
pub trait TaskMap: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn map(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// `J̇ẋ`; defaults to a central difference of the Jacobian along `ẋ`.
    fn jacobian_dot_qdot(&self, x: &DVector<f64>, xdot: &DVector<f64>) -> Result<DVector<f64>> {
        let eps = 1e-6;
        let plus = self.jacobian(&(x + xdot * eps))?;
        let minus = self.jacobian(&(x - xdot * eps))?;
        Ok((plus - minus) / (2.0 * eps) * xdot)
    }
}

#[derive(Clone, Debug)]
pub struct IdentityMap {
    pub dim: usize,
}

impl TaskMap for IdentityMap {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn map(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("identity map", self.dim, x.len())?;
        Ok(x.clone())
    }
    fn jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(self.dim, self.dim))
    }
    fn jacobian_dot_qdot(&self, _x: &DVector<f64>, _xdot: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.dim))
    }
}

/// Affine map `x ↦ A x + b`.
#[derive(Clone, Debug)]
pub struct LinearMap {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl TaskMap for LinearMap {
    fn input_dim(&self) -> usize {
        self.a.ncols()
    }
    fn output_dim(&self) -> usize {
        self.a.nrows()
    }
    fn map(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("linear map", self.a.ncols(), x.len())?;
        Ok(&self.a * x + &self.b)
    }
    fn jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.a.clone())
    }
    fn jacobian_dot_qdot(&self, _x: &DVector<f64>, _xdot: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.a.nrows()))
    }
}

/// End-effector forward kinematics as a task map.
#[derive(Clone, Debug)]
pub struct ForwardKinematicsMap {
    pub model: RobotModel,
}

impl TaskMap for ForwardKinematicsMap {
    fn input_dim(&self) -> usize {
        self.model.dof()
    }
    fn output_dim(&self) -> usize {
        self.model.task_dim()
    }
    fn map(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.model.forward_kinematics(q)
    }
    fn jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.model.jacobian(q)
    }
    fn jacobian_dot_qdot(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DVector<f64>> {
        self.model.jacobian_dot_qdot(q, qdot)
    }
}

/// User-supplied map with finite-difference derivatives.
pub struct FnMap {
    input_dim: usize,
    output_dim: usize,
    func: VectorFn,
    fd_step: f64,
}

impl FnMap {
    pub fn new(input_dim: usize, output_dim: usize, func: VectorFn) -> Self {
        Self {
            input_dim,
            output_dim,
            func,
            fd_step: 1e-6,
        }
    }
}

impl TaskMap for FnMap {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn map(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("fn map", self.input_dim, x.len())?;
        Ok((self.func)(x))
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("fn map", self.input_dim, x.len())?;
        Ok(fd_jacobian(&self.func, x, self.fd_step))
    }
    fn jacobian_dot_qdot(&self, x: &DVector<f64>, xdot: &DVector<f64>) -> Result<DVector<f64>> {
        let h = self.fd_step;
        let f = &self.func;
        Ok(fd_jacobian_dot_qdot(|p| fd_jacobian(f, p, h), x, xdot, 1e-4))
    }
}

/// `x_c = φ(x_p)`, `ẋ_c = J(x_p) ẋ_p`.
pub fn pushforward(
    map: &dyn TaskMap,
    x: &DVector<f64>,
    xdot: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_dim("pushforward position", map.input_dim(), x.len())?;
    check_dim("pushforward velocity", map.input_dim(), xdot.len())?;
    let xc = map.map(x)?;
    let xdotc = map.jacobian(x)? * xdot;
    Ok((xc, xdotc))
}

/// `f_p = Jᵀ(f_c − M_c J̇ẋ)`, `M_p = Jᵀ M_c J`.
pub fn pullback(
    map: &dyn TaskMap,
    child: &Rmp,
    x: &DVector<f64>,
    xdot: &DVector<f64>,
) -> Result<Rmp> {
    check_dim("pullback rmp", map.output_dim(), child.dim())?;
    check_dim("pullback state", map.input_dim(), x.len())?;
    let j = map.jacobian(x)?;
    let jdot_qdot = map.jacobian_dot_qdot(x, xdot)?;
    let jt = j.transpose();
    let f = &jt * (&child.f - &child.m * jdot_qdot);
    let m = &jt * &child.m * &j;
    Rmp::new(f, m)
}

/// Extra per-evaluation inputs that leaf policies may read.
#[derive(Clone, Copy, Debug, Default)]
pub struct PolicyInputs<'a> {
    /// Action injected into learned leaves.
    pub action: Option<&'a DVector<f64>>,
}

/// A policy attached to a tree node, evaluated on the node's manifold.
pub trait LeafPolicy: Send + Sync {
    fn rmp(&self, x: &DVector<f64>, xdot: &DVector<f64>, inputs: &PolicyInputs) -> Result<Rmp>;
}

impl LeafPolicy for GdsSpec {
    fn rmp(&self, x: &DVector<f64>, xdot: &DVector<f64>, _inputs: &PolicyInputs) -> Result<Rmp> {
        gds_to_rmp(self, x, xdot)
    }
}

/// A leaf that always returns the same RMP.
#[derive(Clone, Debug)]
pub struct ConstantLeaf(pub Rmp);

impl LeafPolicy for ConstantLeaf {
    fn rmp(&self, x: &DVector<f64>, _xdot: &DVector<f64>, _inputs: &PolicyInputs) -> Result<Rmp> {
        check_dim("constant leaf", self.0.dim(), x.len())?;
        Ok(self.0.clone())
    }
}

pub struct RmpNode {
    pub name: String,
    map: Box<dyn TaskMap>,
    leaf: Option<Box<dyn LeafPolicy>>,
    children: Vec<RmpNode>,
}

impl RmpNode {
    pub fn new(name: impl Into<String>, map: Box<dyn TaskMap>) -> Self {
        Self {
            name: name.into(),
            map,
            leaf: None,
            children: Vec::new(),
        }
    }

    pub fn leaf(name: impl Into<String>, map: Box<dyn TaskMap>, policy: Box<dyn LeafPolicy>) -> Self {
        Self::new(name, map).with_policy(policy)
    }

    pub fn with_policy(mut self, policy: Box<dyn LeafPolicy>) -> Self {
        self.leaf = Some(policy);
        self
    }

    pub fn with_child(mut self, child: RmpNode) -> Result<Self> {
        check_dim("child node input", self.map.output_dim(), child.map.input_dim())?;
        self.children.push(child);
        Ok(self)
    }

    pub fn map(&self) -> &dyn TaskMap {
        self.map.as_ref()
    }

    pub fn children(&self) -> &[RmpNode] {
        &self.children
    }

    /// RMP of this subtree pulled back into the parent's coordinates.
    fn evaluate(&self, x: &DVector<f64>, xdot: &DVector<f64>, inputs: &PolicyInputs) -> Result<Rmp> {
        let (xc, xdotc) = pushforward(self.map.as_ref(), x, xdot)?;
        let mut total = Rmp::zeros(self.map.output_dim());
        if let Some(leaf) = &self.leaf {
            let rmp = leaf.rmp(&xc, &xdotc, inputs)?;
            check_dim("leaf rmp", total.dim(), rmp.dim())?;
            total = total + rmp;
        }
        for child in &self.children {
            total = total + child.evaluate(&xc, &xdotc, inputs)?;
        }
        pullback(self.map.as_ref(), &total, x, xdot)
    }
}

/// Rooted tree whose root is the configuration space.
pub struct RmpTree {
    root_dim: usize,
    children: Vec<RmpNode>,
}

impl RmpTree {
    pub fn new(root_dim: usize) -> Self {
        Self {
            root_dim,
            children: Vec::new(),
        }
    }

    pub fn with_child(mut self, child: RmpNode) -> Result<Self> {
        self.add_child(child)?;
        Ok(self)
    }

    pub fn add_child(&mut self, child: RmpNode) -> Result<()> {
        check_dim("root child input", self.root_dim, child.map.input_dim())?;
        self.children.push(child);
        Ok(())
    }

    pub fn root_dim(&self) -> usize {
        self.root_dim
    }

    pub fn children(&self) -> &[RmpNode] {
        &self.children
    }

    /// Root RMP before resolution.
    pub fn root_rmp(&self, q: &DVector<f64>, qdot: &DVector<f64>, inputs: &PolicyInputs) -> Result<Rmp> {
        check_dim("root position", self.root_dim, q.len())?;
        check_dim("root velocity", self.root_dim, qdot.len())?;
        let mut total = Rmp::zeros(self.root_dim);
        for child in &self.children {
            total = total + child.evaluate(q, qdot, inputs)?;
        }
        Ok(total)
    }

    /// Desired root acceleration `q̈ᵈ`.
    pub fn evaluate(&self, q: &DVector<f64>, qdot: &DVector<f64>, inputs: &PolicyInputs) -> Result<DVector<f64>> {
        resolve(&self.root_rmp(q, qdot, inputs)?)
    }
}

pub fn evaluate_tree(
    tree: &RmpTree,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    inputs: &PolicyInputs,
) -> Result<DVector<f64>> {
    tree.evaluate(q, qdot, inputs)
}
