//! Leaf policies of the control tree and the tree assembly.
//!
//! ```text
//!            root (configuration space)
//!          /            |             \
//!   l1: identity    l2: FK map      l3: identity
//!   reactive RMP    goal attractor  joint-limit RMP
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kinematics::RobotModel;
use crate::rmpflow::{ForwardKinematicsMap, IdentityMap, LeafPolicy, PolicyInputs, Rmp, RmpNode, RmpTree};

/// Goal attractor: `I·d̈ = −d − w·ḋ` with `d = x − x_g`.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSpec {
    pub goal: DVector<f64>,
    pub damping: f64,
}

/// Learned joint-space policy: the action is the offset `d_q = q − q_g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactiveSpec {
    pub damping: f64,
    pub action_bound: f64,
}

/// Ramp barrier that pushes joints back from their limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimitSpec {
    /// Width of the active band next to each limit (rad).
    pub margin: f64,
    /// Peak repulsive acceleration at the limit (rad/s²).
    pub gain: f64,
    pub damping: f64,
}

impl BaselineSpec {
    pub fn new(goal: DVector<f64>, damping: f64) -> Result<Self> {
        if !(damping > 0.0) {
            return Err(Error::InvalidArgument("baseline damping must be positive".into()));
        }
        Ok(Self { goal, damping })
    }
}

impl ReactiveSpec {
    pub fn new(damping: f64, action_bound: f64) -> Result<Self> {
        if !(damping > 0.0 && action_bound > 0.0) {
            return Err(Error::InvalidArgument("reactive damping and action bound must be positive".into()));
        }
        Ok(Self { damping, action_bound })
    }

    pub fn clamp_action(&self, action: &DVector<f64>) -> DVector<f64> {
        let bound = self.action_bound;
        if action.iter().any(|a| a.abs() > bound) {
            log::debug!("reactive action clamped to ±{bound}");
        }
        action.map(|a| a.clamp(-bound, bound))
    }
}

impl Default for JointLimitSpec {
    fn default() -> Self {
        Self {
            margin: 0.3,
            gain: 10.0,
            damping: 1.0,
        }
    }
}

impl JointLimitSpec {
    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        if !(self.margin > 0.0 && self.gain > 0.0 && self.damping > 0.0) {
            return Err(Error::InvalidArgument("joint-limit parameters must be positive".into()));
        }
        let narrowest = model
            .joint_limits()
            .iter()
            .map(|(lo, hi)| hi - lo)
            .fold(f64::INFINITY, f64::min);
        if self.margin >= narrowest / 2.0 {
            return Err(Error::InvalidArgument(
                "joint-limit margin must be under half the narrowest joint range".into(),
            ));
        }
        Ok(())
    }
}

pub fn baseline_rmp(spec: &BaselineSpec, x: &DVector<f64>, xdot: &DVector<f64>) -> Result<Rmp> {
    check_dim("baseline goal", spec.goal.len(), x.len())?;
    check_dim("baseline velocity", x.len(), xdot.len())?;
    let d = x - &spec.goal;
    let f = -d - xdot * spec.damping;
    Rmp::new(f, DMatrix::identity(x.len(), x.len()))
}

pub fn reactive_rmp(
    spec: &ReactiveSpec,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    action: &DVector<f64>,
) -> Result<Rmp> {
    check_dim("reactive velocity", q.len(), qdot.len())?;
    check_dim("reactive action", q.len(), action.len())?;
    let offset = spec.clamp_action(action);
    let f = -offset - qdot * spec.damping;
    Rmp::new(f, DMatrix::identity(q.len(), q.len()))
}

/// Per joint: inactive farther than `margin` from both limits; inside the
/// band the canonical acceleration is `gain·(margin − s)/margin` inward minus
/// `damping·q̇`, weighted by a metric that ramps from 0 at the band edge to 1
/// at the limit. Past a limit the ramp saturates at full strength.
pub fn joint_limit_rmp(
    spec: &JointLimitSpec,
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> Result<Rmp> {
    let n = model.dof();
    check_dim("joint-limit position", n, q.len())?;
    check_dim("joint-limit velocity", n, qdot.len())?;
    let mut f = DVector::zeros(n);
    let mut weights = DVector::zeros(n);
    for (i, &(lo, hi)) in model.joint_limits().iter().enumerate() {
        let to_lower = q[i] - lo;
        let to_upper = hi - q[i];
        let (distance, inward) = if to_upper < to_lower { (to_upper, -1.0) } else { (to_lower, 1.0) };
        if distance >= spec.margin {
            continue;
        }
        let ramp = ((spec.margin - distance) / spec.margin).min(1.0);
        let accel = inward * spec.gain * ramp - spec.damping * qdot[i];
        weights[i] = ramp;
        f[i] = ramp * accel;
    }
    Rmp::new(f, DMatrix::from_diagonal(&weights))
}

/// Joints currently past a limit.
pub fn violated_joints(model: &RobotModel, q: &DVector<f64>) -> Vec<usize> {
    model
        .joint_limits()
        .iter()
        .enumerate()
        .filter(|(i, &(lo, hi))| q[*i] < lo || q[*i] > hi)
        .map(|(i, _)| i)
        .collect()
}

pub struct BaselineLeaf(pub BaselineSpec);

impl LeafPolicy for BaselineLeaf {
    fn rmp(&self, x: &DVector<f64>, xdot: &DVector<f64>, _inputs: &PolicyInputs) -> Result<Rmp> {
        baseline_rmp(&self.0, x, xdot)
    }
}

/// Reads its action from [`PolicyInputs::action`]; no action means zero.
pub struct ReactiveLeaf(pub ReactiveSpec);

impl LeafPolicy for ReactiveLeaf {
    fn rmp(&self, q: &DVector<f64>, qdot: &DVector<f64>, inputs: &PolicyInputs) -> Result<Rmp> {
        match inputs.action {
            Some(action) => reactive_rmp(&self.0, q, qdot, action),
            None => reactive_rmp(&self.0, q, qdot, &DVector::zeros(q.len())),
        }
    }
}

pub struct JointLimitLeaf {
    pub spec: JointLimitSpec,
    pub model: RobotModel,
}

impl LeafPolicy for JointLimitLeaf {
    fn rmp(&self, q: &DVector<f64>, qdot: &DVector<f64>, _inputs: &PolicyInputs) -> Result<Rmp> {
        let violated = violated_joints(&self.model, q);
        if !violated.is_empty() {
            log::debug!("joints {violated:?} past their limits");
        }
        joint_limit_rmp(&self.spec, &self.model, q, qdot)
    }
}

/// Which leaves are attached to the root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeLayout {
    /// Baseline attractor + learned residual + joint limits.
    Residual,
    /// Learned policy + joint limits, no baseline.
    Vanilla,
    /// Baseline attractor alone.
    BaselineOnly,
    /// Baseline attractor + joint limits.
    BaselineWithLimits,
}

/// Gains shared by every tree built for an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub baseline_damping: f64,
    pub reactive_damping: f64,
    pub action_bound: f64,
    pub limits: JointLimitSpec,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            baseline_damping: 2.0,
            reactive_damping: 0.01,
            action_bound: 0.5,
            limits: JointLimitSpec::default(),
        }
    }
}

impl PolicyConfig {
    pub fn reactive(&self) -> Result<ReactiveSpec> {
        ReactiveSpec::new(self.reactive_damping, self.action_bound)
    }

    pub fn build(&self, model: &RobotModel, goal: &DVector<f64>, layout: TreeLayout) -> Result<RmpTree> {
        let baseline = BaselineSpec::new(goal.clone(), self.baseline_damping)?;
        let reactive = self.reactive()?;
        match layout {
            TreeLayout::Residual => build_tree(model, Some(&baseline), Some(&reactive), Some(&self.limits)),
            TreeLayout::Vanilla => build_tree(model, None, Some(&reactive), Some(&self.limits)),
            TreeLayout::BaselineOnly => build_tree(model, Some(&baseline), None, None),
            TreeLayout::BaselineWithLimits => build_tree(model, Some(&baseline), None, Some(&self.limits)),
        }
    }
}

/// Assemble the three-leaf tree; any leaf may be left out.
pub fn build_tree(
    model: &RobotModel,
    baseline: Option<&BaselineSpec>,
    reactive: Option<&ReactiveSpec>,
    limits: Option<&JointLimitSpec>,
) -> Result<RmpTree> {
    let n = model.dof();
    let mut tree = RmpTree::new(n);
    if let Some(spec) = reactive {
        tree.add_child(RmpNode::leaf(
            "l1_reactive",
            Box::new(IdentityMap { dim: n }),
            Box::new(ReactiveLeaf(*spec)),
        ))?;
    }
    if let Some(spec) = baseline {
        check_dim("baseline goal", model.task_dim(), spec.goal.len())?;
        tree.add_child(RmpNode::leaf(
            "l2_baseline",
            Box::new(ForwardKinematicsMap { model: model.clone() }),
            Box::new(BaselineLeaf(spec.clone())),
        ))?;
    }
    if let Some(spec) = limits {
        spec.validate(model)?;
        tree.add_child(RmpNode::leaf(
            "l3_joint_limits",
            Box::new(IdentityMap { dim: n }),
            Box::new(JointLimitLeaf {
                spec: *spec,
                model: model.clone(),
            }),
        ))?;
    }
    Ok(tree)
}
