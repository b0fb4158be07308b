mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rmpr::kinematics::RobotModel;
use rmpr::policies::{
    build_tree, joint_limit_rmp, reactive_rmp, BaselineSpec, JointLimitSpec, PolicyConfig, ReactiveSpec,
    TreeLayout,
};
use rmpr::rmpflow::{
    add, gds_to_rmp, pullback, pushforward, resolve, GdsSpec, IdentityMap, LinearMap, PolicyInputs, Rmp, RmpNode,
    RmpTree, TaskMap,
};

fn random_rmp(rng: &mut impl Rng, n: usize) -> Rmp {
    let m = random_psd(rng, n, n) + DMatrix::identity(n, n) * 0.1;
    Rmp::new(uniform_vec(rng, n, -2.0, 2.0), m).unwrap()
}

#[test]
fn kinematics_match_the_geometric_chain() {
    let model = RobotModel::desk_default();
    let lengths = model.link_lengths().to_vec();
    let mut rng = rng(1);
    for _ in 0..200 {
        let q = uniform_vec(&mut rng, 3, -2.8, 2.8);
        let qdot = uniform_vec(&mut rng, 3, -2.0, 2.0);
        assert!(rel_err(&model.forward_kinematics(&q).unwrap(), &end_effector(&lengths, &q)) < 1e-14);
        assert!(rel_err_mat(&model.jacobian(&q).unwrap(), &jacobian(&lengths, &q)) < 1e-13);
        let jdq = model.jacobian_dot_qdot(&q, &qdot).unwrap();
        assert!(rel_err(&jdq, &jacobian_dot_qdot(&lengths, &q, &qdot)) < 1e-8);
    }
}

#[test]
fn straight_arm_reaches_full_length() {
    let model = RobotModel::desk_default();
    let x = model.forward_kinematics(&DVector::zeros(3)).unwrap();
    assert!((x - v(&[1.2, 0.0])).amax() < 1e-15);
    let folded = model.forward_kinematics(&v(&[std::f64::consts::FRAC_PI_2, 0.0, 0.0])).unwrap();
    assert!((folded - v(&[0.0, 1.2])).amax() < 1e-15);
}

#[test]
fn identity_pullback_is_exact() {
    let mut rng = rng(2);
    for n in 1..6 {
        let child = random_rmp(&mut rng, n);
        let map = IdentityMap { dim: n };
        let x = uniform_vec(&mut rng, n, -1.0, 1.0);
        let xdot = uniform_vec(&mut rng, n, -1.0, 1.0);
        let back = pullback(&map, &child, &x, &xdot).unwrap();
        assert!((&back.f - &child.f).amax() <= 1e-10);
        assert!((&back.m - &child.m).amax() <= 1e-10);
    }
}

#[test]
fn linear_pullback_matches_its_definition() {
    let mut rng = rng(3);
    let a = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
    let map = LinearMap {
        a: a.clone(),
        b: v(&[0.3, -0.1]),
    };
    let child = random_rmp(&mut rng, 2);
    let x = uniform_vec(&mut rng, 4, -1.0, 1.0);
    let back = pullback(&map, &child, &x, &DVector::zeros(4)).unwrap();
    assert!(rel_err(&back.f, &(a.transpose() * &child.f)) < 1e-14);
    assert!(rel_err_mat(&back.m, &(a.transpose() * &child.m * &a)) < 1e-14);
    let (xc, xdotc) = pushforward(&map, &x, &DVector::zeros(4)).unwrap();
    assert!(rel_err(&xc, &(&a * &x + v(&[0.3, -0.1]))) < 1e-15);
    assert_eq!(xdotc, DVector::zeros(2));
}

#[test]
fn resolve_handles_full_and_deficient_rank() {
    let mut rng = rng(4);
    for n in 1..7 {
        for rank in 0..=n {
            let m = random_psd(&mut rng, n, rank);
            let f = uniform_vec(&mut rng, n, -3.0, 3.0);
            let rmp = Rmp::new(f.clone(), m.clone()).unwrap();
            let a = resolve(&rmp).unwrap();
            assert!(rel_err(&a, &svd_solve(&m, &f)) < 1e-8, "n {n} rank {rank}");
        }
    }
}

#[test]
fn resolve_rejects_asymmetric_metrics() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    assert!(resolve(&Rmp::new(v(&[1.0, 1.0]), m).unwrap()).is_err());
}

#[test]
fn gds_with_constant_metric_is_a_damped_spring() {
    let spec = GdsSpec::new(
        Box::new(|_, _| DMatrix::identity(2, 2) * 2.0),
        Box::new(|_, _| DMatrix::identity(2, 2) * 0.5),
        Box::new(|x| x * 3.0),
    );
    let x = v(&[0.2, -0.4]);
    let xdot = v(&[1.0, 0.5]);
    let rmp = gds_to_rmp(&spec, &x, &xdot).unwrap();
    assert!(rel_err_mat(&rmp.m, &(DMatrix::identity(2, 2) * 2.0)) < 1e-12);
    assert!(rel_err(&rmp.f, &(-&x * 3.0 - &xdot * 0.5)) < 1e-12);
}

#[test]
fn residual_tree_equals_flat_assembly() {
    let model = RobotModel::desk_default();
    let config = PolicyConfig::default();
    let mut rng = rng(5);
    for _ in 0..100 {
        let goal = uniform_vec(&mut rng, 2, -1.0, 1.0);
        // Uniform over the whole range puts about a tenth of the joints inside
        // the limit band, so the barrier leaf is exercised too.
        let q = uniform_vec(&mut rng, 3, -2.8, 2.8);
        let qdot = uniform_vec(&mut rng, 3, -2.0, 2.0);
        let action = uniform_vec(&mut rng, 3, -0.8, 0.8);
        let tree = config.build(&model, &goal, TreeLayout::Residual).unwrap();
        let inputs = PolicyInputs { action: Some(&action) };
        let got = tree.evaluate(&q, &qdot, &inputs).unwrap();
        let want = flat_tree_acceleration(&model, &config, &goal, &q, &qdot, &action);
        assert!(rel_err(&got, &want) < 1e-8, "{got} vs {want}");
    }
}

#[test]
fn nested_linear_nodes_compose() {
    // Root → A (3→2) → B (2→2) with a leaf on B equals one leaf through B·A.
    let mut rng = rng(6);
    let a = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
    let leaf = random_rmp(&mut rng, 2);
    let constant = |r: &Rmp| Box::new(rmpr::rmpflow::ConstantLeaf(r.clone()));
    let inner = RmpNode::leaf(
        "b",
        Box::new(LinearMap {
            a: b.clone(),
            b: DVector::zeros(2),
        }),
        constant(&leaf),
    );
    let outer = RmpNode::new(
        "a",
        Box::new(LinearMap {
            a: a.clone(),
            b: DVector::zeros(2),
        }),
    )
    .with_child(inner)
    .unwrap();
    let nested = RmpTree::new(3).with_child(outer).unwrap();
    let flat = RmpTree::new(3)
        .with_child(RmpNode::leaf(
            "ba",
            Box::new(LinearMap {
                a: &b * &a,
                b: DVector::zeros(2),
            }),
            constant(&leaf),
        ))
        .unwrap();
    let q = uniform_vec(&mut rng, 3, -1.0, 1.0);
    let qdot = uniform_vec(&mut rng, 3, -1.0, 1.0);
    let inputs = PolicyInputs::default();
    let r1 = nested.root_rmp(&q, &qdot, &inputs).unwrap();
    let r2 = flat.root_rmp(&q, &qdot, &inputs).unwrap();
    assert!(rel_err(&r1.f, &r2.f) < 1e-12);
    assert!(rel_err_mat(&r1.m, &r2.m) < 1e-12);
}

#[test]
fn leaves_can_be_dropped() {
    let model = RobotModel::desk_default();
    let goal = v(&[0.5, 0.5]);
    let reactive = ReactiveSpec::new(0.01, 0.5).unwrap();
    let tree = build_tree(&model, None, Some(&reactive), Some(&JointLimitSpec::default())).unwrap();
    assert_eq!(tree.children().len(), 2);
    let base = build_tree(&model, Some(&BaselineSpec::new(goal, 2.0).unwrap()), None, None).unwrap();
    assert_eq!(base.children().len(), 1);
    assert!(build_tree(&model, Some(&BaselineSpec::new(v(&[0.0; 3]), 2.0).unwrap()), None, None).is_err());
}

#[test]
fn mismatched_dimensions_are_errors() {
    let map = IdentityMap { dim: 3 };
    assert!(pullback(&map, &Rmp::zeros(2), &DVector::zeros(3), &DVector::zeros(3)).is_err());
    assert!(add(&[Rmp::zeros(2), Rmp::zeros(3)]).is_err());
    assert!(add(&[]).is_err());
    assert!(Rmp::new(DVector::zeros(2), DMatrix::zeros(3, 3)).is_err());
    assert_eq!(map.output_dim(), 3);
}

fn matrix_strategy(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |d| DMatrix::from_vec(n, n, d))
}

proptest! {
    #[test]
    fn pullback_preserves_metric_symmetry_and_psd(
        j in prop::collection::vec(-2.0f64..2.0, 6),
        b in matrix_strategy(2),
        f in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        let a = DMatrix::from_vec(2, 3, j);
        let map = LinearMap { a, b: DVector::zeros(2) };
        let child = Rmp::new(DVector::from_vec(f), &b * b.transpose()).unwrap();
        let back = pullback(&map, &child, &DVector::zeros(3), &DVector::zeros(3)).unwrap();
        prop_assert!(back.asymmetry() < 1e-12);
        prop_assert!(back.min_eigenvalue() > -1e-10);
    }

    #[test]
    fn add_is_commutative_and_associative(
        f1 in prop::collection::vec(-5.0f64..5.0, 3),
        f2 in prop::collection::vec(-5.0f64..5.0, 3),
        f3 in prop::collection::vec(-5.0f64..5.0, 3),
        m1 in matrix_strategy(3),
    ) {
        let r = |f: &Vec<f64>, m: DMatrix<f64>| Rmp::new(DVector::from_vec(f.clone()), m).unwrap();
        let (a, b, c) = (r(&f1, m1.clone()), r(&f2, m1.transpose()), r(&f3, DMatrix::identity(3, 3)));
        let ab_c = add(&[add(&[a.clone(), b.clone()]).unwrap(), c.clone()]).unwrap();
        let a_bc = add(&[a.clone(), add(&[b.clone(), c.clone()]).unwrap()]).unwrap();
        let cba = add(&[c, b, a]).unwrap();
        prop_assert!((&ab_c.f - &a_bc.f).amax() < 1e-12 && (&ab_c.m - &a_bc.m).amax() < 1e-12);
        prop_assert!((&ab_c.f - &cba.f).amax() < 1e-12 && (&ab_c.m - &cba.m).amax() < 1e-12);
    }

    #[test]
    fn resolve_satisfies_the_normal_equations(
        b in prop::collection::vec(-2.0f64..2.0, 8),
        f in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let b = DMatrix::from_vec(4, 2, b);
        let m = &b * b.transpose();
        let f = DVector::from_vec(f);
        let a = resolve(&Rmp::new(f.clone(), m.clone()).unwrap()).unwrap();
        // Least squares: the residual is orthogonal to the range of M.
        let residual = &m * &a - &f;
        prop_assert!((m.transpose() * residual).amax() < 1e-8 * (1.0 + m.norm().powi(2)) * (1.0 + f.norm()));
    }

    #[test]
    fn joint_limit_leaf_is_inactive_mid_range(q in prop::collection::vec(-1.5f64..1.5, 3), qdot in prop::collection::vec(-2.0f64..2.0, 3)) {
        let model = RobotModel::desk_default();
        let rmp = joint_limit_rmp(&JointLimitSpec::default(), &model, &DVector::from_vec(q), &DVector::from_vec(qdot)).unwrap();
        prop_assert_eq!(rmp.f, DVector::zeros(3));
        prop_assert_eq!(rmp.m, DMatrix::zeros(3, 3));
    }

    #[test]
    fn reactive_offset_never_exceeds_the_bound(a in prop::collection::vec(-10.0f64..10.0, 3)) {
        let spec = ReactiveSpec::new(0.01, 0.5).unwrap();
        let rmp = reactive_rmp(&spec, &DVector::zeros(3), &DVector::zeros(3), &DVector::from_vec(a)).unwrap();
        prop_assert!(rmp.f.amax() <= 0.5 + 1e-15);
    }
}
