mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rmpr::kinematics::RobotModel;
use rmpr::nn::{Layer, Sequential};
use rmpr::policies::{joint_limit_rmp, PolicyConfig, TreeLayout};
use rmpr::rl::{bootstrap_target, rollout, LatentSource, ReplayBuffer, SumTree, Td3Agent, Td3Config, TrainSetup, Transition};
use rmpr::world::{sample_scene, Scene, WorldConfig};

fn transition(i: usize) -> Transition {
    Transition {
        state: vec![i as f64],
        action: vec![0.0],
        reward: i as f64,
        next_state: vec![i as f64 + 1.0],
        done: false,
    }
}

#[test]
fn proportional_probabilities() {
    let mut buffer = ReplayBuffer::new(8, 1.0, 1e-3).unwrap();
    buffer.push(transition(0));
    buffer.push(transition(1));
    buffer.set_priority(0, 1.0);
    buffer.set_priority(1, 3.0);
    assert!((buffer.probability(0) - 0.25).abs() < 1e-15);
    assert!((buffer.probability(1) - 0.75).abs() < 1e-15);

    // With α = 0.5 the priorities 1 and 4 sample as 1 : 2.
    let mut buffer = ReplayBuffer::new(8, 0.5, 1e-3).unwrap();
    buffer.push(transition(0));
    buffer.push(transition(1));
    buffer.set_priority(0, 1.0);
    buffer.set_priority(1, 4.0);
    assert!((buffer.probability(1) - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn sampling_frequencies_pass_chi_square() {
    let priorities = [0.5, 1.0, 2.0, 4.0, 0.25];
    let alpha = 0.6;
    let mut buffer = ReplayBuffer::new(16, alpha, 1e-3).unwrap();
    for (i, &p) in priorities.iter().enumerate() {
        buffer.push(transition(i));
        buffer.set_priority(i, p);
    }
    let weights: Vec<f64> = priorities.iter().map(|p: &f64| p.powf(alpha)).collect();
    let total: f64 = weights.iter().sum();
    let mut counts = [0usize; 5];
    let mut rng = rng(30);
    let draws = 100_000;
    for _ in 0..draws / 20 {
        for i in buffer.sample(20, 0.4, &mut rng).unwrap().indices {
            counts[i] += 1;
        }
    }
    let chi2: f64 = counts
        .iter()
        .zip(&weights)
        .map(|(&c, w)| {
            let expected = draws as f64 * w / total;
            (c as f64 - expected).powi(2) / expected
        })
        .sum();
    // Four degrees of freedom, 0.1% critical value.
    assert!(chi2 < 18.47, "chi-square {chi2}, counts {counts:?}");
}

#[test]
fn importance_weights_follow_their_formula() {
    let mut buffer = ReplayBuffer::new(4, 1.0, 1e-3).unwrap();
    for i in 0..4 {
        buffer.push(transition(i));
        buffer.set_priority(i, (i + 1) as f64);
    }
    let beta = 0.7;
    let batch = buffer.sample(32, beta, &mut rng(31)).unwrap();
    let raw = |i: usize| (4.0 * (i + 1) as f64 / 10.0).powf(-beta);
    let max = batch.indices.iter().map(|&i| raw(i)).fold(0.0, f64::max);
    for (&i, &w) in batch.indices.iter().zip(&batch.weights) {
        assert!((w - raw(i) / max).abs() < 1e-12);
    }
    assert!(batch.weights.contains(&1.0));
}

#[test]
fn sum_tree_matches_a_naive_array() {
    let n = 37;
    let mut tree = SumTree::new(n);
    let mut naive = vec![0.0; n];
    let mut rng = rng(32);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        if rng.random_bool(0.6) {
            let i = rng.random_range(0..n);
            let v = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..10.0) };
            tree.set(i, v);
            naive[i] = v;
        } else {
            let total: f64 = naive.iter().sum();
            worst = worst.max((tree.total() - total).abs());
            if total > 0.0 {
                let mass = rng.random_range(0.0..total);
                let mut acc = 0.0;
                let mut want = n - 1;
                for (i, &p) in naive.iter().enumerate() {
                    if p > 0.0 && mass < acc + p {
                        want = i;
                        break;
                    }
                    acc += p;
                }
                let got = tree.find(mass);
                // Ties at a boundary may resolve to either neighbour.
                if got != want {
                    let edge: f64 = naive[..want.max(got)].iter().sum();
                    assert!((edge - mass).abs() < 1e-6, "mass {mass}: tree {got}, naive {want}");
                }
                assert!(naive[got] > 0.0);
            }
        }
        for i in 0..n {
            worst = worst.max((tree.get(i) - naive[i]).abs());
        }
    }
    assert!(worst < 1e-6);
}

#[test]
fn ring_buffer_evicts_the_oldest() {
    let mut buffer = ReplayBuffer::new(3, 0.6, 1e-3).unwrap();
    let slots: Vec<usize> = (0..4).map(|i| buffer.push(transition(i))).collect();
    assert_eq!(slots, vec![0, 1, 2, 0]);
    assert_eq!(buffer.len(), 3);
    assert_eq!(buffer.get(0).reward, 3.0);
    assert_eq!(buffer.get(1).reward, 1.0);
}

#[test]
fn priorities_have_a_floor() {
    let mut buffer = ReplayBuffer::new(4, 0.6, 1e-3).unwrap();
    buffer.push(transition(0));
    buffer.push(transition(1));
    buffer.update_priorities(&[0, 1], &[0.0, -2.0]);
    assert_eq!(buffer.priority(0), 1e-3);
    assert!((buffer.priority(1) - 2.001).abs() < 1e-15);
    assert!(buffer.probability(0) > 0.0);
    // New transitions enter at the largest priority seen so far.
    buffer.push(transition(2));
    assert_eq!(buffer.priority(2), buffer.priority(1));
}

#[test]
fn target_networks_contract_geometrically() {
    let mut rng = rng(33);
    let online = Sequential::new(vec![Layer::dense(4, 8, &mut rng), Layer::relu(), Layer::dense(8, 2, &mut rng)]);
    let mut target = Sequential::new(vec![Layer::dense(4, 8, &mut rng), Layer::relu(), Layer::dense(8, 2, &mut rng)]);
    let distance = |a: &Sequential, b: &Sequential| {
        a.params()
            .iter()
            .zip(b.params())
            .flat_map(|((_, p), (_, q))| p.value.data().iter().zip(q.value.data()).map(|(x, y)| (x - y).powi(2)).collect::<Vec<_>>())
            .sum::<f64>()
            .sqrt()
    };
    let d0 = distance(&target, &online);
    let tau = 0.005;
    for n in 1..=200 {
        target.soft_update_from(&online, tau).unwrap();
        let want = (1.0 - tau).powi(n) * d0;
        assert!((distance(&target, &online) - want).abs() < 1e-10);
    }
}

#[test]
fn bootstrap_targets() {
    assert_eq!(bootstrap_target(1.0, false, 0.99, 2.0, 3.0), 1.0 + 0.99 * 2.0);
    assert_eq!(bootstrap_target(1.0, true, 0.99, 2.0, 3.0), 1.0);
    assert_eq!(bootstrap_target(-0.5, false, 0.5, -4.0, 1.0), -0.5 - 2.0);
}

#[test]
fn critic_gradients_pass_finite_differences() {
    let mut rng = rng(34);
    let config = Td3Config {
        actor_hidden: vec![8],
        critic_hidden: vec![12, 12],
        ..Default::default()
    };
    let agent = Td3Agent::new(5, 2, 0.5, config, &mut rng).unwrap();
    let batch: Vec<Transition> = (0..6)
        .map(|_| Transition {
            state: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: (0..2).map(|_| rng.random_range(-0.5..0.5)).collect(),
            reward: rng.random_range(-1.0..1.0),
            next_state: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            done: false,
        })
        .collect();
    let targets: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let weights: Vec<f64> = (0..6).map(|_| rng.random_range(0.2..1.0)).collect();
    let report = agent.critic_gradcheck(&batch, &targets, &weights, &mut rng).unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn untrained_actor_outputs_zero() {
    let mut rng = rng(35);
    let agent = Td3Agent::new(13, 3, 0.5, Td3Config::default(), &mut rng).unwrap();
    for _ in 0..10 {
        let s: Vec<f64> = (0..13).map(|_| rng.random_range(-2.0..2.0)).collect();
        assert_eq!(agent.policy_action(&s).unwrap(), vec![0.0; 3]);
    }
}

fn setup(world: WorldConfig) -> TrainSetup {
    TrainSetup {
        model: RobotModel::desk_default(),
        world,
        policy: PolicyConfig::default(),
        layout: TreeLayout::Residual,
        td3: Td3Config::default(),
        episodes: 1,
        hold_steps: 100,
    }
}

/// Baseline attractor, identity-metric damping and joint limits, written
/// out directly and integrated with the same semi-implicit Euler scheme.
fn reference_rollout(setup: &TrainSetup, scene: &Scene, steps: usize) -> Vec<DVector<f64>> {
    let model = &setup.model;
    let lengths = model.link_lengths();
    let (wb, wr) = (setup.policy.baseline_damping, setup.policy.reactive_damping);
    let (dt, vmax) = (setup.world.dt, setup.world.max_joint_speed);
    let mut q = scene.start.clone();
    let mut qdot = DVector::zeros(3);
    let mut out = Vec::new();
    for _ in 0..steps {
        let j = jacobian(lengths, &q);
        let x = end_effector(lengths, &q);
        let xdot = &j * &qdot;
        let limits = joint_limit_rmp(&setup.policy.limits, model, &q, &qdot).unwrap();
        let task_f = -(&x - &scene.goal) - &xdot * wb - jacobian_dot_qdot(lengths, &q, &qdot);
        let f = j.transpose() * task_f - &qdot * wr + &limits.f;
        let m = j.transpose() * &j + DMatrix::identity(3, 3) + &limits.m;
        let qddot = svd_solve(&m, &f);
        qdot = (&qdot + qddot * dt).map(|v| v.clamp(-vmax, vmax));
        let next = &q + &qdot * dt;
        for i in 0..3 {
            let (lo, hi) = model.joint_limits()[i];
            if next[i] < lo || next[i] > hi {
                qdot[i] = 0.0;
            }
        }
        q = model.clamp_to_limits(&next).unwrap();
        out.push(q.clone());
    }
    out
}

#[test]
fn zero_residual_rollout_matches_the_reference_dynamics() {
    let setup = setup(WorldConfig {
        render: false,
        terminate_on_collision: false,
        max_steps: 150,
        ..Default::default()
    });
    let latent = LatentSource::SceneFeatures { slots: 1 };
    let mut rng = rng(36);
    for _ in 0..5 {
        let scene = sample_scene(&mut rng, &setup.model, &setup.world.scene).unwrap();
        let trace = rollout(&setup, None, &latent, scene.clone()).unwrap();
        let want = reference_rollout(&setup, &scene, trace.len());
        for (row, q) in trace.rows.iter().zip(&want) {
            let got = DVector::from_column_slice(&row.q);
            assert!((got - q).amax() < 1e-8, "step {}", row.step);
        }
    }
}

#[test]
fn untrained_agent_rolls_out_like_the_baseline() {
    let setup = setup(WorldConfig {
        render: false,
        max_steps: 60,
        ..Default::default()
    });
    let latent = LatentSource::SceneFeatures { slots: 1 };
    let mut rng = rng(37);
    let agent = Td3Agent::new(13, 3, 0.5, Td3Config::default(), &mut rng).unwrap();
    let scene = sample_scene(&mut rng, &setup.model, &setup.world.scene).unwrap();
    let with_agent = rollout(&setup, Some(&agent), &latent, scene.clone()).unwrap();
    let without = rollout(&setup, None, &latent, scene).unwrap();
    assert_eq!(with_agent, without);
}

proptest! {
    #[test]
    fn every_stored_transition_can_be_drawn(ps in prop::collection::vec(0.0f64..5.0, 1..20)) {
        let mut buffer = ReplayBuffer::new(32, 0.6, 1e-3).unwrap();
        for (i, &p) in ps.iter().enumerate() {
            buffer.push(transition(i));
            buffer.set_priority(i, p);
        }
        let total: f64 = (0..ps.len()).map(|i| buffer.probability(i)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for i in 0..ps.len() {
            prop_assert!(buffer.priority(i) >= 1e-3);
            prop_assert!(buffer.probability(i) > 0.0);
        }
    }
}
