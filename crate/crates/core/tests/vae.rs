mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use rmpr::kinematics::RobotModel;
use rmpr::nn::Tensor;
use rmpr::policies::PolicyConfig;
use rmpr::vae::{
    beta_schedule, brownian_increment, collect_brownian, kl_to_standard_normal, train_vae, CollectConfig, ImageDataset,
    VaeConfig, VaeModel,
};
use rmpr::world::{Image, WorldConfig};

/// Plain Monte-Carlo estimate of `E_q[log q(z) − log p(z)]`.
fn kl_monte_carlo(mu: &[f64], log_sigma: &[f64], samples: usize, rng: &mut impl Rng) -> f64 {
    let mut total = 0.0;
    for _ in 0..samples {
        let mut log_ratio = 0.0;
        for (m, ls) in mu.iter().zip(log_sigma) {
            let eps: f64 = rng.sample(StandardNormal);
            let z = m + ls.exp() * eps;
            // log N(z; m, σ²) − log N(z; 0, 1); the 2π terms cancel.
            log_ratio += -ls - 0.5 * eps * eps + 0.5 * z * z;
        }
        total += log_ratio;
    }
    total / samples as f64
}

#[test]
fn kl_closed_form_agrees_with_monte_carlo() {
    let mut rng = rng(20);
    for _ in 0..5 {
        let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ls: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
        let exact = kl_to_standard_normal(&mu, &ls);
        let mc = kl_monte_carlo(&mu, &ls, 400_000, &mut rng);
        assert!((mc - exact).abs() / exact < 0.01, "mc {mc} exact {exact}");
    }
}

#[test]
fn kl_examples() {
    assert_eq!(kl_to_standard_normal(&[0.0; 5], &[0.0; 5]), 0.0);
    assert_eq!(kl_to_standard_normal(&[2.0], &[0.0]), 2.0);
    // σ = e: ½(e² − 1 − 2).
    let e = 1f64.exp();
    assert!((kl_to_standard_normal(&[0.0], &[1.0]) - 0.5 * (e * e - 3.0)).abs() < 1e-15);
}

fn small_batch(rng: &mut impl Rng, n: usize, res: usize) -> Tensor {
    Tensor::from_fn(&[n, 3, res, res], |_| rng.random_range(0.0..1.0))
}

#[test]
fn beta_scales_only_the_kl_term() {
    let mut rng = rng(21);
    let mut model = VaeModel::new(16, 4, 1.0, &mut rng).unwrap();
    let x = small_batch(&mut rng, 4, 16);
    let eps = model.sample_noise(4, &mut rng);
    let one = model.loss_with_noise(&x, &eps, 1.0, false).unwrap();
    assert_eq!(one.loss, one.recon + one.kl);
    let zero = model.loss_with_noise(&x, &eps, 0.0, false).unwrap();
    let four = model.loss_with_noise(&x, &eps, 4.0, false).unwrap();
    assert_eq!(zero.loss, zero.recon);
    assert_eq!((zero.recon, zero.kl), (one.recon, one.kl));
    assert!((four.loss - (one.recon + 4.0 * one.kl)).abs() < 1e-12);
    assert!(one.kl >= 0.0);
}

#[test]
fn beta_warm_up_is_linear_then_flat() {
    let values: Vec<f64> = (0..6).map(|s| beta_schedule(s, 4, 2.0)).collect();
    assert_eq!(values, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.0]);
    assert_eq!(beta_schedule(0, 0, 3.0), 3.0);
}

#[test]
fn brownian_increments_have_variance_sigma_squared_dt() {
    let mut rng = rng(22);
    let (sigma, dt, n) = (0.8, 0.05, 100_000);
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..n {
        let eta = brownian_increment(&mut rng, 3, sigma, dt);
        for i in 0..3 {
            sum[i] += eta[i];
            sq[i] += eta[i] * eta[i];
        }
    }
    let want = sigma * sigma * dt;
    for i in 0..3 {
        let mean = sum[i] / n as f64;
        let var = sq[i] / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 * (want / n as f64).sqrt());
        assert!((var / want - 1.0).abs() < 0.02, "var {var} want {want}");
    }
    assert_eq!(brownian_increment(&mut rng, 2, 0.0, dt), nalgebra::DVector::zeros(2));
}

#[test]
fn mean_image_baseline_by_hand() {
    let mut ds = ImageDataset::new(3, 1, 1);
    for v in [[0.0, 0.5, 1.0], [1.0, 0.5, 0.0]] {
        ds.push(&Image {
            channels: 3,
            height: 1,
            width: 1,
            data: v.to_vec(),
        })
        .unwrap();
    }
    assert_eq!(ds.mean_image(), vec![0.5, 0.5, 0.5]);
    // Errors ±0.5, 0, ±0.5 per image: mean of squares is 1/6.
    assert!((ds.mean_image_mse() - 1.0 / 6.0).abs() < 1e-15);
    assert!(ds
        .push(&Image {
            channels: 3,
            height: 2,
            width: 1,
            data: vec![0.0; 6],
        })
        .is_err());
}

#[test]
fn collection_and_dataset_round_trip() {
    let mut rng = rng(23);
    let world = WorldConfig {
        resolution: 16,
        ..Default::default()
    };
    let config = CollectConfig {
        episodes: 2,
        episode_len: 5,
        sigma: 1.0,
    };
    let ds = collect_brownian(&mut rng, &RobotModel::desk_default(), &world, &PolicyConfig::default(), &config).unwrap();
    assert_eq!(ds.len(), 10);
    assert_eq!((ds.channels, ds.height, ds.width), (3, 16, 16));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.ckpt");
    ds.save(&path).unwrap();
    let back = ImageDataset::load(&path).unwrap();
    assert_eq!(back.len(), ds.len());
    assert_eq!(back.image(7), ds.image(7));
}

#[test]
fn short_training_lowers_the_loss_and_checkpoints_reload() {
    let mut rng = rng(24);
    let world = WorldConfig {
        resolution: 16,
        ..Default::default()
    };
    let collect = CollectConfig {
        episodes: 4,
        episode_len: 24,
        sigma: 1.0,
    };
    let ds = collect_brownian(&mut rng, &RobotModel::desk_default(), &world, &PolicyConfig::default(), &collect).unwrap();
    let config = VaeConfig {
        latent_dim: 4,
        batch_size: 16,
        epochs: 6,
        beta_max: 1.0,
        ..Default::default()
    };
    let mut model = VaeModel::new(16, 4, config.recon_weight, &mut rng).unwrap();
    let curve = train_vae(&mut model, &ds, &config, &mut rng).unwrap();
    assert_eq!(curve.len(), 6 * 6);
    let head: f64 = curve[..6].iter().map(|r| r.loss.recon).sum();
    let tail: f64 = curve[curve.len() - 6..].iter().map(|r| r.loss.recon).sum();
    assert!(tail < head, "recon {head} -> {tail}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vae.ckpt");
    model.save(&path).unwrap();
    let back = VaeModel::load(&path, &mut rng).unwrap();
    let x = ds.batch(&[0, 1, 2]);
    let (a, b) = (model.encode(&x).unwrap(), back.encode(&x).unwrap());
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() < 1e-4));
    // Posterior means are deterministic and squashed into (−1, 1).
    assert_eq!(model.encode(&x).unwrap(), a);
    assert!(a.data().iter().all(|v| v.abs() < 1.0));
}

proptest! {
    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-3.0f64..3.0, 1..6), seed in 0u64..1000) {
        let mut rng = rng(seed);
        let ls: Vec<f64> = mu.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        prop_assert!(kl_to_standard_normal(&mu, &ls) >= 0.0);
    }
}
