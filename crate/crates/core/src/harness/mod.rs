//! Experiment orchestration: configuration, metrics, experiment protocols,
//! plots and verification runners behind the `rmpr` command line.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod oracle;
pub mod plot;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{ExperimentConfig, LatentKind, Variant};
pub use experiments::{run_experiment_a, run_experiment_b, run_experiment_c};

use crate::error::Result;
use crate::nn::gradcheck::{layer_suite, GradcheckReport};
use crate::rl::{Td3Agent, Td3Config, Transition};

/// Critic loss check on a small random agent and batch.
pub fn critic_gradcheck(seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = Td3Config {
        actor_hidden: vec![8],
        critic_hidden: vec![12, 12],
        ..Default::default()
    };
    let agent = Td3Agent::new(5, 2, 0.5, config, &mut rng)?;
    let batch: Vec<Transition> = (0..6)
        .map(|_| Transition {
            state: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: (0..2).map(|_| rng.random_range(-0.5..0.5)).collect(),
            reward: rng.random_range(-1.0..1.0),
            next_state: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            done: false,
        })
        .collect();
    let targets: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
    let weights: Vec<f64> = (0..6).map(|_| rng.random_range(0.2..1.0)).collect();
    agent.critic_gradcheck(&batch, &targets, &weights, &mut rng)
}

/// Every layer, the VAE objective at several KL weights and the critic loss.
pub fn gradcheck_all(seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut reports = layer_suite(seed)?;
    for beta in [0.0, 1.0, 4.0] {
        reports.push(crate::vae::gradcheck(seed, beta)?);
    }
    reports.push(critic_gradcheck(seed)?);
    Ok(reports)
}
