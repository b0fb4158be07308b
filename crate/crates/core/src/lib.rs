//! Vision-based reactive obstacle avoidance for serial manipulators.
//!
//! A hand-written goal attractor and a learned joint-space residual are
//! combined through an RMP tree. The residual is trained with TD3 on a state
//! that includes the latent code of a β-VAE trained on rendered images.

pub mod error;
pub mod harness;
pub mod kinematics;
pub mod nn;
pub mod policies;
pub mod rl;
pub mod rmpflow;
pub mod vae;
pub mod world;

pub use error::{Error, Result};
