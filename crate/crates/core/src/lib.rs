//! Uniform discrete diffusion with group-relative policy optimization.
//!
//! The crate trains a small token denoiser on synthetic prompt-conditioned
//! tasks, samples from it with the two-stage Euler solver, and fine-tunes
//! it with GRPO under several interchangeable state and action
//! constructions: reverse-process states or states rebuilt by forward
//! corruption of the final sample, intermediate predictions or the final
//! clean sample as the action, and all or a reduced set of timesteps.

pub mod analysis;
pub mod diffusion;
pub mod error;
pub mod grpo;
pub mod harness;
pub mod model;
pub mod pretrain;
pub mod registry;
pub mod rewards;
pub mod rng;
pub mod rollout;
pub mod tasks;

pub use error::{Error, Result};
