//! Which solver steps a rollout contributes to the policy loss.

use std::fmt::Debug;

use rand::RngCore;

use crate::error::{Error, Result};

/// Length of a reduced-step window.
pub const WINDOW: usize = 3;

pub trait TimestepSelector: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    /// Step indices in `[0, num_steps)`, in increasing order.
    fn select(&self, num_steps: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>>;
}

/// Every step of the grid.
#[derive(Debug, Clone, Copy, Default)]
pub struct AllSteps;

/// Three consecutive steps inside the high-noise first half,
/// indices `[0, ceil(T/2))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReducedEarly;

/// Three consecutive steps anywhere in `[0, T)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReducedRandom;

fn window(start_count: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    let start = (rng.next_u64() % start_count as u64) as usize;
    (start..start + WINDOW).collect()
}

fn check_reduced(name: &str, num_steps: usize) -> Result<()> {
    if num_steps < 6 {
        return Err(Error::Config(format!(
            "timestep mode '{name}' needs at least 6 solver steps, grid has {num_steps}"
        )));
    }
    Ok(())
}

impl TimestepSelector for AllSteps {
    fn name(&self) -> &'static str {
        "all"
    }
    fn select(&self, num_steps: usize, _rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        if num_steps == 0 {
            return Err(Error::Config("grid has no steps".into()));
        }
        Ok((0..num_steps).collect())
    }
}

impl TimestepSelector for ReducedEarly {
    fn name(&self) -> &'static str {
        "reduced_early"
    }
    fn select(&self, num_steps: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        check_reduced(self.name(), num_steps)?;
        let half = num_steps.div_ceil(2);
        Ok(window(half - WINDOW + 1, rng))
    }
}

impl TimestepSelector for ReducedRandom {
    fn name(&self) -> &'static str {
        "reduced_random"
    }
    fn select(&self, num_steps: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        check_reduced(self.name(), num_steps)?;
        Ok(window(num_steps - WINDOW + 1, rng))
    }
}
