//! Uniform discrete diffusion on `[K]^D`.
//!
//! The conditional path is the per-token mixture
//! `p_t(x | x1) = prod_l [kappa_t * delta(x1_l) + (1 - kappa_t) / K]`, whose
//! source `p_0` is uniform. Generation runs the two-stage Euler solver:
//! sample a clean prediction from the model, then let each disagreeing
//! token jump to it with probability `dt * kappa_dot / (1 - kappa)`.
//!
//! The exact schedule and velocity of the large pretrained models this
//! mirrors are not public; the mixture path is the standard stand-in.

pub mod field;
pub mod grid;
pub mod schedule;
pub mod space;

use std::sync::Arc;

use rand::Rng;

pub use field::{sequence_log_prob, CategoricalField};
pub use grid::TimeGrid;
pub use schedule::NoiseSchedule;
pub use space::{SpaceSpec, TokenSequence};

use crate::error::{Error, Result};

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

/// A state space paired with a noise schedule.
#[derive(Debug, Clone)]
pub struct UniformDiffusion {
    pub space: SpaceSpec,
    pub schedule: Arc<dyn NoiseSchedule>,
}

impl UniformDiffusion {
    pub fn new(space: SpaceSpec, schedule: Arc<dyn NoiseSchedule>) -> Self {
        Self { space, schedule }
    }

    /// Draw from the uniform source distribution.
    pub fn sample_source<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenSequence {
        TokenSequence::new(
            (0..self.space.seq_len)
                .map(|_| rng.gen_range(0..self.space.vocab_size))
                .collect(),
        )
    }

    /// Sample `x_t ~ p_t(. | x1)`: each position keeps its clean token with
    /// probability `kappa(t)` and is otherwise redrawn uniformly from `[K]`.
    pub fn forward_corrupt<R: Rng + ?Sized>(
        &self,
        x1: &TokenSequence,
        t: f64,
        rng: &mut R,
    ) -> Result<TokenSequence> {
        check_time(t)?;
        self.space.check(x1)?;
        let kappa = self.schedule.kappa(t);
        let k = self.space.vocab_size;
        let tokens = x1
            .iter()
            .map(|&tok| {
                if rng.gen::<f64>() < kappa {
                    tok
                } else {
                    rng.gen_range(0..k)
                }
            })
            .collect();
        Ok(TokenSequence::new(tokens))
    }

    /// Per-token factor of the conditional path:
    /// `kappa(t) * [x == x1] + (1 - kappa(t)) / K`.
    pub fn forward_marginal_prob(&self, x1_tok: usize, x_tok: usize, t: f64) -> Result<f64> {
        check_time(t)?;
        let k = self.space.vocab_size;
        if x1_tok >= k || x_tok >= k {
            return Err(Error::Domain(format!(
                "token ids ({x1_tok}, {x_tok}) outside vocabulary of size {k}"
            )));
        }
        let kappa = self.schedule.kappa(t);
        let hit = if x1_tok == x_tok { kappa } else { 0.0 };
        Ok(hit + (1.0 - kappa) / k as f64)
    }

    /// Probability that a disagreeing token jumps to its prediction over
    /// `[t, t + dt]`: `clamp(dt * kappa_dot(t) / (1 - kappa(t)), 0, 1)`.
    pub fn jump_probability(&self, t: f64, dt: f64) -> Result<f64> {
        jump_probability(self.schedule.as_ref(), t, dt)
    }

    /// One step of the rule-based Euler update toward `x1_pred`.
    pub fn euler_step<R: Rng + ?Sized>(
        &self,
        x_t: &TokenSequence,
        x1_pred: &TokenSequence,
        t: f64,
        dt: f64,
        rng: &mut R,
    ) -> Result<TokenSequence> {
        let lambda = self.jump_probability(t, dt)?;
        euler_step(x_t, x1_pred, lambda, rng)
    }
}

pub fn jump_probability(schedule: &dyn NoiseSchedule, t: f64, dt: f64) -> Result<f64> {
    if t >= 1.0 {
        return Err(Error::Domain(format!(
            "jump probability is degenerate at t = {t}"
        )));
    }
    check_time(t)?;
    if !(dt >= 0.0) || t + dt > 1.0 + 1e-12 {
        return Err(Error::Domain(format!("invalid step dt = {dt} at t = {t}")));
    }
    if dt == 0.0 {
        return Ok(0.0);
    }
    let remaining = 1.0 - schedule.kappa(t);
    if remaining <= 0.0 {
        return Ok(1.0);
    }
    Ok((dt * schedule.kappa_dot(t) / remaining).clamp(0.0, 1.0))
}

/// Jump each position where `x_t` and `x1_pred` disagree to the predicted
/// token with probability `lambda`. Agreeing positions never move, and
/// one uniform is consumed per disagreeing position.
pub fn euler_step<R: Rng + ?Sized>(
    x_t: &TokenSequence,
    x1_pred: &TokenSequence,
    lambda: f64,
    rng: &mut R,
) -> Result<TokenSequence> {
    if x_t.len() != x1_pred.len() {
        return Err(Error::Shape(format!(
            "state length {} != prediction length {}",
            x_t.len(),
            x1_pred.len()
        )));
    }
    let tokens = x_t
        .iter()
        .zip(x1_pred.iter())
        .map(|(&cur, &pred)| {
            if cur != pred && rng.gen::<f64>() < lambda {
                pred
            } else {
                cur
            }
        })
        .collect();
    Ok(TokenSequence::new(tokens))
}
