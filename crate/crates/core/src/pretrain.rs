//! Supervised cross-entropy pretraining with condition dropout.

use rand::Rng;

use crate::diffusion::UniformDiffusion;
use crate::error::{Error, Result};
use crate::model::{
    adamw_step, evaluate_loss, AdamState, AdamWConfig, DenoiserInput, LossItem, LossSpec, ModelParams,
};
use crate::tasks::SyntheticTask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub batch_size: usize,
    /// Probability of replacing the prompt with the null prompt.
    pub cond_drop_p: f64,
    pub optim: AdamWConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            cond_drop_p: 0.1,
            optim: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// Batch-mean cross-entropy, summed over positions.
    pub loss: f64,
    pub grad_norm: f64,
}

/// Draw `(c, x1, t, x_t)` items; the prompt is dropped with probability
/// `cond_drop_p`.
pub fn build_batch<R: Rng + ?Sized>(
    task: &SyntheticTask,
    diffusion: &UniformDiffusion,
    batch_size: usize,
    cond_drop_p: f64,
    rng: &mut R,
) -> Result<Vec<LossItem>> {
    task.validate()?;
    if !(0.0..=1.0).contains(&cond_drop_p) {
        return Err(Error::Config(format!("cond_drop_p {cond_drop_p} outside [0, 1]")));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let w = 1.0 / batch_size as f64;
    (0..batch_size)
        .map(|_| {
            let c = task.sample_prompt(rng);
            let x1 = task.sample_clean(c, rng);
            let t: f64 = rng.gen();
            let xt = diffusion.forward_corrupt(&x1, t, rng)?;
            let cond = if rng.gen::<f64>() < cond_drop_p { None } else { Some(c) };
            Ok(LossItem::cross_entropy(DenoiserInput::new(xt, t, cond), x1, w))
        })
        .collect()
}

/// Parameters plus optimizer state for the pretraining loop.
#[derive(Debug, Clone)]
pub struct Pretrainer {
    pub params: ModelParams,
    pub state: AdamState,
    pub config: PretrainConfig,
}

impl Pretrainer {
    pub fn new(params: ModelParams, config: PretrainConfig) -> Self {
        let state = AdamState::new(params.len());
        Self {
            params,
            state,
            config,
        }
    }

    /// One cross-entropy step on a fresh batch.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        task: &SyntheticTask,
        diffusion: &UniformDiffusion,
        rng: &mut R,
    ) -> Result<StepOutput> {
        let batch = build_batch(task, diffusion, self.config.batch_size, self.config.cond_drop_p, rng)?;
        let out = evaluate_loss(&self.params, &batch, &LossSpec::CrossEntropy)?;
        let grad_norm = out.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        adamw_step(&mut self.params, &out.grad, &mut self.state, &self.config.optim)?;
        Ok(StepOutput {
            loss: out.loss,
            grad_norm,
        })
    }
}

/// Monte-Carlo estimate of the pretraining cross-entropy on fresh
/// conditional samples (no prompt dropout).
pub fn evaluate_ce<R: Rng + ?Sized>(
    params: &ModelParams,
    task: &SyntheticTask,
    diffusion: &UniformDiffusion,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    let batch = build_batch(task, diffusion, n_samples, 0.0, rng)?;
    Ok(evaluate_loss(params, &batch, &LossSpec::CrossEntropy)?.loss)
}
