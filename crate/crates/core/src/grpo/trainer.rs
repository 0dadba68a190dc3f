//! The outer policy-gradient loop: sample groups from the behaviour policy,
//! score them, update.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::config::TrainConfig;
use super::objective::mean_std;
use super::update::{grpo_update, GroupBatch, PolicyState};
use crate::diffusion::{TimeGrid, UniformDiffusion};
use crate::error::Result;
use crate::model::ModelParams;
use crate::rewards::{reward, RewardFn};
use crate::rng::{derive, domain};
use crate::rollout::{sample_rollout, CfgSpec};
use crate::tasks::SyntheticTask;

/// Column order of the per-update metrics file.
pub const METRICS_COLUMNS: [&str; 9] = [
    "step",
    "reward_mean",
    "reward_std",
    "kl",
    "clip_frac",
    "ratio_mean",
    "loss",
    "grad_norm",
    "wallclock_ms",
];

/// Path component that separates the update stream from group streams.
const UPDATE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlMetrics {
    pub step: u64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub kl: f64,
    pub clip_frac: f64,
    pub ratio_mean: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wallclock_ms: f64,
}

impl RlMetrics {
    pub fn values(&self) -> [f64; 9] {
        [
            self.step as f64,
            self.reward_mean,
            self.reward_std,
            self.kl,
            self.clip_frac,
            self.ratio_mean,
            self.loss,
            self.grad_norm,
            self.wallclock_ms,
        ]
    }
}

/// Everything fixed for the duration of a run.
#[derive(Debug, Clone)]
pub struct RlRun {
    pub task: SyntheticTask,
    pub diffusion: UniformDiffusion,
    pub reward: Arc<dyn RewardFn>,
    pub grid: TimeGrid,
    pub config: TrainConfig,
    pub seed: u64,
}

impl RlRun {
    /// Groups for update `update`, sampled from `params_old`. Every
    /// rollout has its own stream, so the result does not depend on how
    /// the work is split across threads.
    pub fn sample_groups(&self, params_old: &ModelParams, update: u64) -> Result<Vec<GroupBatch>> {
        let g = self.config.group_size;
        let prompts: Vec<usize> = (0..self.config.groups_per_batch)
            .map(|k| {
                self.task
                    .sample_prompt(&mut derive(self.seed, &[domain::RL, update, k as u64]))
            })
            .collect();
        let jobs: Vec<(usize, usize)> = (0..prompts.len())
            .flat_map(|k| (0..g).map(move |i| (k, i)))
            .collect();
        let scored = jobs
            .par_iter()
            .map(|&(k, i)| {
                let mut rng = derive(self.seed, &[domain::RL, update, k as u64, 1 + i as u64]);
                let rec = sample_rollout(
                    params_old,
                    &self.diffusion,
                    prompts[k],
                    &self.grid,
                    &self.config.cfg,
                    &mut rng,
                )?;
                let r = reward(self.reward.as_ref(), &self.task, &rec.clean, prompts[k])?;
                Ok((rec, r))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut scored = scored.into_iter();
        prompts
            .iter()
            .map(|&c| {
                let (recs, rs): (Vec<_>, Vec<_>) = scored.by_ref().take(g).unzip();
                GroupBatch::new(c, recs, &rs)
            })
            .collect()
    }

    /// Sample, score and update once. `update` is the zero-based index.
    pub fn step(&self, state: &mut PolicyState, update: u64) -> Result<RlMetrics> {
        let start = Instant::now();
        let batch = self.sample_groups(&state.params_old, update)?;
        let rewards: Vec<f64> = batch.iter().flat_map(|b| b.rewards()).collect();
        let (reward_mean, reward_std) = mean_std(&rewards);
        let mut rng = derive(self.seed, &[domain::RL, update, UPDATE_STREAM]);
        let m = grpo_update(state, &batch, &self.config, &self.diffusion, &mut rng)?;
        Ok(RlMetrics {
            step: update + 1,
            reward_mean,
            reward_std,
            kl: m.kl,
            clip_frac: m.clip_frac,
            ratio_mean: m.ratio_mean,
            loss: m.loss,
            grad_norm: m.grad_norm,
            wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Run `updates` updates, calling `on_step` after each.
    pub fn train<F>(&self, state: &mut PolicyState, updates: u64, mut on_step: F) -> Result<Vec<RlMetrics>>
    where
        F: FnMut(&RlMetrics) -> Result<()>,
    {
        self.config.validate()?;
        let mut log = Vec::with_capacity(updates as usize);
        for u in 0..updates {
            let m = self.step(state, u)?;
            on_step(&m)?;
            log.push(m);
        }
        Ok(log)
    }
}

/// Mean reward over `per_prompt` fresh rollouts for each prompt.
#[allow(clippy::too_many_arguments)]
pub fn mean_reward(
    params: &ModelParams,
    task: &SyntheticTask,
    diffusion: &UniformDiffusion,
    reward_fn: &dyn RewardFn,
    grid: &TimeGrid,
    cfg: &CfgSpec,
    per_prompt: usize,
    seed: u64,
) -> Result<f64> {
    let jobs: Vec<(usize, usize)> = (0..task.num_prompts)
        .flat_map(|c| (0..per_prompt).map(move |i| (c, i)))
        .collect();
    let rs = jobs
        .par_iter()
        .map(|&(c, i)| {
            let mut rng = derive(seed, &[domain::EVAL, c as u64, i as u64]);
            let rec = sample_rollout(params, diffusion, c, grid, cfg, &mut rng)?;
            reward(reward_fn, task, &rec.clean, c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rs.iter().sum::<f64>() / rs.len().max(1) as f64)
}

