//! One GRPO update: build the MDP views of a batch of groups, evaluate the
//! clipped surrogate with its KL penalty, take an AdamW step, and refresh
//! the behaviour policy.

use rand::{Rng, RngCore};
use rayon::prelude::*;

use super::config::TrainConfig;
use super::objective::compute_advantages;
use crate::diffusion::{sequence_log_prob, TokenSequence, UniformDiffusion};
use crate::error::{Error, Result};
use crate::model::{
    adamw_step, evaluate_loss, policy_field, AdamState, DenoiserInput, LossItem, LossSpec,
    ModelParams, SurrogateSpec,
};
use crate::rng::derive;
use crate::rollout::RolloutRecord;

/// `G` rollouts that share a prompt, with their rewards and advantages.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub prompt: usize,
    pub rollouts: Vec<RolloutRecord>,
}

impl GroupBatch {
    /// Attach `rewards` and the group-normalized advantages to `rollouts`.
    pub fn new(prompt: usize, mut rollouts: Vec<RolloutRecord>, rewards: &[f64]) -> Result<Self> {
        if rollouts.len() != rewards.len() {
            return Err(Error::Shape(format!(
                "{} rollouts but {} rewards",
                rollouts.len(),
                rewards.len()
            )));
        }
        if let Some(r) = rollouts.iter().find(|r| r.prompt != prompt) {
            return Err(Error::Shape(format!(
                "rollout for prompt {} in a group for prompt {prompt}",
                r.prompt
            )));
        }
        let adv = compute_advantages(rewards)?;
        for ((r, &rew), a) in rollouts.iter_mut().zip(rewards).zip(adv) {
            r.reward = Some(rew);
            r.advantage = Some(a);
        }
        Ok(Self { prompt, rollouts })
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().filter_map(|r| r.reward).collect()
    }
}

/// The `(state, action)` pair that step `step` of a rollout contributes.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpView {
    pub step: usize,
    pub state: DenoiserInput,
    pub action: TokenSequence,
    /// The sampler's own log-probability of the action, available when the
    /// state is one the sampler visited.
    pub recorded_logprob: Option<f64>,
}

pub fn build_mdp_view(
    config: &TrainConfig,
    record: &RolloutRecord,
    step: usize,
    diffusion: &UniformDiffusion,
    rng: &mut dyn RngCore,
) -> Result<MdpView> {
    if step >= record.grid.num_steps() {
        return Err(Error::Shape(format!(
            "step {step} outside a {}-step rollout",
            record.grid.num_steps()
        )));
    }
    let x = config.states.state(record, step, diffusion, rng)?;
    Ok(MdpView {
        step,
        state: DenoiserInput::new(x, record.grid.t(step), Some(record.prompt)),
        action: config.action.action(record, step).clone(),
        recorded_logprob: config
            .states
            .is_recorded()
            .then(|| config.action.recorded_logprob(record, step)),
    })
}

/// Summary of one update. `ratio_mean`, `clip_frac` and `kl` average over
/// the `(rollout, step)` samples of the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateMetrics {
    pub loss: f64,
    pub ratio_mean: f64,
    pub clip_frac: f64,
    pub kl: f64,
    pub grad_norm: f64,
    pub num_samples: usize,
}

/// Mutable state of a policy-gradient run.
#[derive(Debug, Clone)]
pub struct PolicyState {
    pub params: ModelParams,
    /// Behaviour policy that generated the current rollouts.
    pub params_old: ModelParams,
    /// Frozen reference for the KL penalty.
    pub params_ref: ModelParams,
    pub optim: AdamState,
}

impl PolicyState {
    /// Start from a pretrained model: all three copies coincide.
    pub fn new(pretrained: ModelParams) -> Self {
        let n = pretrained.len();
        Self {
            params_old: pretrained.clone(),
            params_ref: pretrained.clone(),
            params: pretrained,
            optim: AdamState::new(n),
        }
    }
}

/// Loss items of a batch. Item weights average first over the selected
/// steps of a rollout, then over rollouts and groups.
pub fn build_loss_items(
    state: &PolicyState,
    batch: &[GroupBatch],
    config: &TrainConfig,
    diffusion: &UniformDiffusion,
    key: u64,
) -> Result<Vec<LossItem>> {
    let field = config.policy_field();
    let num_groups = batch.len() as f64;
    let jobs: Vec<(usize, usize, &RolloutRecord)> = batch
        .iter()
        .enumerate()
        .flat_map(|(g, gb)| gb.rollouts.iter().enumerate().map(move |(i, r)| (g, i, r)))
        .collect();
    let per_rollout: Vec<Result<Vec<LossItem>>> = jobs
        .par_iter()
        .map(|&(g, i, record)| {
            let group_len = batch[g].rollouts.len() as f64;
            let advantage = record
                .advantage
                .ok_or_else(|| Error::Statistics("rollout without an advantage".into()))?;
            let mut rng = derive(key, &[g as u64, i as u64]);
            let steps = config.timesteps.select(record.grid.num_steps(), &mut rng)?;
            let weight = 1.0 / (num_groups * group_len * steps.len() as f64);
            steps
                .into_iter()
                .map(|j| {
                    let view = build_mdp_view(config, record, j, diffusion, &mut rng)?;
                    let old = policy_field(&state.params_old, &view.state, field)?;
                    let old_logprob = sequence_log_prob(&old, &view.action)?;
                    Ok(LossItem {
                        input: view.state,
                        target: view.action,
                        weight,
                        advantage,
                        old_logprob,
                    })
                })
                .collect()
        })
        .collect();
    let mut items = Vec::new();
    for r in per_rollout {
        items.extend(r?);
    }
    Ok(items)
}

/// One policy update on `batch`, followed by `params_old <- params`.
/// On error `state` is left untouched.
pub fn grpo_update<R: Rng + ?Sized>(
    state: &mut PolicyState,
    batch: &[GroupBatch],
    config: &TrainConfig,
    diffusion: &UniformDiffusion,
    rng: &mut R,
) -> Result<UpdateMetrics> {
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::Config("update batch has no groups".into()));
    }
    let key = rng.next_u64();
    let items = build_loss_items(state, batch, config, diffusion, key)?;
    let spec = LossSpec::GrpoSurrogate(SurrogateSpec {
        clip_eps: config.clip_eps,
        kl_weight: config.kl_weight,
        reference: &state.params_ref,
        field: config.policy_field(),
    });
    let out = evaluate_loss(&state.params, &items, &spec)?;
    let n = out.items.len() as f64;
    let metrics = UpdateMetrics {
        loss: out.loss,
        ratio_mean: out.items.iter().map(|s| s.ratio).sum::<f64>() / n,
        clip_frac: out.items.iter().filter(|s| s.clipped).count() as f64 / n,
        kl: out.items.iter().map(|s| s.kl).sum::<f64>() / n,
        grad_norm: out.grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        num_samples: out.items.len(),
    };
    adamw_step(&mut state.params, &out.grad, &mut state.optim, &config.optim)?;
    state.params_old = state.params.clone();
    Ok(metrics)
}
