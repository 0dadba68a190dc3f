//! State and action constructions for the policy-gradient MDP.
//!
//! | state \ action | intermediate `x_1^t` | clean `x̂_1` |
//! |----------------|----------------------|--------------|
//! | backward       | pilot integration    | clean action |
//! | forward        |                      | full method  |

use std::fmt::Debug;

use rand::RngCore;

use crate::diffusion::{TokenSequence, UniformDiffusion};
use crate::error::Result;
use crate::rollout::{reconstruct_forward_state, RolloutRecord};

/// Chooses the noisy state `x_t` paired with step `j` of a rollout.
pub trait StateBuilder: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn state(
        &self,
        record: &RolloutRecord,
        j: usize,
        diffusion: &UniformDiffusion,
        rng: &mut dyn RngCore,
    ) -> Result<TokenSequence>;
    /// Whether the state is the one the sampler itself visited, so the
    /// log-probabilities recorded during the rollout apply to it.
    fn is_recorded(&self) -> bool;
}

/// Chooses the action whose probability is optimized at step `j`.
pub trait ActionRule: Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn action<'r>(&self, record: &'r RolloutRecord, j: usize) -> &'r TokenSequence;
    /// Log-probability of the action at the recorded backward state.
    fn recorded_logprob(&self, record: &RolloutRecord, j: usize) -> f64;
}

/// States visited by the reverse process.
#[derive(Debug, Clone, Copy, Default)]
pub struct BackwardStates;

/// Fresh forward corruptions of the rollout's clean sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardStates;

/// The prediction sampled at step `j`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IntermediateAction;

/// The final clean sample at every step.
#[derive(Debug, Clone, Copy, Default)]
pub struct CleanAction;

impl StateBuilder for BackwardStates {
    fn name(&self) -> &'static str {
        "backward"
    }
    fn state(
        &self,
        record: &RolloutRecord,
        j: usize,
        _diffusion: &UniformDiffusion,
        _rng: &mut dyn RngCore,
    ) -> Result<TokenSequence> {
        Ok(record.states[j].clone())
    }
    fn is_recorded(&self) -> bool {
        true
    }
}

impl StateBuilder for ForwardStates {
    fn name(&self) -> &'static str {
        "forward"
    }
    fn state(
        &self,
        record: &RolloutRecord,
        j: usize,
        diffusion: &UniformDiffusion,
        rng: &mut dyn RngCore,
    ) -> Result<TokenSequence> {
        reconstruct_forward_state(diffusion, &record.clean, record.grid.t(j), rng)
    }
    fn is_recorded(&self) -> bool {
        false
    }
}

impl ActionRule for IntermediateAction {
    fn name(&self) -> &'static str {
        "intermediate"
    }
    fn action<'r>(&self, record: &'r RolloutRecord, j: usize) -> &'r TokenSequence {
        &record.intermediate_preds[j]
    }
    fn recorded_logprob(&self, record: &RolloutRecord, j: usize) -> f64 {
        record.old_logprob_intermediate[j]
    }
}

impl ActionRule for CleanAction {
    fn name(&self) -> &'static str {
        "clean"
    }
    fn action<'r>(&self, record: &'r RolloutRecord, _j: usize) -> &'r TokenSequence {
        &record.clean
    }
    fn recorded_logprob(&self, record: &RolloutRecord, j: usize) -> f64 {
        record.old_logprob_clean[j]
    }
}
