//! Name-keyed registries for the interchangeable strategy families.
//!
//! Each family (noise schedules, rewards, timestep selectors, trajectory
//! builders, action rules) is a trait; concrete variants register a
//! constructor under a stable name and are picked at run time from the
//! configuration file or command line.

use std::sync::Arc;

use crate::diffusion::schedule::{CosineSchedule, LinearSchedule, NoiseSchedule};
use crate::error::{Error, Result};
use crate::grpo::timesteps::{AllSteps, ReducedEarly, ReducedRandom, TimestepSelector};
use crate::grpo::variants::{
    ActionRule, BackwardStates, CleanAction, ForwardStates, IntermediateAction, StateBuilder,
};
use crate::rewards::{BigramPattern, CountMatch, RewardFn, TokenMatch};

type Ctor<T> = fn() -> Arc<T>;

/// An ordered list of `(name, constructor)` pairs for one strategy family.
pub struct Registry<T: ?Sized> {
    family: &'static str,
    entries: Vec<(&'static str, Ctor<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(family: &'static str) -> Self {
        Self {
            family,
            entries: Vec::new(),
        }
    }

    pub fn register(mut self, name: &'static str, ctor: Ctor<T>) -> Self {
        assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate {} '{}'",
            self.family,
            name
        );
        self.entries.push((name, ctor));
        self
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn create(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, ctor)| ctor())
            .ok_or_else(|| Error::UnknownStrategy {
                family: self.family,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }
}

pub fn schedules() -> Registry<dyn NoiseSchedule> {
    Registry::new("noise schedule")
        .register("linear", || Arc::new(LinearSchedule) as _)
        .register("cosine", || Arc::new(CosineSchedule) as _)
}

pub fn rewards() -> Registry<dyn RewardFn> {
    Registry::new("reward")
        .register("token_match", || Arc::new(TokenMatch) as _)
        .register("count_match", || Arc::new(CountMatch) as _)
        .register("bigram_pattern", || Arc::new(BigramPattern) as _)
}

pub fn timestep_selectors() -> Registry<dyn TimestepSelector> {
    Registry::new("timestep mode")
        .register("all", || Arc::new(AllSteps) as _)
        .register("reduced_early", || Arc::new(ReducedEarly) as _)
        .register("reduced_random", || Arc::new(ReducedRandom) as _)
}

pub fn state_builders() -> Registry<dyn StateBuilder> {
    Registry::new("trajectory variant")
        .register("backward", || Arc::new(BackwardStates) as _)
        .register("forward", || Arc::new(ForwardStates) as _)
}

pub fn action_rules() -> Registry<dyn ActionRule> {
    Registry::new("action variant")
        .register("intermediate", || Arc::new(IntermediateAction) as _)
        .register("clean", || Arc::new(CleanAction) as _)
}
