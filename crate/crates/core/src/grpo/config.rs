use std::fmt;
use std::sync::Arc;

use super::timesteps::{ReducedEarly, TimestepSelector};
use super::variants::{ActionRule, CleanAction, ForwardStates, StateBuilder};
use crate::error::{Error, Result};
use crate::model::{AdamWConfig, PolicyField};
use crate::rollout::CfgSpec;

/// Which field the policy-gradient term differentiates when guidance is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfgGradient {
    /// The guided field the sampler drew from.
    Guided,
    /// The conditional branch only.
    Conditional,
}

impl CfgGradient {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "guided" => Ok(Self::Guided),
            "conditional" => Ok(Self::Conditional),
            other => Err(Error::Config(format!(
                "cfg_grad must be 'guided' or 'conditional', got '{other}'"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Guided => "guided",
            Self::Conditional => "conditional",
        }
    }
}

/// Hyperparameters of one policy-gradient run.
#[derive(Clone)]
pub struct TrainConfig {
    pub group_size: usize,
    pub groups_per_batch: usize,
    pub clip_eps: f64,
    pub kl_weight: f64,
    pub states: Arc<dyn StateBuilder>,
    pub action: Arc<dyn ActionRule>,
    pub timesteps: Arc<dyn TimestepSelector>,
    pub cfg: CfgSpec,
    pub cfg_grad: CfgGradient,
    pub optim: AdamWConfig,
}

impl fmt::Debug for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrainConfig")
            .field("group_size", &self.group_size)
            .field("groups_per_batch", &self.groups_per_batch)
            .field("clip_eps", &self.clip_eps)
            .field("kl_weight", &self.kl_weight)
            .field("variant", &self.variant_name())
            .field("timesteps", &self.timesteps.name())
            .field("cfg", &self.cfg)
            .field("cfg_grad", &self.cfg_grad)
            .field("optim", &self.optim)
            .finish()
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            groups_per_batch: 8,
            clip_eps: 0.2,
            kl_weight: 0.04,
            states: Arc::new(ForwardStates),
            action: Arc::new(CleanAction),
            timesteps: Arc::new(ReducedEarly),
            cfg: CfgSpec::off(),
            cfg_grad: CfgGradient::Guided,
            optim: AdamWConfig {
                lr: 1e-4,
                ..AdamWConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config(format!(
                "group size must be at least 2, got {}",
                self.group_size
            )));
        }
        if self.groups_per_batch == 0 {
            return Err(Error::Config("groups_per_batch must be positive".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config(format!(
                "clip epsilon must lie in (0, 1), got {}",
                self.clip_eps
            )));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config(format!(
                "kl weight must be finite and >= 0, got {}",
                self.kl_weight
            )));
        }
        self.cfg.validate()?;
        self.optim.validate()
    }

    /// Field whose log-probabilities enter the ratio.
    pub fn policy_field(&self) -> PolicyField {
        match (self.cfg.enabled, self.cfg_grad) {
            (true, CfgGradient::Guided) => self.cfg.policy_field(),
            _ => PolicyField::Conditional,
        }
    }

    /// For example `forward+clean`.
    pub fn variant_name(&self) -> String {
        format!("{}+{}", self.states.name(), self.action.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.variant_name(), "forward+clean");
        assert_eq!(c.policy_field(), PolicyField::Conditional);
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = [
            TrainConfig {
                group_size: 1,
                ..Default::default()
            },
            TrainConfig {
                clip_eps: 0.0,
                ..Default::default()
            },
            TrainConfig {
                clip_eps: 1.0,
                ..Default::default()
            },
            TrainConfig {
                kl_weight: -0.1,
                ..Default::default()
            },
            TrainConfig {
                groups_per_batch: 0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn guided_gradient_follows_sampling_field() {
        let mut c = TrainConfig {
            cfg: CfgSpec::guided(2.0),
            ..Default::default()
        };
        assert_eq!(c.policy_field(), PolicyField::Guided { scale: 2.0 });
        c.cfg_grad = CfgGradient::Conditional;
        assert_eq!(c.policy_field(), PolicyField::Conditional);
        assert_eq!(CfgGradient::parse("guided").unwrap(), CfgGradient::Guided);
        assert!(CfgGradient::parse("both").is_err());
    }
}
