//! Run configuration. Every key has a default; unknown keys are errors.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::kv::{parse, parse_bool, parse_value};
use crate::diffusion::{SpaceSpec, TimeGrid, UniformDiffusion};
use crate::error::{Error, Result};
use crate::grpo::{CfgGradient, TrainConfig};
use crate::model::{AdamWConfig, Arch};
use crate::pretrain::PretrainConfig;
use crate::registry;
use crate::rewards::RewardFn;
use crate::rollout::CfgSpec;
use crate::tasks::SyntheticTask;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    /// Record real elapsed time in metrics files. Off by default so the
    /// files are byte-reproducible.
    pub log_wallclock: bool,

    pub task_file: Option<PathBuf>,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub num_prompts: usize,

    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,

    pub schedule: String,
    pub num_steps: usize,

    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,

    pub pretrain_steps: u64,
    pub batch_size: usize,
    pub cond_drop_p: f64,
    pub pretrain_lr: f64,

    pub rl_updates: u64,
    pub group_size: usize,
    pub groups_per_batch: usize,
    pub clip_eps: f64,
    pub kl_weight: f64,
    pub rl_lr: f64,
    pub trajectory: String,
    pub action: String,
    pub timesteps: String,
    pub reward: String,
    pub cfg: bool,
    pub guidance_scale: f64,
    pub cfg_grad: String,

    pub eval_per_prompt: usize,
    pub probe_pairs: usize,
    pub feature_dim: usize,
    pub feature_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            log_wallclock: false,
            task_file: None,
            vocab_size: 16,
            seq_len: 24,
            num_prompts: 4,
            embed_dim: 32,
            hidden_dim: 64,
            init_scale: 0.05,
            schedule: "linear".into(),
            num_steps: 10,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            adam_eps: 1e-8,
            pretrain_steps: 2000,
            batch_size: 64,
            cond_drop_p: 0.1,
            pretrain_lr: 1e-3,
            rl_updates: 300,
            group_size: 8,
            groups_per_batch: 8,
            clip_eps: 0.2,
            kl_weight: 0.04,
            rl_lr: 1e-4,
            trajectory: "forward".into(),
            action: "clean".into(),
            timesteps: "reduced_early".into(),
            reward: "token_match".into(),
            cfg: false,
            guidance_scale: 1.0,
            cfg_grad: "guided".into(),
            eval_per_prompt: 64,
            probe_pairs: 512,
            feature_dim: 8,
            feature_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in parse(text)? {
            c.set(&k, &v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Assign one key. Relative `task_file` paths are kept as written.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "workers" => self.workers = parse_value(key, v)?,
            "log_wallclock" => self.log_wallclock = parse_bool(key, v)?,
            "task_file" => self.task_file = (!v.is_empty()).then(|| PathBuf::from(v)),
            "vocab_size" => self.vocab_size = parse_value(key, v)?,
            "seq_len" => self.seq_len = parse_value(key, v)?,
            "num_prompts" => self.num_prompts = parse_value(key, v)?,
            "embed_dim" => self.embed_dim = parse_value(key, v)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, v)?,
            "init_scale" => self.init_scale = parse_value(key, v)?,
            "schedule" => self.schedule = v.to_string(),
            "num_steps" => self.num_steps = parse_value(key, v)?,
            "beta1" => self.beta1 = parse_value(key, v)?,
            "beta2" => self.beta2 = parse_value(key, v)?,
            "weight_decay" => self.weight_decay = parse_value(key, v)?,
            "adam_eps" => self.adam_eps = parse_value(key, v)?,
            "pretrain_steps" => self.pretrain_steps = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "cond_drop_p" => self.cond_drop_p = parse_value(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse_value(key, v)?,
            "rl_updates" => self.rl_updates = parse_value(key, v)?,
            "group_size" => self.group_size = parse_value(key, v)?,
            "groups_per_batch" => self.groups_per_batch = parse_value(key, v)?,
            "clip_eps" => self.clip_eps = parse_value(key, v)?,
            "kl_weight" => self.kl_weight = parse_value(key, v)?,
            "rl_lr" => self.rl_lr = parse_value(key, v)?,
            "trajectory" => self.trajectory = v.to_string(),
            "action" => self.action = v.to_string(),
            "timesteps" => self.timesteps = v.to_string(),
            "reward" => self.reward = v.to_string(),
            "cfg" => self.cfg = parse_bool(key, v)?,
            "guidance_scale" => self.guidance_scale = parse_value(key, v)?,
            "cfg_grad" => self.cfg_grad = v.to_string(),
            "eval_per_prompt" => self.eval_per_prompt = parse_value(key, v)?,
            "probe_pairs" => self.probe_pairs = parse_value(key, v)?,
            "feature_dim" => self.feature_dim = parse_value(key, v)?,
            "feature_seed" => self.feature_seed = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Check every value and every strategy name.
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.cond_drop_p) {
            return Err(Error::Config("cond_drop_p must lie in [0, 1]".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.task_file.is_none() {
            SyntheticTask::with_defaults(self.space()?, self.num_prompts)?;
        }
        self.arch_for(self.space()?, self.num_prompts)?;
        self.grid()?;
        self.pretrain_config().optim.validate()?;
        self.reward_fn()?;
        self.train_config()?.validate()?;
        registry::schedules().create(&self.schedule)?;
        Ok(())
    }

    fn space(&self) -> Result<SpaceSpec> {
        SpaceSpec::new(self.vocab_size, self.seq_len)
    }

    /// The task: loaded from `task_file` when set, otherwise the default
    /// construction for the configured sizes.
    pub fn task(&self) -> Result<SyntheticTask> {
        match &self.task_file {
            Some(p) => SyntheticTask::load(p),
            None => SyntheticTask::with_defaults(self.space()?, self.num_prompts),
        }
    }

    fn arch_for(&self, space: SpaceSpec, num_prompts: usize) -> Result<Arch> {
        Arch::new(space, num_prompts, self.embed_dim, self.hidden_dim)
    }

    pub fn arch(&self, task: &SyntheticTask) -> Result<Arch> {
        self.arch_for(task.space, task.num_prompts)
    }

    pub fn diffusion(&self, task: &SyntheticTask) -> Result<UniformDiffusion> {
        Ok(UniformDiffusion::new(
            task.space,
            registry::schedules().create(&self.schedule)?,
        ))
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.num_steps)
    }

    fn optim(&self, lr: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            eps: self.adam_eps,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            batch_size: self.batch_size,
            cond_drop_p: self.cond_drop_p,
            optim: self.optim(self.pretrain_lr),
        }
    }

    pub fn cfg_spec(&self) -> CfgSpec {
        if self.cfg {
            CfgSpec::guided(self.guidance_scale)
        } else {
            CfgSpec::off()
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            group_size: self.group_size,
            groups_per_batch: self.groups_per_batch,
            clip_eps: self.clip_eps,
            kl_weight: self.kl_weight,
            states: registry::state_builders().create(&self.trajectory)?,
            action: registry::action_rules().create(&self.action)?,
            timesteps: registry::timestep_selectors().create(&self.timesteps)?,
            cfg: self.cfg_spec(),
            cfg_grad: CfgGradient::parse(&self.cfg_grad)?,
            optim: self.optim(self.rl_lr),
        })
    }

    pub fn reward_fn(&self) -> Result<Arc<dyn RewardFn>> {
        registry::rewards().create(&self.reward)
    }

    /// Render every key, so a saved file reproduces this configuration.
    pub fn to_text(&self) -> String {
        let task_file = self
            .task_file
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("log_wallclock", self.log_wallclock.to_string()),
            ("task_file", task_file),
            ("vocab_size", self.vocab_size.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("num_prompts", self.num_prompts.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("init_scale", self.init_scale.to_string()),
            ("schedule", self.schedule.clone()),
            ("num_steps", self.num_steps.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("pretrain_steps", self.pretrain_steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("cond_drop_p", self.cond_drop_p.to_string()),
            ("pretrain_lr", self.pretrain_lr.to_string()),
            ("rl_updates", self.rl_updates.to_string()),
            ("group_size", self.group_size.to_string()),
            ("groups_per_batch", self.groups_per_batch.to_string()),
            ("clip_eps", self.clip_eps.to_string()),
            ("kl_weight", self.kl_weight.to_string()),
            ("rl_lr", self.rl_lr.to_string()),
            ("trajectory", self.trajectory.clone()),
            ("action", self.action.clone()),
            ("timesteps", self.timesteps.clone()),
            ("reward", self.reward.clone()),
            ("cfg", self.cfg.to_string()),
            ("guidance_scale", self.guidance_scale.to_string()),
            ("cfg_grad", self.cfg_grad.clone()),
            ("eval_per_prompt", self.eval_per_prompt.to_string()),
            ("probe_pairs", self.probe_pairs.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("feature_seed", self.feature_seed.to_string()),
        ];
        pairs
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(RunConfig::parse("").unwrap(), c);
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::parse("seed = 7\ntimesteps = all # every step\ncfg = true\nguidance_scale = 2.5\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train_config().unwrap().timesteps.name(), "all");
        assert_eq!(c.cfg_spec(), CfgSpec::guided(2.5));
    }

    #[test]
    fn errors_name_the_offending_key() {
        for (text, needle) in [
            ("grup_size = 8", "grup_size"),
            ("group_size = eight", "group_size"),
            ("trajectory = sideways", "sideways"),
            ("cfg = maybe", "cfg"),
            ("group_size = 1", "group size"),
            ("clip_eps = 1.5", "clip epsilon"),
            ("reward = nope", "nope"),
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2);
            assert!(err.to_string().contains(needle), "{text}: {err}");
        }
    }
}
