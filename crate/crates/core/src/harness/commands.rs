//! The five commands. Each writes its artifacts under an output directory
//! and is deterministic given the configuration and seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::RunConfig;
use crate::analysis::{trajectory_probe, ProbeConfig, ProbeTable};
use crate::error::{Error, Result};
use crate::grpo::{PolicyState, RlMetrics, RlRun, METRICS_COLUMNS};
use crate::model::{checkpoint, ModelParams};
use crate::pretrain::{evaluate_ce, Pretrainer};
use crate::rewards::reward;
use crate::rng::{derive, domain};
use crate::rollout::{sample_rollout, CfgSpec};
use crate::tasks::SyntheticTask;

pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt";
pub const PRETRAIN_METRICS: &str = "pretrain_metrics.csv";
pub const RL_CHECKPOINT: &str = "rl.ckpt";
pub const RL_METRICS: &str = "rl_metrics.csv";
pub const PROBE_TABLE: &str = "probe.csv";
pub const PRETRAIN_COLUMNS: [&str; 4] = ["step", "ce_loss", "grad_norm", "wallclock_ms"];

/// Held-out samples for the final cross-entropy estimate.
const HELDOUT_SAMPLES: usize = 1024;

/// Run `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

struct Csv {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Csv {
    fn create(path: PathBuf, columns: &[&str]) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut csv = Self {
            out: BufWriter::new(file),
            path,
        };
        csv.line(&columns.join(","))?;
        Ok(csv)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    fn row(&mut self, step: u64, values: &[f64]) -> Result<()> {
        let mut s = step.to_string();
        for v in values {
            s.push(',');
            s.push_str(&v.to_string());
        }
        self.line(&s)
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn prepare_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn elapsed_ms(cfg: &RunConfig, start: Instant) -> f64 {
    if cfg.log_wallclock {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

/// Load a checkpoint and check it against the configured task.
pub fn load_model(cfg: &RunConfig, task: &SyntheticTask, path: &Path) -> Result<ModelParams> {
    let params = checkpoint::load(path)?;
    params.check_arch(&cfg.arch(task)?)?;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub params: ModelParams,
    pub final_loss: Option<f64>,
    /// Cross-entropy on fresh held-out samples.
    pub heldout_ce: f64,
}

/// Initialize and pretrain; `on_step(step, loss, grad_norm)` sees every step.
pub fn pretrain_model(
    cfg: &RunConfig,
    mut on_step: impl FnMut(u64, f64, f64) -> Result<()>,
) -> Result<PretrainReport> {
    cfg.validate()?;
    let task = cfg.task()?;
    let diffusion = cfg.diffusion(&task)?;
    let init = ModelParams::init(cfg.arch(&task)?, cfg.init_scale, &mut derive(cfg.seed, &[domain::INIT]));
    let mut trainer = Pretrainer::new(init, cfg.pretrain_config());
    let mut final_loss = None;
    for s in 0..cfg.pretrain_steps {
        let out = trainer.step(&task, &diffusion, &mut derive(cfg.seed, &[domain::PRETRAIN, s]))?;
        on_step(s + 1, out.loss, out.grad_norm)?;
        final_loss = Some(out.loss);
    }
    let heldout_ce = evaluate_ce(
        &trainer.params,
        &task,
        &diffusion,
        HELDOUT_SAMPLES,
        &mut derive(cfg.seed, &[domain::HELDOUT]),
    )?;
    Ok(PretrainReport {
        params: trainer.params,
        final_loss,
        heldout_ce,
    })
}

pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<PretrainReport> {
    prepare_dir(out)?;
    let mut csv = Csv::create(out.join(PRETRAIN_METRICS), &PRETRAIN_COLUMNS)?;
    let report = with_workers(cfg.workers, || {
        let mut start = Instant::now();
        pretrain_model(cfg, |step, loss, grad_norm| {
            let ms = elapsed_ms(cfg, start);
            start = Instant::now();
            csv.row(step, &[loss, grad_norm, ms])
        })
    })??;
    csv.finish()?;
    checkpoint::save(&report.params, &out.join(PRETRAIN_CHECKPOINT))?;
    Ok(report)
}

/// Everything an RL run needs besides the starting parameters.
pub fn rl_run(cfg: &RunConfig) -> Result<RlRun> {
    cfg.validate()?;
    let task = cfg.task()?;
    Ok(RlRun {
        diffusion: cfg.diffusion(&task)?,
        reward: cfg.reward_fn()?,
        grid: cfg.grid()?,
        config: cfg.train_config()?,
        seed: cfg.seed,
        task,
    })
}

#[derive(Debug, Clone)]
pub struct RlReport {
    pub state: PolicyState,
    pub metrics: Vec<RlMetrics>,
}

pub fn cmd_rl(cfg: &RunConfig, checkpoint_path: &Path, out: &Path) -> Result<RlReport> {
    let run = rl_run(cfg)?;
    let start_params = load_model(cfg, &run.task, checkpoint_path)?;
    prepare_dir(out)?;
    let mut csv = Csv::create(out.join(RL_METRICS), &METRICS_COLUMNS)?;
    let mut state = PolicyState::new(start_params);
    let metrics = with_workers(cfg.workers, || {
        run.train(&mut state, cfg.rl_updates, |m| {
            let mut v = m.values();
            if !cfg.log_wallclock {
                v[8] = 0.0;
            }
            csv.row(m.step, &v[1..])
        })
    })??;
    csv.finish()?;
    checkpoint::save(&state.params, &out.join(RL_CHECKPOINT))?;
    Ok(RlReport { state, metrics })
}

/// Options specific to `sample`.
#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub prompt: usize,
    pub n: usize,
    pub cfg: CfgSpec,
    /// Write every rollout's trajectory here.
    pub dump: Option<PathBuf>,
}

/// Print `n` samples for one prompt as `index<TAB>reward<TAB>tokens`,
/// followed by the mean reward when `n > 0`.
pub fn cmd_sample<W: Write>(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    opts: &SampleOptions,
    out: &mut W,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let task = cfg.task()?;
    task.check_prompt(opts.prompt)?;
    opts.cfg.validate()?;
    let params = load_model(cfg, &task, checkpoint_path)?;
    let diffusion = cfg.diffusion(&task)?;
    let grid = cfg.grid()?;
    let reward_fn = cfg.reward_fn()?;
    let records = with_workers(cfg.workers, || {
        (0..opts.n)
            .into_par_iter()
            .map(|i| {
                let mut rng = derive(cfg.seed, &[domain::SAMPLE, opts.prompt as u64, i as u64]);
                let mut rec = sample_rollout(&params, &diffusion, opts.prompt, &grid, &opts.cfg, &mut rng)?;
                rec.reward = Some(reward(reward_fn.as_ref(), &task, &rec.clean, opts.prompt)?);
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let io_err = |e| Error::io("<stdout>", e);
    writeln!(out, "index\treward\ttokens").map_err(io_err)?;
    let rewards: Vec<f64> = records.iter().filter_map(|r| r.reward).collect();
    for (i, r) in records.iter().enumerate() {
        writeln!(out, "{i}\t{}\t{}", rewards[i], r.clean).map_err(io_err)?;
    }
    if !rewards.is_empty() {
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        writeln!(out, "mean\t{mean}").map_err(io_err)?;
    }
    if let Some(path) = &opts.dump {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, r) in records.iter().enumerate() {
            writeln!(w, "# rollout {i}").map_err(|e| Error::io(path, e))?;
            r.write_dump(&mut w).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(rewards)
}

/// Mean reward per prompt over `eval_per_prompt` rollouts, then overall.
pub fn cmd_eval<W: Write>(cfg: &RunConfig, checkpoint_path: &Path, out: &mut W) -> Result<f64> {
    cfg.validate()?;
    let task = cfg.task()?;
    let params = load_model(cfg, &task, checkpoint_path)?;
    let diffusion = cfg.diffusion(&task)?;
    let grid = cfg.grid()?;
    let reward_fn = cfg.reward_fn()?;
    let cfg_spec = cfg.cfg_spec();
    let per_prompt = with_workers(cfg.workers, || {
        (0..task.num_prompts)
            .map(|c| {
                let rs = (0..cfg.eval_per_prompt)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = derive(cfg.seed, &[domain::EVAL, c as u64, i as u64]);
                        let rec = sample_rollout(&params, &diffusion, c, &grid, &cfg_spec, &mut rng)?;
                        reward(reward_fn.as_ref(), &task, &rec.clean, c)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(rs.iter().sum::<f64>() / rs.len().max(1) as f64)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let io_err = |e| Error::io("<stdout>", e);
    writeln!(out, "prompt\tmean_reward").map_err(io_err)?;
    for (c, m) in per_prompt.iter().enumerate() {
        writeln!(out, "{c}\t{m}").map_err(io_err)?;
    }
    let overall = per_prompt.iter().sum::<f64>() / per_prompt.len() as f64;
    writeln!(out, "all\t{overall}").map_err(io_err)?;
    Ok(overall)
}

pub fn probe_config(cfg: &RunConfig) -> ProbeConfig {
    ProbeConfig {
        n_pairs: cfg.probe_pairs,
        cfg: cfg.cfg_spec(),
        feature_dim: cfg.feature_dim,
        feature_seed: cfg.feature_seed,
    }
}

pub fn cmd_probe(cfg: &RunConfig, checkpoint_path: &Path, out: &Path) -> Result<ProbeTable> {
    cfg.validate()?;
    let task = cfg.task()?;
    let params = load_model(cfg, &task, checkpoint_path)?;
    let diffusion = cfg.diffusion(&task)?;
    let grid = cfg.grid()?;
    let table = with_workers(cfg.workers, || {
        trajectory_probe(&params, &task, &diffusion, &grid, &probe_config(cfg), cfg.seed)
    })??;
    prepare_dir(out)?;
    let path = out.join(PROBE_TABLE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    table
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig::parse(
            "vocab_size = 5\nseq_len = 6\nnum_prompts = 2\nembed_dim = 6\nhidden_dim = 8\n\
             pretrain_steps = 3\nbatch_size = 8\nrl_updates = 2\ngroup_size = 2\ngroups_per_batch = 2\n\
             num_steps = 6\neval_per_prompt = 3\nprobe_pairs = 64\n",
        )
        .unwrap()
    }

    #[test]
    fn zero_steps_keep_initial_params() {
        let mut cfg = tiny();
        cfg.pretrain_steps = 0;
        let dir = tempfile::tempdir().unwrap();
        let r = cmd_pretrain(&cfg, dir.path()).unwrap();
        let task = cfg.task().unwrap();
        let init = ModelParams::init(cfg.arch(&task).unwrap(), cfg.init_scale, &mut derive(cfg.seed, &[domain::INIT]));
        assert_eq!(r.params, init);
        let body = fs::read_to_string(dir.path().join(PRETRAIN_METRICS)).unwrap();
        assert_eq!(body, "step,ce_loss,grad_norm,wallclock_ms\n");
    }

    #[test]
    fn pipeline_runs_and_repeats_exactly() {
        let cfg = tiny();
        let run = |dir: &Path| {
            cmd_pretrain(&cfg, dir).unwrap();
            cmd_rl(&cfg, &dir.join(PRETRAIN_CHECKPOINT), dir).unwrap();
            cmd_probe(&cfg, &dir.join(PRETRAIN_CHECKPOINT), dir).unwrap();
            [PRETRAIN_CHECKPOINT, PRETRAIN_METRICS, RL_CHECKPOINT, RL_METRICS, PROBE_TABLE]
                .map(|f| fs::read(dir.join(f)).unwrap())
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert_eq!(run(a.path()), run(b.path()));
        let rl = fs::read_to_string(a.path().join(RL_METRICS)).unwrap();
        assert_eq!(rl.lines().count(), 3);
        assert!(rl.starts_with(&METRICS_COLUMNS.join(",")));
    }

    #[test]
    fn zero_updates_return_the_input_checkpoint() {
        let mut cfg = tiny();
        let dir = tempfile::tempdir().unwrap();
        cmd_pretrain(&cfg, dir.path()).unwrap();
        cfg.rl_updates = 0;
        cmd_rl(&cfg, &dir.path().join(PRETRAIN_CHECKPOINT), dir.path()).unwrap();
        assert_eq!(
            fs::read(dir.path().join(PRETRAIN_CHECKPOINT)).unwrap(),
            fs::read(dir.path().join(RL_CHECKPOINT)).unwrap()
        );
    }

    #[test]
    fn sample_and_eval_outputs() {
        let cfg = tiny();
        let dir = tempfile::tempdir().unwrap();
        cmd_pretrain(&cfg, dir.path()).unwrap();
        let ckpt = dir.path().join(PRETRAIN_CHECKPOINT);
        let mut opts = SampleOptions {
            prompt: 1,
            n: 0,
            cfg: CfgSpec::off(),
            dump: None,
        };
        let mut out = Vec::new();
        cmd_sample(&cfg, &ckpt, &opts, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "index\treward\ttokens\n");

        opts.n = 3;
        opts.dump = Some(dir.path().join("dump.tsv"));
        let (mut o1, mut o2) = (Vec::new(), Vec::new());
        cmd_sample(&cfg, &ckpt, &opts, &mut o1).unwrap();
        cmd_sample(&cfg, &ckpt, &opts, &mut o2).unwrap();
        assert_eq!(o1, o2);
        assert_eq!(String::from_utf8(o1).unwrap().lines().count(), 5);
        assert!(fs::read_to_string(dir.path().join("dump.tsv")).unwrap().contains("# rollout 2"));

        opts.prompt = 2;
        assert_eq!(cmd_sample(&cfg, &ckpt, &opts, &mut Vec::new()).unwrap_err().exit_code(), 2);

        let mut e = Vec::new();
        let m = cmd_eval(&cfg, &ckpt, &mut e).unwrap();
        assert!((0.0..=1.0).contains(&m));
        assert_eq!(String::from_utf8(e).unwrap().lines().count(), 4);
    }

    #[test]
    fn checkpoint_errors_map_to_exit_codes() {
        let cfg = tiny();
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.ckpt");
        assert_eq!(cmd_probe(&cfg, &missing, dir.path()).unwrap_err().exit_code(), 2);
        cmd_pretrain(&cfg, dir.path()).unwrap();
        let mut other = cfg.clone();
        other.hidden_dim = 9;
        let err = cmd_rl(&other, &dir.path().join(PRETRAIN_CHECKPOINT), dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
