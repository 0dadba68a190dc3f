use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use udm_core::harness::{
    cmd_eval, cmd_pretrain, cmd_probe, cmd_rl, cmd_sample, RunConfig, SampleOptions,
};
use udm_core::rollout::CfgSpec;
use udm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "udmg", version, about = "Uniform discrete diffusion with GRPO fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// key=value configuration file; omitted keys take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Model checkpoint to start from or evaluate
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides the config's worker count
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-entropy pretraining
    Pretrain(Shared),
    /// Policy-gradient fine-tuning from --checkpoint
    Rl(Shared),
    /// Print samples and rewards for one prompt
    Sample {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, default_value_t = 0)]
        prompt: usize,
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Sample with classifier-free guidance
        #[arg(long)]
        cfg: bool,
        #[arg(long, default_value_t = 1.0)]
        guidance_scale: f64,
        /// Write full trajectories to this file
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Entropy and divergence along the three trajectory families
    Probe(Shared),
    /// Mean reward per prompt
    Eval(Shared),
}

fn load_config(shared: &Shared) -> Result<RunConfig> {
    let mut cfg = match &shared.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = shared.seed {
        cfg.seed = s;
    }
    if let Some(w) = shared.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint(shared: &Shared) -> Result<PathBuf> {
    shared
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("this command needs --checkpoint".into()))
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Pretrain(s) => {
            let cfg = load_config(&s)?;
            let r = cmd_pretrain(&cfg, &s.out)?;
            eprintln!("heldout cross-entropy {:.4}", r.heldout_ce);
        }
        Command::Rl(s) => {
            let cfg = load_config(&s)?;
            let r = cmd_rl(&cfg, &checkpoint(&s)?, &s.out)?;
            if let Some(m) = r.metrics.last() {
                eprintln!("final reward_mean {:.4} kl {:.5}", m.reward_mean, m.kl);
            }
        }
        Command::Sample {
            shared,
            prompt,
            n,
            cfg,
            guidance_scale,
            dump,
        } => {
            let config = load_config(&shared)?;
            let opts = SampleOptions {
                prompt,
                n,
                cfg: if cfg { CfgSpec::guided(guidance_scale) } else { CfgSpec::off() },
                dump,
            };
            cmd_sample(&config, &checkpoint(&shared)?, &opts, &mut out)?;
        }
        Command::Probe(s) => {
            let cfg = load_config(&s)?;
            let table = cmd_probe(&cfg, &checkpoint(&s)?, &s.out)?;
            if table.untrained_warning {
                eprintln!("warning: predictions at t = 1 are nearly uniform; is the checkpoint trained?");
            }
            eprintln!("self-distance at the final knot {:.6}", table.self_distance);
        }
        Command::Eval(s) => {
            let cfg = load_config(&s)?;
            cmd_eval(&cfg, &checkpoint(&s)?, &mut out)?;
        }
    }
    out.flush().map_err(|e| Error::Format(format!("cannot flush stdout: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
