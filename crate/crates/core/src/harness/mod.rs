//! Configuration, commands and file outputs for the `udmg` binary.

pub mod commands;
pub mod config;
pub mod kv;

pub use commands::{
    cmd_eval, cmd_pretrain, cmd_probe, cmd_rl, cmd_sample, load_model, pretrain_model, probe_config,
    rl_run, with_workers, PretrainReport, RlReport, SampleOptions,
};
pub use config::RunConfig;
