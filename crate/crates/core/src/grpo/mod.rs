//! Group-relative policy optimization for the diffusion denoiser.

pub mod config;
pub mod objective;
pub mod timesteps;
pub mod trainer;
pub mod update;
pub mod variants;

pub use config::{CfgGradient, TrainConfig};
pub use objective::{clipped_objective, compute_advantages, kl_penalty, mean_std, policy_ratio};
pub use timesteps::TimestepSelector;
pub use trainer::{mean_reward, RlMetrics, RlRun, METRICS_COLUMNS};
pub use update::{build_loss_items, build_mdp_view, grpo_update, GroupBatch, MdpView, PolicyState, UpdateMetrics};
pub use variants::{ActionRule, StateBuilder};
