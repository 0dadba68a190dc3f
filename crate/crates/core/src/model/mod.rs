//! The denoiser `p_theta(x1 | x_t, t, c)`: a small residual network with
//! mean-pooled context, hand-written gradients, AdamW, and checkpoints.

pub mod adamw;
pub mod arch;
pub mod checkpoint;
pub mod loss;
pub mod net;

pub use adamw::{adamw_step, AdamState, AdamWConfig};
pub use arch::{Arch, ModelParams};
pub use loss::{
    evaluate_loss, loss_and_grad, policy_field, ItemStats, LossItem, LossOutput, LossSpec,
    PolicyField, SurrogateSpec,
};
pub use net::{forward_logits, DenoiserInput};
