//! Dense-classifier substrate: parameters, hand-derived gradients, Adam,
//! parameter freezing, finite-difference checking and portable checkpoints.

mod adam;
mod checkpoint;
mod freeze;
mod gradcheck;
mod grads;
mod loss;
mod model;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use freeze::FreezeMask;
pub use gradcheck::{gradient_check, max_grad_rel_error, FD_STEP};
pub use grads::Grads;
pub use loss::{backprop, cross_entropy_grads, softmax_rows, supervised_loss_and_grads, LOG_CLAMP};
pub use model::{argmax_rows, layers_bits_eq, Architecture, DenseLayer, Forward, ModelParams};
