//! Minimal reverse-mode autodiff: 2-D tensors on a tape, dense layers,
//! point-wise shared MLPs, max pooling, point-set losses and Adam.

mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod optim;
mod tensor;

pub use checkpoint::{load_params, params_from_bytes, params_to_bytes, save_params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var, LEAKY_SLOPE};
pub use layers::{Dense, SharedMlp};
pub use optim::{adam_step, lr_at, AdamState, LR_DECAY, LR_DECAY_EVERY};
pub use tensor::{NetParams, ParamId, Tensor};
