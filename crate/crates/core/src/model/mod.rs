//! Desk-scale decoder-only transformer with per-layer widths.

pub mod checkpoint;
mod gradcheck;
pub mod ops;
mod optim;
mod transformer;
mod weights;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use gradcheck::{finite_diff_check, finite_diff_samples, sample_weight_indices, GradSample};
pub use optim::{adamw_step, clip_grad_norm, AdamW, OptState};
pub use transformer::{forward, loss, loss_and_grads, Forward, ForwardCache, LayerCache};
pub use weights::{init_model, tensor_layout, LayerWeights, TensorInfo, TensorRole, Weights, INIT_STD};
