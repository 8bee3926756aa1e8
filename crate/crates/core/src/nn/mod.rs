//! Minimal dense layers with hand-written backward passes.
//!
//! Activations are laid out NHWC. Every layer keeps the cache of its last
//! training-mode forward pass; `infer` paths take `&self` and never touch it.

mod layers;
mod optim;
mod param;

pub use layers::{global_avg_pool, global_avg_pool_backward, relu, BatchNorm2d, Conv2d, Linear, Relu};
pub use optim::{Sgd, SgdState};
pub use param::{Buffer, Param, TensorRecord};

/// Whether a forward pass records caches and updates normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
