//! Minimal tensor library: reverse-mode autodiff, layers, Adam and
//! checkpointing.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, grad_check_params, Differentiable, GradCheckReport, ParamReport};
pub use kernels::{Rule, Rulebook};
pub use layers::{Linear, Mlp};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use params::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tape::{Grads, Tape, Var};
pub use tensor::{numel, Tensor};
