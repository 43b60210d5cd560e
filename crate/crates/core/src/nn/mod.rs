//! Deterministic feed-forward network engine.

mod loss;
mod mlp;
mod optim;
mod params;
mod train;

pub use loss::{grad_nll, nll_and_grad_on, nll_loss};
pub use mlp::{argmax, init_model, log_softmax, softmax, softmax_t, Activation, MlpSpec, ModelState, Tape};
pub use optim::{cosine_lr, optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState, Schedule};
pub use params::{Layout, ParamVector, Segment};
pub use train::{train_loop, Plain, StepHooks, TrainConfig};
