//! Fisher-information regularized fine-tuning against a self-supervised
//! reference model, on small networks and synthetic biased datasets.
//!
//! The pipeline is: pretrain a reference model (`ssl`), estimate its diagonal
//! Fisher information (`fim`), fine-tune on a downstream task with a quadratic
//! penalty anchored at the reference (`regularization`), then measure task
//! accuracy, worst-group accuracy and reverse transfer (`eval`). The `harness`
//! module runs sweeps over that pipeline and backs the CLI.

pub mod data;
pub mod error;
pub mod eval;
pub mod fim;
pub mod harness;
pub mod nn;
pub mod regularization;
pub mod ssl;

pub use error::{Error, Result};
