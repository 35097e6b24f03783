//! Gaussian-process regression for streaming spatial data.
//!
//! Provides exact, sliding-window, variational sparse, FITC and streaming
//! sparse GP regression with an SE-ARD kernel, an L-BFGS optimizer for
//! hyperparameters and pseudo-inputs, a synthetic field and lawnmower
//! sampling environment, and an experiment harness that replays a sampling
//! stream through every model and records per-batch metrics.

pub mod dataset;
pub mod environment;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod optimizer;

pub use dataset::Dataset;
pub use error::{GpError, Result};
pub use kernel::{kernel_eval, kernel_gradients, kernel_matrix, Hyperparameters};
pub use linalg::{robust_cholesky, CholeskyFactor};
