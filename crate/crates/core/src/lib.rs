//! Scalable Gaussian-process regression with product-of-experts models.
//!
//! Many exact GP experts share one set of kernel hyperparameters, each is
//! trained on its own partition of the data, and their Gaussian predictions
//! are combined per test point. Expert weights come from a tempered softmax
//! over a per-expert confidence score, which keeps the aggregate calibrated
//! when most experts are weak.
//!
//! Module map:
//! - [`numerics`]: RBF-ARD kernel, jittered Cholesky, solves.
//! - [`gp`]: exact GP likelihood, gradients, fitting and prediction.
//! - [`partition`]: random and k-means assignment of rows to experts.
//! - [`ensemble`]: shared-hyperparameter expert pools (and grBCM structure).
//! - [`aggregate`]: weighting functionals and the six combination rules.
//! - [`bench`]: data loading, experiments, sweeps and reports.

// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod bench;
pub mod ensemble;
pub mod error;
pub mod gp;
pub mod numerics;
pub mod optim;
pub mod partition;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
