//! Sparse Bayesian instrumental-variables regression by two-stage
//! expectation propagation with spike-and-slab priors.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: link functions, the nearest-rank quantile and the
//!   Woodbury-form Gaussian posterior solver.
//! - [`ep`]: a single EP run for a linear model with spike-and-slab priors.
//! - [`two_stage`]: the two-stage procedure built from independent EP runs.
//! - [`baselines`]: coordinate-descent LASSO, ridge and the two-stage LASSO.
//! - [`hyperinit`]: hyperparameter initialization from a LASSO fit, and a
//!   cross-validated grid over the inclusion priors.
//! - [`simulate`], [`metrics`], [`study`]: synthetic data, selection and
//!   prediction criteria, and the replicate harness.
//! - [`io`], [`cli`]: CSV files and the `ivep` command-line tool.

pub mod baselines;
pub mod cli;
pub mod ep;
pub mod error;
pub mod hyperinit;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod simulate;
pub mod study;
pub mod two_stage;

pub use error::{Error, Result};
pub use numerics::Probability;
