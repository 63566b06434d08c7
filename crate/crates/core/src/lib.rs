//! Debiased inference for individual coefficients and sparse contrasts in
//! high-dimensional linear regression.
//!
//! The pipeline standardizes the design, builds one relaxed-projection score
//! vector per column from its nodewise Lasso path, fits an initial estimator
//! with a joint noise-level estimate, and applies a one-step bias correction.
//! The corrected estimates come with a covariance matrix, normal-quantile
//! confidence intervals, and a thresholded selection rule.

pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod io;
pub mod lasso;
pub mod numerics;
pub mod scaled_lasso;
pub mod scores;
pub mod sim;

pub use error::{Error, Result};
