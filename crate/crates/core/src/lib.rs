//! Sketched kernel estimators of the Koopman operator.
//!
//! Nystrom variants of kernel ridge regression, principal component regression
//! and reduced rank regression fit a finite-rank operator
//! `Â = Φ_Ỹ U Vᵀ Φ_X̃*` from lagged pairs of a trajectory. The exact n×n
//! estimators are provided as reference implementations. The `spectral` module
//! turns any fitted estimator into eigenvalues, eigenfunctions, Koopman modes
//! and forecasts.

pub mod data;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod spectral;

pub use error::{Error, Result};
