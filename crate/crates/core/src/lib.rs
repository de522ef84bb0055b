//! Penalized Gaussian mixture (PGM) random-effects meta-analysis.
//!
//! The distribution of true effects is modelled as a mixture of normal
//! components with fixed, evenly spaced means and a common SD. Only the
//! softmax-parameterized weights are estimated, by Newton ascent on a
//! penalized log-likelihood with a difference penalty; the smoothing
//! parameter is chosen by AIC with effective degrees of freedom.
//!
//! Besides the intercept-only model the crate provides a location-shifting
//! meta-regression, a shape-morphing meta-regression with one covariate,
//! cluster-robust sandwich covariances, delta-method inference for derived
//! quantities, a normal-normal baseline, and a simulation harness.

pub mod baseline;
pub mod dataset;
pub mod error;
pub mod fit;
pub mod grid;
pub mod inference;
pub mod mixture;
pub mod normal;
pub mod optimizer;
pub mod regression;
pub mod sim;

pub use baseline::{fit_ml, NormalFit};
pub use dataset::{ColumnMapping, Dataset, EffectRecord};
pub use error::{Error, Result};
pub use fit::{FitOptions, ModelSpec, PgmFit};
pub use grid::{ConstraintMatrix, DifferenceMatrix, Grid, RangeRule};
pub use inference::{CovarianceEstimate, CovarianceFlavor, DerivedQuantity};
pub use mixture::MixtureWeights;
pub use optimizer::{FitDiagnostics, LambdaSearchResult, NewtonConfig, SearchConfig};
