//! Latent Gaussian graphical models for mixed continuous/categorical data
//! with values missing at random.
//!
//! The library fits a latent Gaussian model by Monte-Carlo EM: observed
//! categorical cells constrain an unobserved Gaussian coordinate to an
//! interval between estimated thresholds, missing cells leave it free, and
//! observed continuous cells pin it exactly. Conditional expectations in the
//! E-step come from a Gibbs sampler over the interval-constrained normal.
//! The fitted covariance feeds two sparse inverse-covariance estimators
//! (graphical lasso and constrained L1-minimization), and the sparse model
//! drives classification and multiple imputation. A simulation module
//! generates the synthetic benchmark scenarios used by the test harness.

pub mod data;
pub mod em;
pub mod error;
pub mod gibbs;
pub mod numerics;
pub mod predict;
pub mod seed;
pub mod sim;
pub mod sparse;
pub mod thresholds;

pub use data::{Cell, CellConstraint, MixedDataset, Thresholds, VarKind, VariableSchema};
pub use em::{EmConfig, EmTrace, LatentParams};
pub use error::{Error, Result};
pub use gibbs::{GibbsConfig, GibbsInit};
pub use numerics::{CovMatrix, MeanVector};
pub use sparse::{PrecisionPath, SparseMethod};
