//! Estimating the strength of a hidden one-dimensional confounder between a
//! multivariate cause `X` and a scalar target `Y` from the spectral measure
//! that the regression vector induces on the covariance of `X`.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod estimator;
pub mod rng;
pub mod scm;
pub mod simulation;
pub mod spectral;
pub mod transforms;
pub mod verify;

pub use error::{Error, Result, Warning};
pub use estimator::{estimate, estimate_from_data, ConfoundingEstimate, GridConfig};
pub use scm::{Dataset, GroundTruth, ModelParams};
pub use spectral::{DiscreteMeasure, EigenDecomposition, SymMatrix};
