//! Numerical laboratory for in-context learning of rank-deficient inverse
//! linear regression.
//!
//! A linear transformer is trained to map a context `(X, Y)` with fewer
//! observations than unknowns to an estimate of the hidden weight vector,
//! and is compared against GCV-tuned ridge, two-stage ridge with a learned
//! Gaussian prior, and the oracle posterior mean.
//!
//! The math is generic over [`Real`] (`f32` / `f64`); the aliases below fix
//! the working precision used by the command-line driver.

// `!(x > 0)` is used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod model;
pub mod numerics;
pub mod taskgen;

pub use error::{IlrError, Result};
pub use numerics::{Mat, Real, RngStream};

pub type Mat64 = Mat<f64>;
pub type Mat32 = Mat<f32>;
pub type Context64 = taskgen::Context<f64>;
pub type PriorSpec64 = taskgen::PriorSpec<f64>;
pub type TaskDataset64 = taskgen::TaskDataset<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type LearnedPrior64 = estimators::LearnedPrior<f64>;
