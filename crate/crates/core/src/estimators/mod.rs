//! Baseline estimators: GCV-tuned ridge (RE), two-stage ridge with a learned
//! prior (TRE) and the oracle posterior mean (ORE).

mod oracle;
mod ridge;
mod tre;

pub use oracle::{ore_estimate, posterior_cov, OracleSpec};
pub use ridge::{default_grid, gcv_score, log_grid, re_estimate, ridge, select_lambda, RidgeResult};
pub use tre::{fit_prior, largest_gap, prior_from_moments, tre_estimate, tre_estimate_on_grid, LearnedPrior};
