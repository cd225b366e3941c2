//! Two-stage ridge: learn a Gaussian prior from minimum-norm least-squares
//! fits of the training contexts, then ridge-regress in its whitened
//! coordinates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ridge::{default_grid, ridge, GcvSpectrum, RidgeResult};
use crate::error::{IlrError, Result};
use crate::numerics::{mean_and_cov, min_norm_lstsq, sym_eig, Mat, Real};
use crate::taskgen::Context;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedPrior<T> {
    pub w0_hat: Vec<T>,
    /// Retained, noise-corrected eigenvalues, descending, all positive.
    pub eigvals: Vec<T>,
    /// `d × r̂`, orthonormal columns.
    pub eigvecs: Mat<T>,
    pub sigma_eps2_hat: T,
    pub r_w_hat: usize,
    /// Every eigenvalue of the least-squares covariance, descending.
    pub raw_spectrum: Vec<T>,
}

impl<T: Real> LearnedPrior<T> {
    /// Prior with explicit mean and eigenpairs (no fitting).
    pub fn from_parts(w0_hat: Vec<T>, eigvals: Vec<T>, eigvecs: Mat<T>) -> Result<Self> {
        if eigvecs.rows() != w0_hat.len() || eigvecs.cols() != eigvals.len() {
            return Err(IlrError::dim(
                "LearnedPrior",
                format!("mean {} / eigvecs {:?} / eigvals {}", w0_hat.len(), eigvecs.shape(), eigvals.len()),
            ));
        }
        Ok(Self {
            r_w_hat: eigvals.len(),
            raw_spectrum: eigvals.clone(),
            w0_hat,
            eigvals,
            eigvecs,
            sigma_eps2_hat: T::zero(),
        })
    }

    pub fn d(&self) -> usize {
        self.w0_hat.len()
    }

    /// `V Λ^{1/2}` (`d × r̂`); `Σ̂^{1/2} = V Λ^{1/2} Vᵀ`.
    pub fn factor(&self) -> Mat<T> {
        Mat::from_fn(self.d(), self.r_w_hat, |i, k| self.eigvecs[(i, k)] * self.eigvals[k].sqrt())
    }

    /// `Σ̂_w = V Λ Vᵀ`.
    pub fn covariance(&self) -> Mat<T> {
        let f = self.factor();
        f.matmul_t(&f).expect("factor shape")
    }
}

/// Index (1-based) maximizing `λ_k / λ_{k+1}` over `1 ≤ k < k_max`.
///
/// Eigenvalues below `1e-12 λ_1` are raised to that floor so round-off
/// in the null space cannot produce spurious gaps.
pub fn largest_gap<T: Real>(spectrum: &[T], k_max: usize) -> usize {
    let top = spectrum.first().copied().unwrap_or(T::zero());
    let floor = (top * T::lit(1e-12)).max(T::min_positive_value());
    let at = |k: usize| spectrum[k - 1].max(floor);
    let k_max = k_max.min(spectrum.len());
    let mut best = (1, T::neg_infinity());
    for k in 1..k_max {
        let ratio = at(k) / at(k + 1);
        if ratio > best.1 {
            best = (k, ratio);
        }
    }
    best.0
}

/// Prior from the mean and covariance of the least-squares fits.
///
/// `n` is the context length: the noise floor is the mean eigenvalue with
/// index in `(r̂, n]`.
pub fn prior_from_moments<T: Real>(mean: Vec<T>, cov: &Mat<T>, n: usize) -> Result<LearnedPrior<T>> {
    let d = mean.len();
    if n >= d {
        return Err(IlrError::Domain(format!("prior fit needs n < d, got n={n}, d={d}")));
    }
    let eig = sym_eig(cov)?;
    let spectrum = eig.eigenvalues.clone();
    let r_hat = largest_gap(&spectrum, n);
    let tail = &spectrum[r_hat..n];
    let sigma2 = (tail.iter().copied().sum::<T>() / T::of_usize(tail.len())).max(T::zero());
    let kept: Vec<usize> = (0..r_hat).filter(|&k| spectrum[k] - sigma2 > T::zero()).collect();
    let eigvals: Vec<T> = kept.iter().map(|&k| spectrum[k] - sigma2).collect();
    let eigvecs = Mat::from_fn(d, kept.len(), |i, j| eig.eigenvectors[(i, kept[j])]);
    Ok(LearnedPrior {
        w0_hat: mean,
        r_w_hat: eigvals.len(),
        eigvals,
        eigvecs,
        sigma_eps2_hat: sigma2,
        raw_spectrum: spectrum,
    })
}

/// First stage: minimum-norm least squares on every training context.
pub fn fit_prior<T: Real>(contexts: &[Context<T>], n: usize) -> Result<LearnedPrior<T>> {
    if contexts.len() < 2 {
        return Err(IlrError::SampleSize {
            needed: 2,
            got: contexts.len(),
        });
    }
    let d = contexts[0].d();
    let fits: Vec<Vec<T>> = contexts
        .par_iter()
        .enumerate()
        .map(|(j, c)| {
            min_norm_lstsq(&c.x, &c.y).map_err(|e| IlrError::Estimator {
                index: j,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let samples = Mat::from_vec(fits.len(), d, fits.concat())?;
    let (mean, cov) = mean_and_cov(&samples);
    prior_from_moments(mean, &cov, n)
}

/// Second stage: `ŵ = ŵ_0 + Σ̂^{1/2} v̂_λ` with `λ` chosen by GCV on the
/// transformed design `X Σ̂^{1/2}`.
pub fn tre_estimate<T: Real>(prior: &LearnedPrior<T>, x: &Mat<T>, y: &[T]) -> Result<RidgeResult<T>> {
    tre_estimate_on_grid(prior, x, y, &default_grid())
}

pub fn tre_estimate_on_grid<T: Real>(prior: &LearnedPrior<T>, x: &Mat<T>, y: &[T], grid: &[T]) -> Result<RidgeResult<T>> {
    if x.cols() != prior.d() {
        return Err(IlrError::dim("tre_estimate", format!("X {:?} for prior d={}", x.shape(), prior.d())));
    }
    let xw0 = x.matvec(&prior.w0_hat)?;
    let resid: Vec<T> = y.iter().zip(&xw0).map(|(&a, &b)| a - b).collect();
    if prior.r_w_hat == 0 {
        return Ok(RidgeResult {
            w_hat: prior.w0_hat.clone(),
            lambda: grid.iter().copied().fold(T::zero(), T::max),
            gcv_curve: None,
        });
    }
    // X Σ̂^{1/2} and X V Λ^{1/2} share the Gram matrix XΣ̂Xᵀ, so the
    // reduced r̂-column design gives the same smoother and fit.
    let f = prior.factor();
    let z = x.matmul(&f)?;
    let (lambda, curve) = GcvSpectrum::new(&z, &resid)?.select(grid)?;
    let v = ridge(&z, &resid, lambda)?;
    let mut w = f.matvec(&v)?;
    crate::numerics::axpy(T::one(), &prior.w0_hat, &mut w);
    Ok(RidgeResult {
        w_hat: w,
        lambda,
        gcv_curve: Some(curve),
    })
}
