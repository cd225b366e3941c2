//! Dense linear algebra and Gaussian sampling.

mod eig;
mod mat;
mod rng;
mod scalar;
mod solve;

pub use eig::{
    min_norm_lstsq, pinv, pinv_with_cutoff, psd_sqrt, psd_sqrt_from, sym_eig, SpectralDecomp,
    PINV_RCOND,
};
pub use mat::{add_vec, axpy, dot, norm2, outer, sub_vec, Mat};
pub use rng::{derive_seed, gaussian_sample, RngStream};
pub use scalar::Real;
pub use solve::{cholesky, cholesky_solve_vec, inv_spd, solve_spd, solve_spd_vec};

/// Sample mean and covariance (divisor `m - 1`) of the rows of `samples`.
pub fn mean_and_cov<T: Real>(samples: &Mat<T>) -> (Vec<T>, Mat<T>) {
    let (m, d) = samples.shape();
    let mut mean = vec![T::zero(); d];
    for i in 0..m {
        axpy(T::one(), samples.row(i), &mut mean);
    }
    let inv_m = T::one() / T::of_usize(m.max(1));
    mean.iter_mut().for_each(|x| *x = *x * inv_m);
    let mut cov = Mat::zeros(d, d);
    let mut centered = vec![T::zero(); d];
    for i in 0..m {
        for (c, (&x, &mu)) in centered.iter_mut().zip(samples.row(i).iter().zip(&mean)) {
            *c = x - mu;
        }
        for a in 0..d {
            let ca = centered[a];
            if ca == T::zero() {
                continue;
            }
            let row = cov.row_mut(a);
            axpy(ca, &centered, row);
        }
    }
    let denom = T::one() / T::of_usize(m.saturating_sub(1).max(1));
    (mean, cov.scale(denom).symmetrized())
}
