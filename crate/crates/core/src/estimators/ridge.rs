use serde::{Deserialize, Serialize};

use crate::error::{IlrError, Result};
use crate::numerics::{cholesky, cholesky_solve_vec, solve_spd_vec, sym_eig, Mat, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeResult<T> {
    pub w_hat: Vec<T>,
    pub lambda: T,
    /// `(λ, GCV(λ))` over the search grid.
    pub gcv_curve: Option<Vec<(T, T)>>,
}

/// 60 log-spaced points in `[1e-8, 1e2]`.
pub fn default_grid<T: Real>() -> Vec<T> {
    log_grid(1e-8, 1e2, 60)
}

pub fn log_grid<T: Real>(lo: f64, hi: f64, count: usize) -> Vec<T> {
    if count == 1 {
        return vec![T::lit(lo)];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|k| T::lit(10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64)))
        .collect()
}

fn check_xy<T: Real>(op: &'static str, x: &Mat<T>, y: &[T]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(IlrError::dim(op, format!("X {:?} vs Y {}", x.shape(), y.len())));
    }
    if x.rows() == 0 {
        return Err(IlrError::SampleSize { needed: 1, got: 0 });
    }
    Ok(())
}

/// `(XᵀX + nλI)⁻¹ XᵀY`.
///
/// For `n < d` and `λ > 0` the equivalent dual form `Xᵀ(XXᵀ + nλI)⁻¹Y` is
/// solved instead.
pub fn ridge<T: Real>(x: &Mat<T>, y: &[T], lambda: T) -> Result<Vec<T>> {
    check_xy("ridge", x, y)?;
    if !(lambda >= T::zero()) {
        return Err(IlrError::Domain(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let (n, d) = x.shape();
    let nl = T::of_usize(n) * lambda;
    if n < d && lambda > T::zero() {
        let k = x.matmul_t(x)?.add_diag(nl);
        let z = solve_spd_vec(&k, y)?;
        x.t_matvec(&z)
    } else {
        let g = x.gram().add_diag(nl);
        solve_spd_vec(&g, &x.t_matvec(y)?)
    }
}

/// `(‖(I − A)Y‖²/n) / (n − Tr A)²` with `A = X(XᵀX + nλI)⁻¹Xᵀ`.
///
/// Uses `I − A = nλ(XXᵀ + nλI)⁻¹`, which avoids the cancellation in
/// `n − Tr A` when `A` is close to the identity.
pub fn gcv_score<T: Real>(x: &Mat<T>, y: &[T], lambda: T) -> Result<T> {
    check_xy("gcv_score", x, y)?;
    if !(lambda > T::zero()) {
        return Err(IlrError::Domain(format!("GCV needs lambda > 0, got {lambda}")));
    }
    let n = x.rows();
    let nl = T::of_usize(n) * lambda;
    let l = cholesky(&x.matmul_t(x)?.add_diag(nl))?;
    let r = cholesky_solve_vec(&l, y)?;
    let mut tr_inv = T::zero();
    let mut e = vec![T::zero(); n];
    for i in 0..n {
        e[i] = T::one();
        tr_inv = tr_inv + cholesky_solve_vec(&l, &e)?[i];
        e[i] = T::zero();
    }
    let resid = r.iter().map(|&v| (nl * v).powi(2)).sum::<T>() / T::of_usize(n);
    let denom = (nl * tr_inv).powi(2);
    if !(denom > T::zero()) || !denom.is_finite() {
        return Err(IlrError::DegenerateGcv {
            lambda: lambda.to_f64_lossy(),
        });
    }
    Ok(resid / denom)
}

/// Spectral form of the GCV curve: one eigendecomposition of `XXᵀ` serves
/// every `λ`.
pub(crate) struct GcvSpectrum<T> {
    n: usize,
    s: Vec<T>,
    /// Squared coordinates of `Y` in the eigenbasis.
    c2: Vec<T>,
}

impl<T: Real> GcvSpectrum<T> {
    pub(crate) fn new(x: &Mat<T>, y: &[T]) -> Result<Self> {
        check_xy("gcv", x, y)?;
        let eig = sym_eig(&x.matmul_t(x)?.symmetrized())?;
        let c = eig.eigenvectors.t_matvec(y)?;
        Ok(Self {
            n: x.rows(),
            s: eig.eigenvalues.iter().map(|&s| s.max(T::zero())).collect(),
            c2: c.iter().map(|&v| v * v).collect(),
        })
    }

    pub(crate) fn score(&self, lambda: T) -> Result<T> {
        let nl = T::of_usize(self.n) * lambda;
        // f_i = nλ / (s_i + nλ) are the eigenvalues of I − A.
        let mut num = T::zero();
        let mut den = T::zero();
        for (&s, &c2) in self.s.iter().zip(&self.c2) {
            let f = nl / (s + nl);
            num = num + f * f * c2;
            den = den + f;
        }
        let den = den * den;
        if !(lambda > T::zero()) || !(den > T::zero()) || !den.is_finite() {
            return Err(IlrError::DegenerateGcv {
                lambda: lambda.to_f64_lossy(),
            });
        }
        Ok(num / T::of_usize(self.n) / den)
    }

    /// Grid argmin; ties go to the larger `λ`; degenerate points are skipped.
    pub(crate) fn select(&self, grid: &[T]) -> Result<(T, Vec<(T, T)>)> {
        if grid.is_empty() {
            return Err(IlrError::Selection);
        }
        let mut curve = Vec::with_capacity(grid.len());
        let mut best: Option<(T, T)> = None;
        for &lambda in grid {
            let Ok(score) = self.score(lambda) else {
                continue;
            };
            if !score.is_finite() {
                continue;
            }
            curve.push((lambda, score));
            best = match best {
                Some((bl, bs)) if bs < score || (bs == score && bl >= lambda) => Some((bl, bs)),
                _ => Some((lambda, score)),
            };
        }
        best.map(|(l, _)| (l, curve)).ok_or(IlrError::Selection)
    }
}

/// GCV-minimizing `λ` on `grid` and the evaluated curve.
pub fn select_lambda<T: Real>(x: &Mat<T>, y: &[T], grid: &[T]) -> Result<(T, Vec<(T, T)>)> {
    if grid.iter().any(|&l| !(l > T::zero())) {
        return Err(IlrError::Domain("lambda grid must be positive".into()));
    }
    GcvSpectrum::new(x, y)?.select(grid)
}

/// Per-context ridge with GCV over [`default_grid`].
pub fn re_estimate<T: Real>(x: &Mat<T>, y: &[T]) -> Result<RidgeResult<T>> {
    let (lambda, curve) = select_lambda(x, y, &default_grid())?;
    Ok(RidgeResult {
        w_hat: ridge(x, y, lambda)?,
        lambda,
        gcv_curve: Some(curve),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{inv_spd, norm2, RngStream};

    fn random(r: usize, c: usize, seed: u64) -> Mat<f64> {
        let mut rng = RngStream::new(seed, 0);
        Mat::from_fn(r, c, |_, _| rng.standard_normal())
    }

    fn rvec(len: usize, seed: u64) -> Vec<f64> {
        RngStream::new(seed, 1).normal_vec(len)
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_design_at_zero_lambda() {
        let y = vec![1.0, -2.0, 0.5];
        assert!(max_diff(&ridge(&Mat::identity(3), &y, 0.0).unwrap(), &y) < 1e-15);
    }

    #[test]
    fn singular_at_zero_lambda() {
        let x = random(2, 4, 1);
        assert!(matches!(ridge(&x, &[1.0, 2.0], 0.0), Err(IlrError::Singular { .. })));
    }

    #[test]
    fn heavy_regularization_shrinks_to_zero() {
        let x = random(5, 3, 2);
        let y = rvec(5, 2);
        let w = ridge(&x, &y, 1e12).unwrap();
        // w = (XᵀX + nλI)⁻¹XᵀY, so ‖w‖ ≤ ‖XᵀY‖ / (nλ).
        let bound = norm2(&x.t_matvec(&y).unwrap()) / (5.0 * 1e12);
        assert!(norm2(&w) <= bound && norm2(&w) < 1e-10);
    }

    #[test]
    fn matches_explicit_normal_equations() {
        for (n, d) in [(5, 3), (3, 6)] {
            let x = random(n, d, 3);
            let y = rvec(n, 3);
            let lambda = 0.37;
            let inv = inv_spd(&x.gram().add_diag(n as f64 * lambda)).unwrap();
            let expect = inv.matvec(&x.t_matvec(&y).unwrap()).unwrap();
            assert!(max_diff(&ridge(&x, &y, lambda).unwrap(), &expect) < 1e-10);
        }
    }

    #[test]
    fn continuity_in_lambda() {
        let x = random(4, 7, 4);
        let y = rvec(4, 4);
        let a = ridge(&x, &y, 0.1).unwrap();
        let b = ridge(&x, &y, 0.1 + 1e-9).unwrap();
        assert!(max_diff(&a, &b) < 1e-6);
    }

    /// `A(λ)` assembled from the primal normal equations.
    fn gcv_direct(x: &Mat<f64>, y: &[f64], lambda: f64) -> f64 {
        let n = x.rows();
        let inv = inv_spd(&x.gram().add_diag(n as f64 * lambda)).unwrap();
        let a = x.matmul(&inv).unwrap().matmul_t(x).unwrap();
        let ay = a.matvec(y).unwrap();
        let resid: f64 = y.iter().zip(&ay).map(|(u, v)| (u - v).powi(2)).sum();
        (resid / n as f64) / (n as f64 - a.trace()).powi(2)
    }

    #[test]
    fn gcv_matches_direct_formula() {
        for (n, d) in [(8, 3), (5, 9)] {
            let x = random(n, d, 5);
            let y = rvec(n, 5);
            let spec = GcvSpectrum::new(&x, &y).unwrap();
            for lambda in [1e-3, 0.05, 2.0] {
                let direct = gcv_direct(&x, &y, lambda);
                assert!((gcv_score(&x, &y, lambda).unwrap() - direct).abs() < 1e-10 * direct);
                assert!((spec.score(lambda).unwrap() - direct).abs() < 1e-10 * direct);
            }
        }
    }

    #[test]
    fn gcv_limits() {
        let x = random(6, 2, 6);
        let y = rvec(6, 6);
        let n: f64 = 6.0;
        let big = gcv_score(&x, &y, 1e10).unwrap();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        assert!((big - yy / n.powi(3)).abs() < 1e-6 * big);
        // Projection limit for full column rank.
        let pinv = inv_spd(&x.gram()).unwrap();
        let py = x.matvec(&pinv.matvec(&x.t_matvec(&y).unwrap()).unwrap()).unwrap();
        let r: f64 = y.iter().zip(&py).map(|(a, b)| (a - b).powi(2)).sum();
        let expect = (r / n) / (n - 2.0).powi(2);
        assert!((gcv_score(&x, &y, 1e-9).unwrap() - expect).abs() < 1e-6 * expect);
    }

    #[test]
    fn selection_contracts() {
        let x = random(5, 8, 7);
        let y = rvec(5, 7);
        assert_eq!(select_lambda(&x, &y, &[0.3]).unwrap().0, 0.3);
        let (s1, s2) = (gcv_score(&x, &y, 1e-4).unwrap(), gcv_score(&x, &y, 10.0).unwrap());
        let expect = if s1 < s2 { 1e-4 } else { 10.0 };
        assert_eq!(select_lambda(&x, &y, &[1e-4, 10.0]).unwrap().0, expect);
        assert!(matches!(select_lambda(&x, &y, &[]), Err(IlrError::Selection)));
        // Zero signal: flat curve, tie goes to the largest λ.
        let (l, _) = select_lambda(&x, &[0.0; 5], &[1e-3, 1.0, 1e-1]).unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn default_grid_shape() {
        let g: Vec<f64> = default_grid();
        assert_eq!(g.len(), 60);
        assert!((g[0] - 1e-8).abs() < 1e-20 && (g[59] - 1e2).abs() < 1e-10);
    }

    #[test]
    fn re_is_composition_and_fits() {
        let x = random(50, 100, 8);
        let w = rvec(100, 8);
        let mut y = x.matvec(&w).unwrap();
        y.iter_mut().enumerate().for_each(|(i, v)| *v += 0.01 * (i as f64).sin());
        let re = re_estimate(&x, &y).unwrap();
        let (l, _) = select_lambda(&x, &y, &default_grid()).unwrap();
        assert_eq!(re.lambda, l);
        assert_eq!(re.w_hat, ridge(&x, &y, l).unwrap());
        let r: Vec<f64> = x.matvec(&re.w_hat).unwrap().iter().zip(&y).map(|(a, b)| a - b).collect();
        assert!(norm2(&r) < norm2(&y));
        assert!(re.w_hat.iter().all(|v| v.is_finite()));
        let zero = re_estimate(&x, &[0.0; 50]).unwrap();
        assert!(zero.w_hat.iter().all(|&v| v == 0.0));
    }
}
