use crate::error::{IlrError, Result};
use crate::numerics::{inv_spd, solve_spd_vec, Mat, Real};
use crate::taskgen::PriorSpec;

/// True prior and noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSpec<T> {
    pub prior: PriorSpec<T>,
    pub sigma_eps: T,
}

impl<T: Real> OracleSpec<T> {
    pub fn new(prior: PriorSpec<T>, sigma_eps: T) -> Result<Self> {
        if !(sigma_eps > T::zero()) || !sigma_eps.is_finite() {
            return Err(IlrError::Domain(format!("oracle needs sigma_eps > 0, got {sigma_eps}")));
        }
        if prior.eigvals.iter().any(|&l| !(l > T::zero())) {
            return Err(IlrError::Domain("oracle prior eigenvalues must be positive".into()));
        }
        Ok(Self { prior, sigma_eps })
    }

    /// `σ_ε² Λ⁻¹ + (XU)ᵀXU`, and `XU`.
    fn precision(&self, x: &Mat<T>) -> Result<(Mat<T>, Mat<T>)> {
        if x.cols() != self.prior.d {
            return Err(IlrError::dim("oracle", format!("X {:?} for d={}", x.shape(), self.prior.d)));
        }
        let xu = x.matmul(&self.prior.basis)?;
        let s2 = self.sigma_eps * self.sigma_eps;
        let mut m = xu.gram();
        for (k, &l) in self.prior.eigvals.iter().enumerate() {
            m[(k, k)] = m[(k, k)] + s2 / l;
        }
        Ok((m.symmetrized(), xu))
    }
}

/// Posterior mean `w0 + U v̂`, `v̂ = Σ_post (XU)ᵀ(Y − X w0) / σ_ε²`.
pub fn ore_estimate<T: Real>(oracle: &OracleSpec<T>, x: &Mat<T>, y: &[T]) -> Result<Vec<T>> {
    let (m, xu) = oracle.precision(x)?;
    let xw0 = x.matvec(&oracle.prior.mean)?;
    let yc: Vec<T> = y.iter().zip(&xw0).map(|(&a, &b)| a - b).collect();
    // Σ_post/σ² = (σ²Λ⁻¹ + (XU)ᵀXU)⁻¹
    let v = solve_spd_vec(&m, &xu.t_matvec(&yc)?)?;
    let mut w = oracle.prior.basis.matvec(&v)?;
    crate::numerics::axpy(T::one(), &oracle.prior.mean, &mut w);
    Ok(w)
}

/// `Σ_post = (Λ⁻¹ + (XU)ᵀXU / σ_ε²)⁻¹` (`r_w × r_w`).
pub fn posterior_cov<T: Real>(oracle: &OracleSpec<T>, x: &Mat<T>) -> Result<Mat<T>> {
    let (m, _) = oracle.precision(x)?;
    let s2 = oracle.sigma_eps * oracle.sigma_eps;
    Ok(inv_spd(&m)?.scale(s2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{norm2, RngStream};
    use crate::taskgen::{build_prior, BasisMode, EigenMode, MeanMode, PRIOR_STREAM};

    fn hand_case() -> OracleSpec<f64> {
        let prior = PriorSpec {
            d: 2,
            rank: 1,
            mean: vec![0.0, 0.0],
            basis: Mat::from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
            eigvals: vec![1.0],
            mean_mode: "zero".into(),
            basis_mode: BasisMode::AxisAligned,
        };
        OracleSpec::new(prior, 1.0).unwrap()
    }

    #[test]
    fn one_dimensional_closed_form() {
        let o = hand_case();
        let x = Mat::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!((posterior_cov(&o, &x).unwrap()[(0, 0)] - 0.5).abs() < 1e-15);
        let w = ore_estimate(&o, &x, &[2.0]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-15 && w[1] == 0.0);
    }

    /// Full `d`-dimensional Gaussian posterior with `Σ_w + 1e-12 I`.
    fn dense_posterior_mean(o: &OracleSpec<f64>, x: &Mat<f64>, y: &[f64]) -> Vec<f64> {
        let sw = o.prior.covariance().add_diag(1e-12);
        let s2 = o.sigma_eps.powi(2);
        // w0 + Σ_w Xᵀ (X Σ_w Xᵀ + σ² I)⁻¹ (Y − X w0)
        let k = x.matmul(&sw).unwrap().matmul_t(x).unwrap().add_diag(s2);
        let yc: Vec<f64> = y.iter().zip(x.matvec(&o.prior.mean).unwrap()).map(|(a, b)| a - b).collect();
        let z = inv_spd(&k).unwrap().matvec(&yc).unwrap();
        let mut w = sw.matvec(&x.t_matvec(&z).unwrap()).unwrap();
        w.iter_mut().zip(&o.prior.mean).for_each(|(a, m)| *a += m);
        w
    }

    fn oracle(d: usize, r: usize, sigma: f64, seed: u64) -> OracleSpec<f64> {
        let prior = build_prior(
            d,
            r,
            &MeanMode::RandomUnit,
            &EigenMode::Explicit((0..r).map(|k| 1.0 / (k + 1) as f64).collect()),
            BasisMode::Random,
            &mut RngStream::new(seed, PRIOR_STREAM),
        )
        .unwrap();
        OracleSpec::new(prior, sigma).unwrap()
    }

    #[test]
    fn matches_dense_gaussian_posterior() {
        let o = oracle(8, 3, 0.3, 1);
        let mut rng = RngStream::new(2, 0);
        let x = Mat::from_fn(4, 8, |_, _| rng.standard_normal());
        let y: Vec<f64> = rng.normal_vec(4);
        let a = ore_estimate(&o, &x, &y).unwrap();
        let b = dense_posterior_mean(&o, &x, &y);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm2(&diff) < 1e-9 * norm2(&b));
    }

    #[test]
    fn vanishing_noise_recovers_truth() {
        let mut o = oracle(10, 2, 1.0, 3);
        o.sigma_eps = 1e-6;
        let mut rng = RngStream::new(4, 0);
        let x = Mat::from_fn(5, 10, |_, _| rng.standard_normal());
        let v: Vec<f64> = rng.normal_vec(2);
        let mut w = o.prior.basis.matvec(&v).unwrap();
        w.iter_mut().zip(&o.prior.mean).for_each(|(a, m)| *a += m);
        let y = x.matvec(&w).unwrap();
        let est = ore_estimate(&o, &x, &y).unwrap();
        let diff: Vec<f64> = est.iter().zip(&w).map(|(a, b)| a - b).collect();
        assert!(norm2(&diff) < 1e-4);
    }

    #[test]
    fn no_data_posterior_is_prior() {
        let o = oracle(6, 2, 0.1, 5);
        let pc = posterior_cov(&o, &Mat::zeros(3, 6)).unwrap();
        assert!((pc[(0, 0)] - 1.0).abs() < 1e-14 && (pc[(1, 1)] - 0.5).abs() < 1e-14);
        assert!(pc[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn trace_bound_and_monotonicity() {
        let o = oracle(12, 3, 0.2, 6);
        let mut rng = RngStream::new(7, 0);
        let x = Mat::from_fn(8, 12, |_, _| rng.standard_normal());
        let tr = posterior_cov(&o, &x).unwrap().trace();
        // b = λ_min((1/n)(XU)ᵀXU)
        let g = x.matmul(&o.prior.basis).unwrap().gram().scale(1.0 / 8.0);
        let b = *crate::numerics::sym_eig(&g).unwrap().eigenvalues.last().unwrap();
        assert!(tr <= 0.04 * 3.0 / (8.0 * b));
        let more = Mat::from_fn(9, 12, |i, j| if i < 8 { x[(i, j)] } else { rng.standard_normal() });
        assert!(posterior_cov(&o, &more).unwrap().trace() <= tr);
    }

    #[test]
    fn rejects_zero_noise() {
        assert!(OracleSpec::new(hand_case().prior, 0.0).is_err());
    }
}
