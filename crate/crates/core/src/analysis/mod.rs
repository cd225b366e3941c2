//! Monte-Carlo post-processing: prior recovery from estimator outputs, the
//! oracle correction matrix, risk bounds, Bayes-risk measurement, spectral
//! rank detection and log-log fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IlrError, Result};
use crate::estimators::{posterior_cov, OracleSpec};
use crate::numerics::{inv_spd, mean_and_cov, pinv, sym_eig, Mat, Real, RngStream};
use crate::taskgen::{sample_context, Context, InputSpec, NoiseSpec, PriorSpec};

/// Empirical mean and covariance of estimator outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputStats<T> {
    pub mean: Vec<T>,
    pub cov: Mat<T>,
    pub sample_count: usize,
}

fn wrap(index: usize) -> impl Fn(IlrError) -> IlrError {
    move |e| IlrError::Estimator {
        index,
        source: Box::new(e),
    }
}

/// Sample mean and covariance (divisor `n_t − 1`) of `estimator` over the
/// contexts.
pub fn output_stats<T, F>(estimator: F, contexts: &[Context<T>]) -> Result<OutputStats<T>>
where
    T: Real,
    F: Fn(&Context<T>) -> Result<Vec<T>> + Sync,
{
    if contexts.len() < 2 {
        return Err(IlrError::SampleSize {
            needed: 2,
            got: contexts.len(),
        });
    }
    let outs: Vec<Vec<T>> = contexts
        .par_iter()
        .enumerate()
        .map(|(j, c)| estimator(c).map_err(wrap(j)))
        .collect::<Result<_>>()?;
    let d = outs[0].len();
    let samples = Mat::from_vec(outs.len(), d, outs.concat())?;
    let (mean, cov) = mean_and_cov(&samples);
    Ok(OutputStats {
        mean,
        cov,
        sample_count: contexts.len(),
    })
}

fn draw_x<T: Real>(input: &InputSpec<T>, n: usize, rng: &mut RngStream) -> Mat<T> {
    let z = Mat::from_fn(n, input.d, |_, _| rng.standard_normal::<T>());
    z.matmul_t(&input.chol).expect("input factor shape")
}

/// Ordered parallel Monte-Carlo mean of a matrix-valued draw. Sample `i`
/// uses the child stream `rng.split(i)`.
fn mc_mean<T, F>(samples: usize, rng: &RngStream, draw: F) -> Result<Mat<T>>
where
    T: Real,
    F: Fn(&mut RngStream) -> Result<Mat<T>> + Sync,
{
    if samples == 0 {
        return Err(IlrError::SampleSize { needed: 1, got: 0 });
    }
    let mats: Vec<Mat<T>> = (0..samples)
        .into_par_iter()
        .map(|i| draw(&mut rng.split(i as u64)))
        .collect::<Result<_>>()?;
    let mut acc = Mat::zeros(mats[0].rows(), mats[0].cols());
    for m in &mats {
        acc.add_scaled(T::one(), m)?;
    }
    Ok(acc.scale(T::one() / T::of_usize(samples)).symmetrized())
}

/// `C = U E_X[(σ_ε² Λ⁻¹ + UᵀXᵀXU)⁻¹] Uᵀ` by Monte Carlo over `X`.
pub fn correction_c<T: Real>(
    prior: &PriorSpec<T>,
    input: &InputSpec<T>,
    n: usize,
    sigma_eps: T,
    mc_samples: usize,
    rng: &RngStream,
) -> Result<Mat<T>> {
    let s2 = sigma_eps * sigma_eps;
    let inner = mc_mean(mc_samples, rng, |r| {
        let xu = draw_x(input, n, r).matmul(&prior.basis)?;
        let mut m = xu.gram();
        for (k, &l) in prior.eigvals.iter().enumerate() {
            m[(k, k)] = m[(k, k)] + s2 / l;
        }
        inv_spd(&m.symmetrized())
    })?;
    let ui = prior.basis.matmul(&inner)?;
    Ok(ui.matmul_t(&prior.basis)?.symmetrized())
}

/// `E[(XᵀX)⁺]` by Monte Carlo over `X`.
pub fn expected_gram_pinv<T: Real>(input: &InputSpec<T>, n: usize, mc_samples: usize, rng: &RngStream) -> Result<Mat<T>> {
    mc_mean(mc_samples, rng, |r| pinv(&draw_x(input, n, r).gram().symmetrized()))
}

/// `(mean, cov + σ_ε² C)`.
pub fn recovered_prior<T: Real>(stats: &OutputStats<T>, c: &Mat<T>, sigma_eps: T) -> Result<(Vec<T>, Mat<T>)> {
    let mut cov = stats.cov.clone();
    cov.add_scaled(sigma_eps * sigma_eps, c)?;
    Ok((stats.mean.clone(), cov))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub lower: f64,
    pub upper: f64,
    pub t_used: f64,
    pub a_t: f64,
    pub b_t: f64,
    pub c_t: f64,
}

/// `t = 2 √(ln n / n)`.
pub fn default_t(n: usize) -> f64 {
    let n = n as f64;
    2.0 * (n.ln() / n).sqrt()
}

/// Two-sided bound on the oracle Bayes risk `E‖ŵ − w‖²`.
#[allow(clippy::too_many_arguments)]
pub fn ore_bounds(
    n: usize,
    r_w: usize,
    sigma_eps: f64,
    lam_min_w: f64,
    lam_max_w: f64,
    lam_min_x: f64,
    lam_max_x: f64,
    t: f64,
) -> Result<BoundPair> {
    let nf = n as f64;
    let rf = r_w as f64;
    let root = (rf / nf).sqrt();
    if !(t >= 0.0 && t < 1.0 - root) {
        return Err(IlrError::Domain(format!(
            "t = {t} outside [0, 1 - sqrt(r_w/n)) = [0, {})",
            1.0 - root
        )));
    }
    let a_t = (1.0 + root + t).powi(2);
    let b_t = (1.0 - root - t).powi(2);
    let tail = 2.0 * (-nf * t * t / 2.0).exp();
    let c_t = 1.0 - tail;
    let s2 = sigma_eps * sigma_eps;
    let lower = rf * s2 * lam_min_w * c_t / (s2 + nf * lam_min_w * lam_max_x * a_t);
    let upper = s2 * rf / (nf * lam_min_x * b_t) + rf * lam_max_w * tail;
    Ok(BoundPair {
        lower,
        upper,
        t_used: t,
        a_t,
        b_t,
        c_t,
    })
}

/// `E_{w,ε}[‖ŵ_ORE − w‖² | X] = Tr Σ_post`.
pub fn conditional_risk_ore<T: Real>(x: &Mat<T>, oracle: &OracleSpec<T>) -> Result<T> {
    Ok(posterior_cov(oracle, x)?.trace())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub estimator: String,
    pub d: usize,
    pub n: usize,
    pub r_w: usize,
    pub sigma_eps: f64,
    pub kappa: f64,
    pub trials: usize,
    /// Mean of `‖ŵ − w‖²`.
    pub mean_sq_err: f64,
    pub rmse: f64,
    /// Standard error of `mean_sq_err`.
    pub std_err: f64,
    /// Mean of `‖ŵ − w‖` and its standard error.
    pub mean_err: f64,
    pub err_std_err: f64,
    pub bound: Option<BoundPair>,
}

/// Squared errors `‖ŵ − w‖²` of `estimator` on the contexts, in order.
pub fn squared_errors<T, F>(estimator: F, contexts: &[Context<T>]) -> Result<Vec<f64>>
where
    T: Real,
    F: Fn(&Context<T>) -> Result<Vec<T>> + Sync,
{
    contexts
        .par_iter()
        .enumerate()
        .map(|(j, c)| {
            let w = estimator(c).map_err(wrap(j))?;
            Ok(w.iter()
                .zip(&c.w_true)
                .map(|(&a, &b)| (a - b).to_f64_lossy().powi(2))
                .sum::<f64>())
        })
        .collect()
}

/// Mean and standard error (`std / √m`, sample std).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Risk statistics from per-context squared errors.
pub fn risk_report(estimator: &str, sq_errs: &[f64], meta: RiskMeta) -> RiskReport {
    let (mse, se) = mean_and_se(sq_errs);
    let errs: Vec<f64> = sq_errs.iter().map(|e| e.sqrt()).collect();
    let (me, me_se) = mean_and_se(&errs);
    RiskReport {
        estimator: estimator.to_string(),
        d: meta.d,
        n: meta.n,
        r_w: meta.r_w,
        sigma_eps: meta.sigma_eps,
        kappa: meta.kappa,
        trials: sq_errs.len(),
        mean_sq_err: mse,
        rmse: mse.sqrt(),
        std_err: se,
        mean_err: me,
        err_std_err: me_se,
        bound: None,
    }
}

/// Configuration summary carried by a [`RiskReport`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskMeta {
    pub d: usize,
    pub n: usize,
    pub r_w: usize,
    pub sigma_eps: f64,
    pub kappa: f64,
}

impl RiskMeta {
    pub fn of<T: Real>(prior: &PriorSpec<T>, input: &InputSpec<T>, noise: &NoiseSpec<T>, n: usize) -> Self {
        Self {
            d: prior.d,
            n,
            r_w: prior.rank,
            sigma_eps: noise.sigma_eps.to_f64_lossy(),
            kappa: input.kappa.to_f64_lossy(),
        }
    }
}

/// Bayes risk of `estimator` on `trials` fresh contexts; trial `i` draws
/// from `rng.split(i)`.
#[allow(clippy::too_many_arguments)]
pub fn mc_bayes_risk<T, F>(
    name: &str,
    estimator: F,
    prior: &PriorSpec<T>,
    input: &InputSpec<T>,
    noise: &NoiseSpec<T>,
    n: usize,
    trials: usize,
    rng: &RngStream,
) -> Result<RiskReport>
where
    T: Real,
    F: Fn(&Context<T>) -> Result<Vec<T>> + Sync,
{
    if trials < 2 {
        return Err(IlrError::SampleSize { needed: 2, got: trials });
    }
    let contexts: Vec<Context<T>> = (0..trials)
        .into_par_iter()
        .map(|i| sample_context(prior, input, noise, n, &mut rng.split(i as u64)))
        .collect();
    let sq = squared_errors(estimator, &contexts)?;
    Ok(risk_report(name, &sq, RiskMeta::of(prior, input, noise, n)))
}

/// Index `k` (1-based) of the first eigenvalue gap with
/// `λ_k / λ_{k+1} ≥ ratio_threshold`; 0 if none.
pub fn spectrum_rank<T: Real>(cov: &Mat<T>, ratio_threshold: f64) -> Result<usize> {
    if !(ratio_threshold > 1.0) {
        return Err(IlrError::Domain(format!("ratio threshold must exceed 1, got {ratio_threshold}")));
    }
    let eig = sym_eig(&cov.symmetrized())?;
    Ok(rank_from_spectrum(&eig.eigenvalues, ratio_threshold))
}

pub fn rank_from_spectrum<T: Real>(spectrum: &[T], ratio_threshold: f64) -> usize {
    for k in 1..spectrum.len() {
        let (a, b) = (spectrum[k - 1].to_f64_lossy(), spectrum[k].to_f64_lossy());
        if a <= 0.0 {
            return 0;
        }
        if b <= 0.0 || a / b >= ratio_threshold {
            return k;
        }
    }
    0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 3 {
        return Err(IlrError::SampleSize {
            needed: 3,
            got: points.len(),
        });
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(IlrError::Domain("log-log fit needs positive coordinates".into()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = points.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(IlrError::Domain("log-log fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LogLogFit { slope, intercept, r2 })
}
