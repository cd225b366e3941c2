//! Symmetric eigendecomposition (cyclic Jacobi) and the spectral helpers
//! built on it: pseudoinverse and PSD square root.

use super::{Mat, Real};
use crate::error::{IlrError, Result};

const MAX_SWEEPS: usize = 100;
const OFFDIAG_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;

/// Default relative singular-value cutoff for [`pinv`].
pub const PINV_RCOND: f64 = 1e-12;

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct SpectralDecomp<T> {
    pub eigenvalues: Vec<T>,
    /// Column `k` pairs with `eigenvalues[k]`.
    pub eigenvectors: Mat<T>,
}

impl<T: Real> SpectralDecomp<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(f(λ)) Vᵀ` restricted to the first `k` pairs.
    pub fn reconstruct_with(&self, k: usize, f: impl Fn(T) -> T) -> Mat<T> {
        let d = self.dim();
        let v = &self.eigenvectors;
        let mut out = Mat::zeros(d, d);
        for idx in 0..k.min(d) {
            let w = f(self.eigenvalues[idx]);
            if w == T::zero() {
                continue;
            }
            for i in 0..d {
                let vi = v[(i, idx)] * w;
                if vi == T::zero() {
                    continue;
                }
                for j in 0..d {
                    out[(i, j)] = out[(i, j)] + vi * v[(j, idx)];
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Mat<T> {
        self.reconstruct_with(self.dim(), |l| l)
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps stop once the off-diagonal Frobenius norm drops below
/// `1e-12 ‖A‖_F`; at most 100 sweeps are attempted.
pub fn sym_eig<T: Real>(a: &Mat<T>) -> Result<SpectralDecomp<T>> {
    if !a.is_square() {
        return Err(IlrError::dim("sym_eig", format!("{:?} not square", a.shape())));
    }
    if !a.is_finite() {
        return Err(IlrError::NonFinite("sym_eig input"));
    }
    let asym = a.asymmetry();
    if asym > T::lit(SYMMETRY_TOL) {
        return Err(IlrError::Asymmetric {
            deviation: asym.to_f64_lossy(),
        });
    }
    let n = a.rows();
    let mut m = a.symmetrized();
    let mut v = Mat::identity(n);
    let tol = T::lit(OFFDIAG_TOL) * a.frobenius_norm();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&m) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&m) > tol {
        return Err(IlrError::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).expect("finite"));
    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let eigenvectors = Mat::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok(SpectralDecomp {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm<T: Real>(m: &Mat<T>) -> T {
    let n = m.rows();
    let mut s = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s = s + m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating `m[p][q]`.
fn rotate<T: Real>(m: &mut Mat<T>, v: &mut Mat<T>, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == T::zero() {
        return;
    }
    let n = m.rows();
    let app = m[(p, p)];
    let aqq = m[(q, q)];
    let two = T::lit(2.0);
    let theta = (aqq - app) / (two * apq);
    let t = {
        let s = if theta >= T::zero() { T::one() } else { -T::one() };
        s / (theta.abs() + (theta * theta + T::one()).sqrt())
    };
    let c = T::one() / (t * t + T::one()).sqrt();
    let s = t * c;

    for k in 0..n {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s * mpk + c * mqk;
    }
    m[(p, q)] = T::zero();
    m[(q, p)] = T::zero();
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Moore–Penrose pseudoinverse with relative singular-value cutoff
/// [`PINV_RCOND`].
pub fn pinv<T: Real>(a: &Mat<T>) -> Result<Mat<T>> {
    pinv_with_cutoff(a, T::lit(PINV_RCOND))
}

/// Pseudoinverse through the eigendecomposition of the smaller Gram matrix.
///
/// Symmetric square inputs are decomposed directly, so their singular values
/// are resolved to working precision. For the Gram route the singular values
/// are only resolved to `sqrt(eps · dim) σ_max`, which floors the cutoff.
pub fn pinv_with_cutoff<T: Real>(a: &Mat<T>, rcond: T) -> Result<Mat<T>> {
    if !a.is_finite() {
        return Err(IlrError::NonFinite("pinv input"));
    }
    let (r, c) = a.shape();
    if r == c && a.asymmetry() <= T::lit(1e-14) {
        let eig = sym_eig(&a.symmetrized())?;
        let smax = eig
            .eigenvalues
            .iter()
            .fold(T::zero(), |acc, &l| acc.max(l.abs()));
        let cut = rcond * smax;
        let mut out = Mat::zeros(r, r);
        let v = &eig.eigenvectors;
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            if l.abs() <= cut || l == T::zero() {
                continue;
            }
            let inv = T::one() / l;
            for i in 0..r {
                let vi = v[(i, k)] * inv;
                for j in 0..r {
                    out[(i, j)] = out[(i, j)] + vi * v[(j, k)];
                }
            }
        }
        return Ok(out);
    }

    let wide = r < c;
    let g = if wide { a.matmul_t(a)? } else { a.gram() };
    let eig = sym_eig(&g.symmetrized())?;
    let lmax = eig.eigenvalues.first().copied().unwrap_or(T::zero()).max(T::zero());
    let smax = lmax.sqrt();
    let resolution = T::lit(10.0) * (T::epsilon() * T::of_usize(g.rows())).sqrt();
    let cut = rcond.max(resolution) * smax;
    // G⁺ over the retained spectrum.
    let ginv = eig.reconstruct_with(eig.dim(), |l| {
        if l > T::zero() && l.sqrt() > cut {
            T::one() / l
        } else {
            T::zero()
        }
    });
    if wide {
        // A⁺ = Aᵀ (AAᵀ)⁺
        a.t_matmul(&ginv)
    } else {
        // A⁺ = (AᵀA)⁺ Aᵀ
        ginv.matmul_t(a)
    }
}

/// Minimum-norm least-squares solution `A⁺ b`, equal to `(AᵀA)⁺ Aᵀ b`.
///
/// Full-rank systems go through a Cholesky factorization of the smaller
/// Gram matrix; rank-deficient ones fall back to [`pinv`].
pub fn min_norm_lstsq<T: Real>(a: &Mat<T>, b: &[T]) -> Result<Vec<T>> {
    let (r, c) = a.shape();
    if b.len() != r {
        return Err(IlrError::dim("min_norm_lstsq", format!("{r} rows vs rhs {}", b.len())));
    }
    let fast = if r <= c {
        let g = a.matmul_t(a)?;
        super::solve::cholesky(&g)
            .ok()
            .filter(|l| well_conditioned(l))
            .and_then(|l| super::solve::cholesky_solve_vec(&l, b).ok())
            .and_then(|z| a.t_matvec(&z).ok())
    } else {
        let g = a.gram();
        let atb = a.t_matvec(b)?;
        super::solve::cholesky(&g)
            .ok()
            .filter(|l| well_conditioned(l))
            .and_then(|l| super::solve::cholesky_solve_vec(&l, &atb).ok())
    };
    match fast {
        Some(x) => Ok(x),
        None => pinv(a)?.matvec(b),
    }
}

fn well_conditioned<T: Real>(l: &Mat<T>) -> bool {
    let d = l.diag();
    let max = d.iter().fold(T::zero(), |a, &x| a.max(x));
    let min = d.iter().fold(T::infinity(), |a, &x| a.min(x));
    // Pivots of L are square roots of the Gram pivots.
    min > max * T::lit(1e-6)
}

/// Symmetric PSD square root `Σ λ_k^{1/2} v_k v_kᵀ` over the top `rank_hint`
/// eigenpairs (or all positive ones).
pub fn psd_sqrt<T: Real>(a: &Mat<T>, rank_hint: Option<usize>) -> Result<Mat<T>> {
    let eig = sym_eig(a)?;
    psd_sqrt_from(&eig, rank_hint)
}

pub fn psd_sqrt_from<T: Real>(eig: &SpectralDecomp<T>, rank_hint: Option<usize>) -> Result<Mat<T>> {
    let lmax = eig.eigenvalues.first().copied().unwrap_or(T::zero());
    let floor = -T::lit(1e-8) * lmax.abs().max(T::one());
    if let Some(&lmin) = eig.eigenvalues.last() {
        if lmin < floor {
            return Err(IlrError::NotPsd {
                eigenvalue: lmin.to_f64_lossy(),
            });
        }
    }
    let k = rank_hint.unwrap_or(eig.dim()).min(eig.dim());
    Ok(eig.reconstruct_with(k, |l| if l > T::zero() { l.sqrt() } else { T::zero() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn random(r: usize, c: usize, seed: u64) -> Mat<f64> {
        let mut rng = RngStream::new(seed, 0);
        Mat::from_fn(r, c, |_, _| rng.standard_normal())
    }

    fn rel(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn identity_spectrum() {
        let e = sym_eig(&Mat::<f64>::identity(3)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);
        let g = e.eigenvectors.gram();
        assert!(rel(&g, &Mat::identity(3)) < 1e-14);
    }

    #[test]
    fn diagonal_spectrum_sorted() {
        let e = sym_eig(&Mat::<f64>::from_diag(&[1.0, 4.0])).unwrap();
        assert_eq!(e.eigenvalues, vec![4.0, 1.0]);
        assert_eq!(e.eigenvectors[(1, 0)].abs(), 1.0);
        assert_eq!(e.eigenvectors[(0, 1)].abs(), 1.0);
    }

    #[test]
    fn spd_reconstruction() {
        let b = random(8, 8, 11);
        let a = b.gram().add_diag(0.1);
        let e = sym_eig(&a).unwrap();
        assert!(rel(&e.reconstruct(), &a) < 1e-10);
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let trace: f64 = e.eigenvalues.iter().sum();
        assert!((trace - a.trace()).abs() / a.trace() < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            sym_eig(&Mat::<f64>::zeros(2, 3)),
            Err(IlrError::Dimension { .. })
        ));
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(IlrError::Asymmetric { .. })));
    }

    #[test]
    fn pinv_small_cases() {
        let i4 = Mat::<f64>::identity(4);
        assert!(rel(&pinv(&i4).unwrap(), &i4) < 1e-15);
        let row = Mat::<f64>::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let p = pinv(&row).unwrap();
        assert_eq!(p.shape(), (2, 1));
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
        assert!(p[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn pinv_of_rank_deficient_gram() {
        // XᵀX with n < d: the symmetric route must truncate the null space.
        let x = random(3, 6, 5);
        let g = x.gram();
        let p = pinv(&g).unwrap();
        let gpg = g.matmul(&p).unwrap().matmul(&g).unwrap();
        assert!(rel(&gpg, &g) < 1e-9);
        let pgp = p.matmul(&g).unwrap().matmul(&p).unwrap();
        assert!(rel(&pgp, &p) < 1e-9);
    }

    #[test]
    fn min_norm_solution_matches_pinv() {
        let x = random(4, 9, 21);
        let y = vec![0.3, -1.0, 2.0, 0.5];
        let direct = pinv(&x.gram()).unwrap().matvec(&x.t_matvec(&y).unwrap()).unwrap();
        let fast = min_norm_lstsq(&x, &y).unwrap();
        for (a, b) in direct.iter().zip(&fast) {
            assert!((a - b).abs() < 1e-9);
        }
        let tall = random(9, 4, 22);
        let yt: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let d = pinv(&tall).unwrap().matvec(&yt).unwrap();
        let f = min_norm_lstsq(&tall, &yt).unwrap();
        for (a, b) in d.iter().zip(&f) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn psd_sqrt_cases() {
        let i = Mat::<f64>::identity(5);
        assert!(rel(&psd_sqrt(&i, None).unwrap(), &i) < 1e-14);
        let s = psd_sqrt(&Mat::from_diag(&[4.0, 0.0]), None).unwrap();
        assert!(rel(&s, &Mat::from_diag(&[2.0, 0.0])) < 1e-15);
        let neg = Mat::from_diag(&[1.0, -1e-3]);
        assert!(matches!(psd_sqrt(&neg, None), Err(IlrError::NotPsd { .. })));
    }
}
