//! Synthetic inverse-regression tasks.
//!
//! Each context draws `w ~ N(w0, U Λ Uᵀ)`, rows of `X` i.i.d. `N(0, Σ_x)` and
//! `Y = X w + ε` with `ε ~ N(0, σ_ε² I)`.

mod io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IlrError, Result};
use crate::numerics::{dot, gaussian_sample, Mat, Real, RngStream};

pub use io::{read_dataset, write_dataset, DatasetHeader, DATASET_MAGIC, DATASET_VERSION};

/// Stream id reserved for drawing the prior itself.
pub const PRIOR_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq)]
pub enum MeanMode<T> {
    Zero,
    /// Unit-norm Gaussian direction.
    RandomUnit,
    Explicit(Vec<T>),
}

impl<T> MeanMode<T> {
    pub fn label(&self) -> &'static str {
        match self {
            MeanMode::Zero => "zero",
            MeanMode::RandomUnit => "random_unit",
            MeanMode::Explicit(_) => "explicit",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EigenMode<T> {
    Identity,
    Explicit(Vec<T>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisMode {
    /// Orthonormalized Gaussian `d × r_w` matrix.
    Random,
    /// First `r_w` coordinate axes, i.e. `Σ_w = Diag(Λ, 0, …, 0)`.
    AxisAligned,
}

/// Low-rank Gaussian prior `N(w0, U Λ Uᵀ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec<T> {
    pub d: usize,
    pub rank: usize,
    pub mean: Vec<T>,
    /// `d × rank`, orthonormal columns.
    pub basis: Mat<T>,
    /// Positive, descending.
    pub eigvals: Vec<T>,
    pub mean_mode: String,
    pub basis_mode: BasisMode,
}

impl<T: Real> PriorSpec<T> {
    /// `Σ_w = U Λ Uᵀ`.
    pub fn covariance(&self) -> Mat<T> {
        let f = self.factor();
        f.matmul_t(&f).expect("factor shape")
    }

    /// `U Λ^{1/2}`, so that `Σ_w = F Fᵀ`.
    pub fn factor(&self) -> Mat<T> {
        Mat::from_fn(self.d, self.rank, |i, k| {
            self.basis[(i, k)] * self.eigvals[k].sqrt()
        })
    }

    pub fn lambda_min(&self) -> T {
        self.eigvals.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn lambda_max(&self) -> T {
        self.eigvals.iter().copied().fold(T::zero(), T::max)
    }

    pub fn trace(&self) -> T {
        self.eigvals.iter().copied().sum()
    }
}

/// Build a prior of rank `r_w` in dimension `d`.
pub fn build_prior<T: Real>(
    d: usize,
    r_w: usize,
    mean_mode: &MeanMode<T>,
    eigen_mode: &EigenMode<T>,
    basis_mode: BasisMode,
    rng: &mut RngStream,
) -> Result<PriorSpec<T>> {
    if r_w == 0 || r_w > d {
        return Err(IlrError::Domain(format!(
            "r_w must satisfy 1 <= r_w <= d (r_w = {r_w}, d = {d})"
        )));
    }
    let mut eigvals = match eigen_mode {
        EigenMode::Identity => vec![T::one(); r_w],
        EigenMode::Explicit(v) => {
            if v.len() != r_w {
                return Err(IlrError::dim(
                    "build_prior",
                    format!("{} eigenvalues for rank {r_w}", v.len()),
                ));
            }
            if let Some(bad) = v.iter().find(|x| !(**x > T::zero()) || !x.is_finite()) {
                return Err(IlrError::Domain(format!(
                    "prior eigenvalues must be positive, got {bad}"
                )));
            }
            v.clone()
        }
    };
    eigvals.sort_by(|a, b| b.partial_cmp(a).expect("finite"));

    let basis = match basis_mode {
        BasisMode::AxisAligned => Mat::from_fn(d, r_w, |i, k| if i == k { T::one() } else { T::zero() }),
        BasisMode::Random => {
            let g = Mat::from_fn(d, r_w, |_, _| rng.standard_normal::<T>());
            orthonormalize_columns(&g)?
        }
    };

    let mean = match mean_mode {
        MeanMode::Zero => vec![T::zero(); d],
        MeanMode::RandomUnit => {
            let v: Vec<T> = rng.normal_vec(d);
            let norm = crate::numerics::norm2(&v);
            v.into_iter().map(|x| x / norm).collect()
        }
        MeanMode::Explicit(v) => {
            if v.len() != d {
                return Err(IlrError::dim(
                    "build_prior",
                    format!("mean of length {} for d = {d}", v.len()),
                ));
            }
            v.clone()
        }
    };

    Ok(PriorSpec {
        d,
        rank: r_w,
        mean,
        basis,
        eigvals,
        mean_mode: mean_mode.label().to_string(),
        basis_mode,
    })
}

/// Modified Gram–Schmidt with one re-orthogonalization pass.
pub fn orthonormalize_columns<T: Real>(a: &Mat<T>) -> Result<Mat<T>> {
    let (d, r) = a.shape();
    let mut q = a.clone();
    for k in 0..r {
        let mut v = q.column(k);
        for _ in 0..2 {
            for j in 0..k {
                let qj = q.column(j);
                let proj = dot(&qj, &v);
                for (vi, &qi) in v.iter_mut().zip(&qj) {
                    *vi = *vi - proj * qi;
                }
            }
        }
        let norm = crate::numerics::norm2(&v);
        if !(norm > T::epsilon() * T::of_usize(d)) {
            return Err(IlrError::Domain("columns are linearly dependent".into()));
        }
        let unit: Vec<T> = v.into_iter().map(|x| x / norm).collect();
        q.set_column(k, &unit);
    }
    Ok(q)
}

/// Diagonal input covariance with eigenvalues spaced linearly from 1 to
/// `1/kappa`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSpec<T> {
    pub d: usize,
    pub sigma_x: Mat<T>,
    /// Lower factor, `chol cholᵀ = Σ_x`.
    pub chol: Mat<T>,
    pub kappa: T,
}

impl<T: Real> InputSpec<T> {
    pub fn eigenvalues(&self) -> Vec<T> {
        self.sigma_x.diag()
    }

    pub fn lambda_max(&self) -> T {
        self.eigenvalues().into_iter().fold(T::zero(), T::max)
    }

    pub fn lambda_min(&self) -> T {
        self.eigenvalues().into_iter().fold(T::infinity(), T::min)
    }
}

pub fn build_input_cov<T: Real>(d: usize, kappa: T) -> Result<InputSpec<T>> {
    if d == 0 {
        return Err(IlrError::Domain("d must be positive".into()));
    }
    if !(kappa >= T::one()) || !kappa.is_finite() {
        return Err(IlrError::Domain(format!("kappa must be >= 1, got {kappa}")));
    }
    if d == 1 && kappa != T::one() {
        return Err(IlrError::Domain("d = 1 admits only kappa = 1".into()));
    }
    let lo = T::one() / kappa;
    let eig: Vec<T> = (0..d)
        .map(|i| {
            if i == 0 {
                T::one()
            } else if i + 1 == d {
                lo
            } else {
                let t = T::of_usize(i) / T::of_usize(d - 1);
                T::one() - t * (T::one() - lo)
            }
        })
        .collect();
    let chol = Mat::from_diag(&eig.iter().map(|x| x.sqrt()).collect::<Vec<_>>());
    Ok(InputSpec {
        d,
        sigma_x: Mat::from_diag(&eig),
        chol,
        kappa,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec<T> {
    pub sigma_eps: T,
}

impl<T: Real> NoiseSpec<T> {
    pub fn new(sigma_eps: T) -> Result<Self> {
        if !(sigma_eps >= T::zero()) || !sigma_eps.is_finite() {
            return Err(IlrError::Domain(format!(
                "sigma_eps must be finite and non-negative, got {sigma_eps}"
            )));
        }
        Ok(Self { sigma_eps })
    }
}

/// One task: `n` observations of a shared hidden `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct Context<T> {
    /// `n × d`.
    pub x: Mat<T>,
    pub y: Vec<T>,
    pub w_true: Vec<T>,
    pub id: u64,
}

impl<T: Real> Context<T> {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// `‖X w − Y‖²`.
    pub fn residual_sq(&self, w: &[T]) -> T {
        let xw = self.x.matvec(w).expect("context shape");
        xw.iter()
            .zip(&self.y)
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
    }
}

pub fn sample_context<T: Real>(
    prior: &PriorSpec<T>,
    input: &InputSpec<T>,
    noise: &NoiseSpec<T>,
    n: usize,
    rng: &mut RngStream,
) -> Context<T> {
    let d = prior.d;
    let w = gaussian_sample(&prior.mean, &prior.factor(), 1, rng).into_vec();
    let z = Mat::from_fn(n, d, |_, _| rng.standard_normal::<T>());
    let x = z.matmul_t(&input.chol).expect("input factor shape");
    let mut y = x.matvec(&w).expect("shapes");
    if noise.sigma_eps > T::zero() {
        for yi in y.iter_mut() {
            *yi = *yi + noise.sigma_eps * rng.standard_normal::<T>();
        }
    }
    Context {
        x,
        y,
        w_true: w,
        id: rng.stream_id(),
    }
}

/// Context `j` of a dataset with run seed `seed`.
pub fn sample_indexed_context<T: Real>(
    prior: &PriorSpec<T>,
    input: &InputSpec<T>,
    noise: &NoiseSpec<T>,
    n: usize,
    seed: u64,
    index: u64,
) -> Context<T> {
    let mut rng = RngStream::new(seed, index);
    sample_context(prior, input, noise, n, &mut rng)
}

/// `n_s` contexts plus the generating specification.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset<T> {
    pub prior: PriorSpec<T>,
    pub input: InputSpec<T>,
    pub noise: NoiseSpec<T>,
    pub n: usize,
    pub seed: u64,
    pub contexts: Vec<Context<T>>,
}

impl<T: Real> TaskDataset<T> {
    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn d(&self) -> usize {
        self.prior.d
    }
}

/// Context `j` is drawn from stream `(seed, j)`.
pub fn sample_dataset<T: Real>(
    prior: &PriorSpec<T>,
    input: &InputSpec<T>,
    noise: &NoiseSpec<T>,
    n: usize,
    n_s: usize,
    seed: u64,
) -> Result<TaskDataset<T>> {
    if n_s == 0 || n == 0 {
        return Err(IlrError::Domain("n and n_s must be positive".into()));
    }
    if input.d != prior.d {
        return Err(IlrError::dim(
            "sample_dataset",
            format!("prior d = {} vs input d = {}", prior.d, input.d),
        ));
    }
    let contexts = (0..n_s as u64)
        .into_par_iter()
        .map(|j| sample_indexed_context(prior, input, noise, n, seed, j))
        .collect();
    Ok(TaskDataset {
        prior: prior.clone(),
        input: input.clone(),
        noise: *noise,
        n,
        seed,
        contexts,
    })
}
