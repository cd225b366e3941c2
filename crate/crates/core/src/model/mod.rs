//! L-layer linear transformer mapping a context `(X, Y)` to a weight estimate.
//!
//! The token matrix `E = (X, Y)` is `n × (d+1)`. Key and query maps act on the
//! example axis (`W_K, W_Q ∈ R^{d_k × n}`), so every column of `E` is one
//! token with an `n`-dimensional embedding. Each of the first `L − 1` layers
//! adds a layer-normalized attention update; the last layer contracts the
//! processed tokens into a `(d+1)`-vector which a linear readout maps to `R^d`.

mod adam;
mod checkpoint;
mod forward;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{IlrError, Result};
use crate::numerics::{Mat, Real, RngStream};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use forward::{attention_delta, forward, grad, layernorm, loss, loss_and_grad, relative_l2, ForwardTrace};
pub use train::{train, EpochRecord, TrainConfig, TrainHistory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub n: usize,
    /// Total layer count `L`, including the inverse-regression layer.
    pub layers: usize,
    pub heads: usize,
    pub key_dim: usize,
    #[serde(default)]
    pub train_value_matrices: bool,
    pub init_std: f64,
    pub layernorm_eps: f64,
    /// Initial layer-norm gain.
    #[serde(default = "default_gamma_init")]
    pub gamma_init: f64,
}

fn default_gamma_init() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn new(d: usize, n: usize, layers: usize, key_dim: usize) -> Self {
        Self {
            d,
            n,
            layers,
            heads: 1,
            key_dim,
            train_value_matrices: false,
            init_std: 0.02,
            layernorm_eps: 1e-5,
            gamma_init: default_gamma_init(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(IlrError::Domain(format!("L must be >= 2, got {}", self.layers)));
        }
        if self.heads == 0 || self.key_dim == 0 || self.d == 0 || self.n == 0 {
            return Err(IlrError::Domain("d, n, H and d_k must be positive".into()));
        }
        if !(self.layernorm_eps > 0.0) {
            return Err(IlrError::Domain("layernorm_eps must be positive".into()));
        }
        if !(self.init_std >= 0.0) {
            return Err(IlrError::Domain("init_std must be non-negative".into()));
        }
        Ok(())
    }

    /// Trainable parameter count.
    ///
    /// `(L−1)·[H·(2 d_k n + 2 d_k [+ n²]) + 2n] + [2 d_k n + 2 d_k + (d+1) + d(d+1)]`
    pub fn param_count(&self) -> usize {
        let (d, n, dk) = (self.d, self.n, self.key_dim);
        let value = if self.train_value_matrices { n * n } else { 0 };
        let head = 2 * dk * n + 2 * dk + value;
        let attn = self.heads * head + 2 * n;
        let inverse = 2 * dk * n + 2 * dk + (d + 1) + d * (d + 1);
        (self.layers - 1) * attn + inverse
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead<T> {
    /// `d_k × n`
    pub w_k: Mat<T>,
    pub w_q: Mat<T>,
    pub b_k: Vec<T>,
    pub b_q: Vec<T>,
    /// `n × n`; `None` means the identity.
    pub w_v: Option<Mat<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayerParams<T> {
    pub heads: Vec<AttentionHead<T>>,
    /// Layer-norm gain and shift, one entry per example row.
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InverseLayerParams<T> {
    pub w_k: Mat<T>,
    pub w_q: Mat<T>,
    pub b_k: Vec<T>,
    pub b_q: Vec<T>,
    /// `(W_PX, W_PY)` stacked, length `d + 1`.
    pub w_p: Vec<T>,
    /// `d × (d+1)`.
    pub readout: Mat<T>,
}

impl<T: Real> InverseLayerParams<T> {
    pub fn w_px(&self) -> &[T] {
        &self.w_p[..self.w_p.len() - 1]
    }

    pub fn w_py(&self) -> T {
        self.w_p[self.w_p.len() - 1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub attn: Vec<AttentionLayerParams<T>>,
    pub inverse: InverseLayerParams<T>,
}

/// Gradients share the parameter layout.
pub type GradientSet<T> = ModelParams<T>;

impl<T: Real> ModelParams<T> {
    /// All-zero tensors except `W_V = I` when value matrices are trainable.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::zeros_unchecked(config))
    }

    fn zeros_unchecked(config: &ModelConfig) -> Self {
        let (d, n, dk) = (config.d, config.n, config.key_dim);
        let head = || AttentionHead {
            w_k: Mat::zeros(dk, n),
            w_q: Mat::zeros(dk, n),
            b_k: vec![T::zero(); dk],
            b_q: vec![T::zero(); dk],
            w_v: config.train_value_matrices.then(|| Mat::zeros(n, n)),
        };
        let attn = (0..config.layers - 1)
            .map(|_| AttentionLayerParams {
                heads: (0..config.heads).map(|_| head()).collect(),
                gamma: vec![T::zero(); n],
                beta: vec![T::zero(); n],
            })
            .collect();
        Self {
            config: config.clone(),
            attn,
            inverse: InverseLayerParams {
                w_k: Mat::zeros(dk, n),
                w_q: Mat::zeros(dk, n),
                b_k: vec![T::zero(); dk],
                b_q: vec![T::zero(); dk],
                w_p: vec![T::zero(); d + 1],
                readout: Mat::zeros(d, d + 1),
            },
        }
    }

    /// Same layout, every entry zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        Self::zeros_unchecked(&self.config)
    }

    /// Random initialization.
    ///
    /// Key/query weights, biases and `(W_PX, W_PY)` are i.i.d.
    /// `N(0, init_std²)`; layer-norm gain starts at `gamma_init`, shift at 0;
    /// value matrices at the identity; the readout at `[I_d | 0]`, which
    /// selects the entries paired with the `X` tokens.
    pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let std = T::lit(config.init_std);
        let mut fill = |xs: &mut [T]| {
            for x in xs {
                *x = std * rng.standard_normal::<T>();
            }
        };
        for layer in &mut p.attn {
            for h in &mut layer.heads {
                fill(h.w_k.as_mut_slice());
                fill(h.w_q.as_mut_slice());
                fill(&mut h.b_k);
                fill(&mut h.b_q);
                if let Some(v) = &mut h.w_v {
                    *v = Mat::identity(config.n);
                }
            }
            layer.gamma.iter_mut().for_each(|g| *g = T::lit(config.gamma_init));
        }
        let inv = &mut p.inverse;
        fill(inv.w_k.as_mut_slice());
        fill(inv.w_q.as_mut_slice());
        fill(&mut inv.b_k);
        fill(&mut inv.b_q);
        fill(&mut inv.w_p);
        for i in 0..config.d {
            inv.readout[(i, i)] = T::one();
        }
        Ok(p)
    }

    /// Trainable tensors in declaration order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for layer in &self.attn {
            for h in &layer.heads {
                out.push(h.w_k.as_slice());
                out.push(h.w_q.as_slice());
                out.push(&h.b_k);
                out.push(&h.b_q);
                if let Some(v) = &h.w_v {
                    out.push(v.as_slice());
                }
            }
            out.push(&layer.gamma);
            out.push(&layer.beta);
        }
        let inv = &self.inverse;
        out.push(inv.w_k.as_slice());
        out.push(inv.w_q.as_slice());
        out.push(&inv.b_k);
        out.push(&inv.b_q);
        out.push(&inv.w_p);
        out.push(inv.readout.as_slice());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for layer in &mut self.attn {
            for h in &mut layer.heads {
                out.push(h.w_k.as_mut_slice());
                out.push(h.w_q.as_mut_slice());
                out.push(&mut h.b_k);
                out.push(&mut h.b_q);
                if let Some(v) = &mut h.w_v {
                    out.push(v.as_mut_slice());
                }
            }
            out.push(&mut layer.gamma);
            out.push(&mut layer.beta);
        }
        let inv = &mut self.inverse;
        out.push(inv.w_k.as_mut_slice());
        out.push(inv.w_q.as_mut_slice());
        out.push(&mut inv.b_k);
        out.push(&mut inv.b_q);
        out.push(&mut inv.w_p);
        out.push(inv.readout.as_mut_slice());
        out
    }

    /// Names matching [`tensors`](Self::tensors).
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, layer) in self.attn.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                for t in ["W_K", "W_Q", "B_K", "B_Q"] {
                    out.push(format!("attn{}.head{h}.{t}", l + 1));
                }
                if head.w_v.is_some() {
                    out.push(format!("attn{}.head{h}.W_V", l + 1));
                }
            }
            out.push(format!("attn{}.gamma", l + 1));
            out.push(format!("attn{}.beta", l + 1));
        }
        for t in ["W_K", "W_Q", "B_K", "B_Q", "W_P", "readout"] {
            out.push(format!("inverse.{t}"));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(IlrError::dim(
                "assign_flat",
                format!("{} values for {} parameters", flat.len(), self.param_count()),
            ));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// `self += s * other`, entrywise.
    pub fn add_scaled(&mut self, s: T, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::numerics::axpy(s, b, a);
        }
    }

    pub fn scale_in_place(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = *x * s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn dot(&self, other: &Self) -> T {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .map(|(a, b)| crate::numerics::dot(a, b))
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros_unchecked(&self.config);
        let flat: Vec<U> = self.flatten().iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        out.assign_flat(&flat).expect("same layout");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_parameter_counts() {
        // (L, d_k, count) at d = 100, n = 50, H = 1.
        for (layers, dk, count) in [
            (2, 10, 12341),
            (4, 10, 14581),
            (4, 20, 18661),
            (6, 20, 22941),
            (8, 20, 27221),
            (8, 40, 43541),
            (10, 20, 31501),
            (10, 40, 51901),
        ] {
            let cfg = ModelConfig::new(100, 50, layers, dk);
            assert_eq!(cfg.param_count(), count, "L={layers} d_k={dk}");
            let p = ModelParams::<f64>::zeros(&cfg).unwrap();
            assert_eq!(p.param_count(), count);
        }
    }

    #[test]
    fn value_matrices_add_n_squared_per_head() {
        let mut cfg = ModelConfig::new(6, 4, 3, 2);
        cfg.heads = 2;
        let base = cfg.param_count();
        cfg.train_value_matrices = true;
        assert_eq!(cfg.param_count(), base + 2 * 2 * 16);
        let p = ModelParams::<f64>::init(&cfg, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(p.param_count(), cfg.param_count());
        assert_eq!(p.attn[0].heads[1].w_v.as_ref().unwrap(), &Mat::identity(4));
    }

    #[test]
    fn flatten_round_trip_and_names() {
        let cfg = ModelConfig::new(5, 3, 3, 2);
        let p = ModelParams::<f64>::init(&cfg, &mut RngStream::new(1, 0)).unwrap();
        let mut q = p.zeros_like();
        q.assign_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.tensor_names().len(), p.tensors().len());
        assert!(q.assign_flat(&[0.0]).is_err());
    }

    #[test]
    fn rejects_single_layer() {
        let cfg = ModelConfig::new(5, 3, 1, 2);
        assert!(ModelParams::<f64>::zeros(&cfg).is_err());
    }
}
