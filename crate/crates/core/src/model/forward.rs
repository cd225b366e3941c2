//! Forward pass, loss and hand-derived reverse-mode gradients.

use rayon::prelude::*;

use super::{AttentionHead, AttentionLayerParams, GradientSet, ModelParams};
use crate::error::{IlrError, Result};
use crate::numerics::{dot, norm2, outer, Mat, Real};
use crate::taskgen::Context;

/// `W E + b 1ᵀ`.
fn affine<T: Real>(w: &Mat<T>, b: &[T], e: &Mat<T>) -> Mat<T> {
    let mut out = w.matmul(e).expect("weight shape");
    for (i, &bi) in b.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|x| *x = *x + bi);
    }
    out
}

fn row_sums<T: Real>(m: &Mat<T>) -> Vec<T> {
    (0..m.rows()).map(|i| m.row(i).iter().copied().sum()).collect()
}

fn add_into<T: Real>(acc: &mut Mat<T>, m: &Mat<T>) {
    acc.add_scaled(T::one(), m).expect("same shape");
}

fn tokens<T: Real>(x: &Mat<T>, y: &[T]) -> Mat<T> {
    let (n, d) = x.shape();
    Mat::from_fn(n, d + 1, |i, j| if j < d { x[(i, j)] } else { y[i] })
}

struct HeadTrace<T> {
    k: Mat<T>,
    q: Mat<T>,
    /// `W_V E` (or `E`).
    f: Mat<T>,
    /// `F Kᵀ`, `n × d_k`.
    p: Mat<T>,
}

fn head_forward<T: Real>(h: &AttentionHead<T>, e: &Mat<T>) -> (Mat<T>, HeadTrace<T>) {
    let k = affine(&h.w_k, &h.b_k, e);
    let q = affine(&h.w_q, &h.b_q, e);
    let f = match &h.w_v {
        Some(v) => v.matmul(e).expect("value shape"),
        None => e.clone(),
    };
    let p = f.matmul_t(&k).expect("shapes");
    let delta = p.matmul(&q).expect("shapes");
    (delta, HeadTrace { k, q, f, p })
}

/// Summed attention update `Σ_h W_V E (W_K E + B_K)ᵀ (W_Q E + B_Q)` for one
/// layer, before normalization.
pub fn attention_delta<T: Real>(layer: &AttentionLayerParams<T>, e: &Mat<T>) -> Mat<T> {
    let mut total = Mat::zeros(e.rows(), e.cols());
    for h in &layer.heads {
        add_into(&mut total, &head_forward(h, e).0);
    }
    total
}

/// Column statistics kept for the backward pass.
struct NormTrace<T> {
    xhat: Mat<T>,
    std: Vec<T>,
}

fn layernorm_traced<T: Real>(delta: &Mat<T>, gamma: &[T], beta: &[T], eps: T) -> (Mat<T>, NormTrace<T>) {
    let (n, m) = delta.shape();
    let nn = T::of_usize(n);
    let mut xhat = Mat::zeros(n, m);
    let mut std = vec![T::zero(); m];
    for j in 0..m {
        let mu = (0..n).map(|i| delta[(i, j)]).sum::<T>() / nn;
        let var = (0..n).map(|i| (delta[(i, j)] - mu).powi(2)).sum::<T>() / nn;
        let s = var.sqrt();
        std[j] = s;
        let t = s + eps;
        for i in 0..n {
            xhat[(i, j)] = (delta[(i, j)] - mu) / t;
        }
    }
    let out = Mat::from_fn(n, m, |i, j| gamma[i] * xhat[(i, j)] + beta[i]);
    (out, NormTrace { xhat, std })
}

/// Normalize each token (column) over its `n` entries, then apply the
/// per-row gain and shift. `eps` is added to the standard deviation.
pub fn layernorm<T: Real>(delta: &Mat<T>, gamma: &[T], beta: &[T], eps: T) -> Mat<T> {
    layernorm_traced(delta, gamma, beta, eps).0
}

struct LayerTrace<T> {
    e: Mat<T>,
    heads: Vec<HeadTrace<T>>,
    norm: NormTrace<T>,
}

/// Intermediate values of one forward pass.
pub struct ForwardTrace<T> {
    layers: Vec<LayerTrace<T>>,
    e_final: Mat<T>,
    k: Mat<T>,
    q: Mat<T>,
    qp: Vec<T>,
    v: Vec<T>,
    pub w_hat: Vec<T>,
}

impl<T: Real> ForwardTrace<T> {
    /// Token matrix entering attention layer `l` (`0 ≤ l ≤ L−1`); index
    /// `L−1` is the input of the inverse layer.
    pub fn tokens(&self, l: usize) -> &Mat<T> {
        if l < self.layers.len() {
            &self.layers[l].e
        } else {
            &self.e_final
        }
    }
}

fn forward_traced<T: Real>(params: &ModelParams<T>, x: &Mat<T>, y: &[T]) -> Result<ForwardTrace<T>> {
    let cfg = &params.config;
    if x.shape() != (cfg.n, cfg.d) || y.len() != cfg.n {
        return Err(IlrError::dim(
            "forward",
            format!("context {:?}/{} for model n={} d={}", x.shape(), y.len(), cfg.n, cfg.d),
        ));
    }
    let eps = T::lit(cfg.layernorm_eps);
    let mut e = tokens(x, y);
    let mut layers = Vec::with_capacity(params.attn.len());
    for (l, layer) in params.attn.iter().enumerate() {
        let mut delta = Mat::zeros(e.rows(), e.cols());
        let mut heads = Vec::with_capacity(layer.heads.len());
        for h in &layer.heads {
            let (dh, tr) = head_forward(h, &e);
            add_into(&mut delta, &dh);
            heads.push(tr);
        }
        let (z, norm) = layernorm_traced(&delta, &layer.gamma, &layer.beta, eps);
        let next = e.add(&z).expect("same shape");
        if !next.is_finite() || !delta.is_finite() {
            return Err(IlrError::Overflow { layer: l + 1 });
        }
        layers.push(LayerTrace { e, heads, norm });
        e = next;
    }
    let inv = &params.inverse;
    let k = affine(&inv.w_k, &inv.b_k, &e);
    let q = affine(&inv.w_q, &inv.b_q, &e);
    let qp = q.matvec(&inv.w_p).expect("projection shape");
    let v = k.t_matvec(&qp).expect("shapes");
    let w_hat = inv.readout.matvec(&v).expect("readout shape");
    if !w_hat.iter().all(|x| x.is_finite()) {
        return Err(IlrError::Overflow { layer: cfg.layers });
    }
    Ok(ForwardTrace {
        layers,
        e_final: e,
        k,
        q,
        qp,
        v,
        w_hat,
    })
}

/// Estimate `ŵ ∈ R^d` for one context.
pub fn forward<T: Real>(params: &ModelParams<T>, x: &Mat<T>, y: &[T]) -> Result<Vec<T>> {
    Ok(forward_traced(params, x, y)?.w_hat)
}

/// `‖X ŵ − Y‖ / ‖Y‖`.
pub fn relative_l2<T: Real>(ctx: &Context<T>, w_hat: &[T]) -> T {
    ctx.residual_sq(w_hat).sqrt() / norm2(&ctx.y)
}

/// Mean squared residual `‖X ŵ − Y‖²` over the contexts.
///
/// Per-context losses are computed in parallel and summed in index order, so
/// the result does not depend on the thread count.
pub fn loss<T: Real>(params: &ModelParams<T>, contexts: &[Context<T>]) -> Result<T> {
    if contexts.is_empty() {
        return Err(IlrError::SampleSize { needed: 1, got: 0 });
    }
    let losses: Vec<T> = contexts
        .par_iter()
        .map(|c| forward(params, &c.x, &c.y).map(|w| c.residual_sq(&w)))
        .collect::<Result<_>>()?;
    Ok(losses.into_iter().sum::<T>() / T::of_usize(contexts.len()))
}

/// Column layer-norm backward: `g` is the gradient w.r.t. the normalized
/// value `x̂`, returns the gradient w.r.t. the pre-norm input.
fn layernorm_backward<T: Real>(g: &Mat<T>, norm: &NormTrace<T>, eps: T) -> Mat<T> {
    let (n, m) = g.shape();
    let nn = T::of_usize(n);
    let mut out = Mat::zeros(n, m);
    for j in 0..m {
        let s = norm.std[j];
        let t = s + eps;
        let gmean = (0..n).map(|i| g[(i, j)]).sum::<T>() / nn;
        // a_i = x̂_i t
        let ga = (0..n).map(|i| g[(i, j)] * norm.xhat[(i, j)] * t).sum::<T>();
        let coef = if s > T::zero() { ga / (t * t * nn * s) } else { T::zero() };
        for i in 0..n {
            let a = norm.xhat[(i, j)] * t;
            out[(i, j)] = (g[(i, j)] - gmean) / t - coef * a;
        }
    }
    out
}

/// Gradient of `‖X ŵ − Y‖²` for one context, accumulated into `acc`.
/// Returns the context loss.
fn accumulate_grad<T: Real>(params: &ModelParams<T>, ctx: &Context<T>, acc: &mut GradientSet<T>) -> Result<T> {
    let tr = forward_traced(params, &ctx.x, &ctx.y)?;
    let resid: Vec<T> = ctx
        .x
        .matvec(&tr.w_hat)?
        .iter()
        .zip(&ctx.y)
        .map(|(&a, &b)| a - b)
        .collect();
    let loss = dot(&resid, &resid);
    let two = T::lit(2.0);
    let g_w: Vec<T> = ctx.x.t_matvec(&resid)?.into_iter().map(|v| two * v).collect();

    let inv = &params.inverse;
    let ginv = &mut acc.inverse;
    // ŵ = R v
    add_into(&mut ginv.readout, &outer(&g_w, &tr.v));
    let g_v = inv.readout.t_matvec(&g_w)?;
    // v = Kᵀ (Q p)
    let g_k = outer(&tr.qp, &g_v);
    let g_qp = tr.k.matvec(&g_v)?;
    let g_q = outer(&g_qp, &inv.w_p);
    crate::numerics::axpy(T::one(), &tr.q.t_matvec(&g_qp)?, &mut ginv.w_p);
    let e = &tr.e_final;
    add_into(&mut ginv.w_k, &g_k.matmul_t(e)?);
    add_into(&mut ginv.w_q, &g_q.matmul_t(e)?);
    crate::numerics::axpy(T::one(), &row_sums(&g_k), &mut ginv.b_k);
    crate::numerics::axpy(T::one(), &row_sums(&g_q), &mut ginv.b_q);
    let mut g_e = inv.w_k.t_matmul(&g_k)?;
    add_into(&mut g_e, &inv.w_q.t_matmul(&g_q)?);

    let eps = T::lit(params.config.layernorm_eps);
    for (l, lt) in tr.layers.iter().enumerate().rev() {
        let layer = &params.attn[l];
        let gl = &mut acc.attn[l];
        // E' = E + γ ⊙ x̂ + β
        let (n, m) = g_e.shape();
        let mut g_xhat = Mat::zeros(n, m);
        for i in 0..n {
            let row = g_e.row(i);
            gl.beta[i] = gl.beta[i] + row.iter().copied().sum::<T>();
            gl.gamma[i] = gl.gamma[i] + dot(row, lt.norm.xhat.row(i));
            let gi = layer.gamma[i];
            g_xhat.row_mut(i).iter_mut().zip(row).for_each(|(o, &g)| *o = g * gi);
        }
        let g_delta = layernorm_backward(&g_xhat, &lt.norm, eps);
        let mut g_prev = g_e;
        for ((h, ht), gh) in layer.heads.iter().zip(&lt.heads).zip(gl.heads.iter_mut()) {
            // Δ = P Q, P = F Kᵀ
            let g_p = g_delta.matmul_t(&ht.q)?;
            let g_q = ht.p.t_matmul(&g_delta)?;
            let g_f = g_p.matmul(&ht.k)?;
            let g_k = g_p.t_matmul(&ht.f)?;
            match (&h.w_v, &mut gh.w_v) {
                (Some(wv), Some(gv)) => {
                    add_into(gv, &g_f.matmul_t(&lt.e)?);
                    add_into(&mut g_prev, &wv.t_matmul(&g_f)?);
                }
                _ => add_into(&mut g_prev, &g_f),
            }
            add_into(&mut gh.w_k, &g_k.matmul_t(&lt.e)?);
            add_into(&mut gh.w_q, &g_q.matmul_t(&lt.e)?);
            crate::numerics::axpy(T::one(), &row_sums(&g_k), &mut gh.b_k);
            crate::numerics::axpy(T::one(), &row_sums(&g_q), &mut gh.b_q);
            add_into(&mut g_prev, &h.w_k.t_matmul(&g_k)?);
            add_into(&mut g_prev, &h.w_q.t_matmul(&g_q)?);
        }
        g_e = g_prev;
    }
    Ok(loss)
}

/// Per-context losses and the mean gradient over `batch`.
///
/// Work is split into fixed chunks whose partial gradients are summed in
/// chunk order, so results are identical for any thread count.
pub(crate) fn batch_pass<T: Real>(params: &ModelParams<T>, batch: &[&Context<T>]) -> Result<(Vec<T>, GradientSet<T>)> {
    const CHUNK: usize = 8;
    if batch.is_empty() {
        return Err(IlrError::SampleSize { needed: 1, got: 0 });
    }
    let partials: Vec<(Vec<T>, GradientSet<T>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = params.zeros_like();
            let losses = chunk
                .iter()
                .map(|c| accumulate_grad(params, c, &mut g))
                .collect::<Result<Vec<T>>>()?;
            Ok((losses, g))
        })
        .collect::<Result<_>>()?;
    let mut parts = partials.into_iter();
    let (mut losses, mut grad) = parts.next().expect("non-empty");
    for (l, g) in parts {
        losses.extend(l);
        grad.add_scaled(T::one(), &g);
    }
    grad.scale_in_place(T::one() / T::of_usize(batch.len()));
    Ok((losses, grad))
}

/// Mean loss and its gradient over `batch`.
pub fn loss_and_grad<T: Real>(params: &ModelParams<T>, batch: &[Context<T>]) -> Result<(T, GradientSet<T>)> {
    let refs: Vec<&Context<T>> = batch.iter().collect();
    let (losses, grad) = batch_pass(params, &refs)?;
    let n = T::of_usize(losses.len());
    Ok((losses.into_iter().sum::<T>() / n, grad))
}

pub fn grad<T: Real>(params: &ModelParams<T>, batch: &[Context<T>]) -> Result<GradientSet<T>> {
    Ok(loss_and_grad(params, batch)?.1)
}
