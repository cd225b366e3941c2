use serde::{Deserialize, Serialize};

use super::{GradientSet, ModelParams};
use crate::numerics::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One update with learning rate `lr`.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &GradientSet<T>, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let c1 = T::lit(1.0 - beta1.powi(self.step as i32));
        let c2 = T::lit(1.0 - beta2.powi(self.step as i32));
        let (lr, eps) = (T::lit(lr), T::lit(eps));
        let one = T::one();
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numerics::RngStream;

    fn setup() -> (ModelParams<f64>, GradientSet<f64>) {
        let cfg = ModelConfig::new(3, 2, 2, 2);
        let p = ModelParams::init(&cfg, &mut RngStream::new(0, 0)).unwrap();
        let mut g = p.zeros_like();
        let mut rng = RngStream::new(1, 0);
        let flat: Vec<f64> = rng.normal_vec(p.param_count());
        g.assign_flat(&flat).unwrap();
        (p, g)
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (p0, g) = setup();
        let mut p = p0.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &g, 1e-3);
        for ((a, b), gi) in p.flatten().iter().zip(p0.flatten()).zip(g.flatten()) {
            // m̂ = g, v̂ = g²  ⇒  Δ = −lr g / (|g| + ε)
            let expect = b - 1e-3 * gi / (gi.abs() + 1e-8);
            assert!((a - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn three_step_recurrence() {
        let (p0, g) = setup();
        let mut p = p0.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        let scales = [1.0, -0.5, 2.0];
        for s in scales {
            let mut gs = g.clone();
            gs.scale_in_place(s);
            st.step(&mut p, &gs, 0.01);
        }
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
        for ((a, p0i), gi) in p.flatten().iter().zip(p0.flatten()).zip(g.flatten()) {
            let (mut m, mut v, mut x) = (0.0, 0.0, p0i);
            for (t, s) in scales.iter().enumerate() {
                let gt = s * gi;
                m = b1 * m + (1.0 - b1) * gt;
                v = b2 * v + (1.0 - b2) * gt * gt;
                let k = (t + 1) as i32;
                x -= lr * (m / (1.0 - b1.powi(k))) / ((v / (1.0 - b2.powi(k))).sqrt() + eps);
            }
            assert!((a - x).abs() < 1e-14);
        }
        assert_eq!(st.step, 3);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (p0, g) = setup();
        let mut p = p0.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &g, 0.0);
        assert_eq!(p, p0);
    }
}
