use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::forward::{batch_pass, forward, relative_l2};
use super::ModelParams;
use crate::error::{IlrError, Result};
use crate::numerics::{Real, RngStream};
use crate::taskgen::Context;

/// Stream id reserved for minibatch shuffling.
const SHUFFLE_STREAM: u64 = u64::MAX - 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Multiplier applied every `epochs / 4` epochs.
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            adam: AdamConfig::default(),
            lr_decay: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate used during epoch `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let every = (self.epochs / 4).max(1);
        self.lr * self.lr_decay.powi(((epoch - 1) / every) as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean `‖X ŵ − Y‖²` over the training set, each context counted at the
    /// parameters in effect when its minibatch was processed. Epoch 0 is the
    /// initialization.
    pub train_loss: f64,
    /// Mean `‖X ŵ − Y‖ / ‖Y‖` on the validation set after the epoch.
    pub valid_rel_l2: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }
}

fn mean_rel_l2<T: Real>(params: &ModelParams<T>, set: &[Context<T>]) -> Result<f64> {
    let errs: Vec<f64> = set
        .par_iter()
        .map(|c| forward(params, &c.x, &c.y).map(|w| relative_l2(c, &w).to_f64_lossy()))
        .collect::<Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

fn mean_loss<T: Real>(params: &ModelParams<T>, set: &[Context<T>]) -> Result<Vec<f64>> {
    set.par_iter()
        .map(|c| forward(params, &c.x, &c.y).map(|w| c.residual_sq(&w).to_f64_lossy()))
        .collect()
}

fn diverged(epoch: usize) -> impl Fn(IlrError) -> IlrError {
    move |e| match e {
        IlrError::Overflow { .. } | IlrError::NonFinite(_) => IlrError::Diverged { epoch },
        other => other,
    }
}

/// Minibatch Adam on the mean squared residual.
///
/// Returns the parameters with the lowest validation error over epochs
/// `0..=epochs` (ties keep the earlier epoch) together with the history.
pub fn train<T: Real>(
    init: ModelParams<T>,
    train_set: &[Context<T>],
    valid_set: &[Context<T>],
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, TrainHistory)> {
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(IlrError::SampleSize {
            needed: 1,
            got: train_set.len().min(valid_set.len()),
        });
    }
    if cfg.batch_size == 0 {
        return Err(IlrError::Domain("batch_size must be positive".into()));
    }
    let n_train = train_set.len();
    let mut params = init;
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut rng = RngStream::new(cfg.seed, SHUFFLE_STREAM);

    let init_losses = mean_loss(&params, train_set).map_err(diverged(0))?;
    let mut history = TrainHistory::default();
    let mut best = params.clone();
    let mut best_valid = mean_rel_l2(&params, valid_set).map_err(diverged(0))?;
    history.records.push(EpochRecord {
        epoch: 0,
        train_loss: init_losses.iter().sum::<f64>() / n_train as f64,
        valid_rel_l2: best_valid,
        lr: 0.0,
    });

    let mut order: Vec<usize> = (0..n_train).collect();
    let mut losses = vec![0.0f64; n_train];
    let mut batch: Vec<&Context<T>> = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        rng.shuffle(&mut order);
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| &train_set[i]));
            let (batch_losses, grad) = batch_pass(&params, &batch).map_err(diverged(epoch))?;
            if !grad.is_finite() {
                return Err(IlrError::Diverged { epoch });
            }
            for (&i, l) in idx.iter().zip(batch_losses) {
                losses[i] = l.to_f64_lossy();
            }
            adam.step(&mut params, &grad, lr);
        }
        let train_loss = losses.iter().sum::<f64>() / n_train as f64;
        if !train_loss.is_finite() || !params.is_finite() {
            return Err(IlrError::Diverged { epoch });
        }
        let valid = mean_rel_l2(&params, valid_set).map_err(diverged(epoch))?;
        if valid < best_valid {
            best_valid = valid;
            best = params.clone();
            history.best_epoch = epoch;
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            valid_rel_l2: valid,
            lr,
        });
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::taskgen::{build_input_cov, build_prior, sample_dataset, BasisMode, EigenMode, MeanMode, NoiseSpec, PRIOR_STREAM};

    fn data(n_s: usize, seed: u64) -> Vec<Context<f64>> {
        let prior = build_prior(
            6,
            2,
            &MeanMode::Zero,
            &EigenMode::Identity,
            BasisMode::Random,
            &mut RngStream::new(0, PRIOR_STREAM),
        )
        .unwrap();
        let input = build_input_cov(6, 1.0).unwrap();
        sample_dataset(&prior, &input, &NoiseSpec::new(0.0).unwrap(), 4, n_s, seed)
            .unwrap()
            .contexts
    }

    fn model() -> ModelParams<f64> {
        let mut cfg = ModelConfig::new(6, 4, 2, 3);
        cfg.init_std = 0.1;
        ModelParams::init(&cfg, &mut RngStream::new(3, 0)).unwrap()
    }

    #[test]
    fn schedule_halves_each_quarter() {
        let cfg = TrainConfig {
            epochs: 8,
            lr: 1.0,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (1..=8).map(|e| cfg.lr_at(e)).collect();
        assert_eq!(lrs, vec![1.0, 1.0, 0.5, 0.5, 0.25, 0.25, 0.125, 0.125]);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters_and_flat_history() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 5,
            lr: 0.0,
            ..TrainConfig::default()
        };
        let p0 = model();
        let (p, hist) = train(p0.clone(), &data(23, 1), &data(7, 2), &cfg).unwrap();
        assert_eq!(p, p0);
        assert_eq!(hist.records.len(), 4);
        assert_eq!(hist.best_epoch, 0);
        for r in &hist.records {
            assert!((r.train_loss - hist.records[0].train_loss).abs() <= 1e-12 * r.train_loss);
            assert_eq!(r.valid_rel_l2, hist.records[0].valid_rel_l2);
        }
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 16,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let (tr, va) = (data(128, 1), data(32, 2));
        let (p1, h1) = train(model(), &tr, &va, &cfg).unwrap();
        let (p2, h2) = train(model(), &tr, &va, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
        let first = h1.records[0].train_loss;
        let last = h1.records.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        assert!(h1.best().unwrap().valid_rel_l2 <= h1.records[0].valid_rel_l2);
    }

    #[test]
    fn huge_step_reports_divergence() {
        let mut p = model();
        p.inverse.w_k.as_mut_slice().iter_mut().for_each(|w| *w = 1e200);
        p.inverse.w_q.as_mut_slice().iter_mut().for_each(|w| *w = 1e200);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let err = train(p, &data(16, 1), &data(4, 2), &cfg).unwrap_err();
        assert!(matches!(err, IlrError::Diverged { epoch: 0 }));
    }
}
