use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::loss::sce_loss;
use super::model::ModelParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sce_alpha: f64,
    pub sce_beta: f64,
    /// Stand-in for `log 0` in the reverse term.
    pub log_clamp: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 1, batch_size: 32, lr: 0.1, sce_alpha: 0.1, sce_beta: 1.0, log_clamp: -4.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.sce_alpha >= 0.0 && self.sce_beta >= 0.0) || self.sce_alpha + self.sce_beta == 0.0 {
            return bad("sce_alpha and sce_beta must be non-negative and not both zero");
        }
        if !(self.log_clamp < 0.0) {
            return bad("log_clamp must be negative");
        }
        Ok(())
    }
}

fn check_shape<S: Scalar>(m: &ModelParams<S>, ds: &Dataset<S>) -> Result<()> {
    if m.shape.input_dim != ds.input_dim() {
        return Err(Error::DimensionMismatch { expected: m.shape.input_dim, actual: ds.input_dim() });
    }
    if m.shape.classes < ds.classes() {
        return Err(Error::DimensionMismatch { expected: ds.classes(), actual: m.shape.classes });
    }
    Ok(())
}

/// Mini-batch SGD on the symmetric cross entropy. Batches are drawn from a
/// fresh shuffle every epoch; `start` is left untouched.
pub fn local_train<S: Scalar>(start: &ModelParams<S>, ds: &Dataset<S>, cfg: &TrainConfig) -> Result<ModelParams<S>> {
    cfg.validate()?;
    check_shape(start, ds)?;
    let mut model = start.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut grad = vec![S::zero(); model.len()];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = S::zero());
            let scale = S::one() / S::of(idx.len() as f64);
            for &i in idx {
                let (x, y) = ds.sample(i);
                let acts = model.forward_trace(x);
                let (loss, dlogits) = sce_loss(acts.last().unwrap(), y, cfg);
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, batch });
                }
                model.backward(&acts, &dlogits, scale, &mut grad);
            }
            let lr = S::of(cfg.lr);
            for (w, &g) in model.flat.iter_mut().zip(&grad) {
                *w -= lr * g;
            }
            if !model.is_finite() {
                return Err(Error::Divergence { epoch, batch });
            }
        }
    }
    Ok(model)
}

/// Mean loss over the whole dataset.
pub fn mean_loss<S: Scalar>(m: &ModelParams<S>, ds: &Dataset<S>, cfg: &TrainConfig) -> Result<f64> {
    check_shape(m, ds)?;
    let total: f64 = (0..ds.len())
        .map(|i| {
            let (x, y) = ds.sample(i);
            sce_loss(&m.forward(x), y, cfg).0.as_f64()
        })
        .sum();
    Ok(total / ds.len() as f64)
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn evaluate_accuracy<S: Scalar>(m: &ModelParams<S>, ds: &Dataset<S>) -> Result<f64> {
    check_shape(m, ds)?;
    let hits = (0..ds.len())
        .filter(|&i| {
            let (x, y) = ds.sample(i);
            m.predict(x) == y
        })
        .count();
    Ok(hits as f64 / ds.len() as f64)
}
