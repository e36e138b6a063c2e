//! Symmetric cross entropy: `alpha * CE + beta * RCE`, where the reverse term
//! swaps prediction and target and substitutes `log_clamp` for `log 0`.
//!
//! With a one-hot target `RCE = -log_clamp * (1 - p_y)`, and the gradient with
//! respect to the logits collapses to `(alpha - beta * log_clamp * p_y) * (p - e_y)`.

use super::train::TrainConfig;
use crate::scalar::Scalar;

/// Numerically stable softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Loss and gradient with respect to the logits.
pub fn sce_loss<S: Scalar>(logits: &[S], label: usize, cfg: &TrainConfig) -> (S, Vec<S>) {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    let p: Vec<S> = exps.iter().map(|&e| e / total).collect();
    let ce = total.ln() - (logits[label] - max);
    // 1 - p_y summed from the other classes keeps precision when p_y ~ 1
    let miss: S = p.iter().enumerate().filter(|&(c, _)| c != label).map(|(_, &v)| v).sum();
    let (alpha, beta, clamp) = (S::of(cfg.sce_alpha), S::of(cfg.sce_beta), S::of(cfg.log_clamp));
    let loss = alpha * ce - beta * clamp * miss;
    let coef = alpha - beta * clamp * p[label];
    let grad = p
        .iter()
        .enumerate()
        .map(|(c, &pc)| coef * if c == label { -miss } else { pc })
        .collect();
    (loss, grad)
}
