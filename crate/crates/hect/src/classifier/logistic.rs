//! L2-regularized logistic regression by full-batch gradient descent.
//!
//! The objective is the weight-averaged cross-entropy plus `lambda/2 * |w|^2`
//! (the intercept is not penalized). Descent starts from zero weights with a
//! backtracking step size, so the fit is a deterministic function of the data.

use crate::dataset::LabeledDataset;
use crate::error::{HectError, Result};

use super::sigmoid;

const ARMIJO_C1: f64 = 1e-4;
const MIN_STEP: f64 = 1e-18;

/// Stable ln(1 + exp(z)).
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Regularized loss at the given parameters.
///
/// Public so external checks can probe the objective the optimizer descends.
pub fn regularized_loss(
    d: &LabeledDataset,
    sample_weights: &[f64],
    weights: &[f64],
    bias: f64,
    l2_lambda: f64,
) -> f64 {
    let total_weight: f64 = sample_weights.iter().sum();
    let mut loss = 0.0;
    for i in 0..d.n_samples() {
        let row = d.row(i);
        let mut z = bias;
        for (w, v) in weights.iter().zip(row) {
            z += w * v;
        }
        let y = d.labels()[i] as f64;
        loss += sample_weights[i] * (log1p_exp(z) - y * z);
    }
    loss /= total_weight;
    let mut penalty = 0.0;
    for w in weights {
        penalty += w * w;
    }
    loss + 0.5 * l2_lambda * penalty
}

/// Loss and its gradient with respect to (weights, bias).
///
/// Public so the analytic gradient can be compared against finite
/// differences from outside the crate.
pub fn loss_and_gradient(
    d: &LabeledDataset,
    sample_weights: &[f64],
    weights: &[f64],
    bias: f64,
    l2_lambda: f64,
) -> (f64, Vec<f64>, f64) {
    let n_features = d.n_features();
    let total_weight: f64 = sample_weights.iter().sum();
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; n_features];
    let mut grad_b = 0.0;
    for i in 0..d.n_samples() {
        let row = d.row(i);
        let mut z = bias;
        for (w, v) in weights.iter().zip(row) {
            z += w * v;
        }
        let y = d.labels()[i] as f64;
        let wi = sample_weights[i];
        loss += wi * (log1p_exp(z) - y * z);
        let resid = wi * (sigmoid(z) - y);
        grad_b += resid;
        for (g, v) in grad_w.iter_mut().zip(row) {
            *g += resid * v;
        }
    }
    loss /= total_weight;
    grad_b /= total_weight;
    let mut penalty = 0.0;
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = *g / total_weight + l2_lambda * w;
        penalty += w * w;
    }
    (loss + 0.5 * l2_lambda * penalty, grad_w, grad_b)
}

/// Fits (weights, bias) by monotone gradient descent with backtracking.
pub(crate) fn fit_logistic(
    d: &LabeledDataset,
    sample_weights: &[f64],
    l2_lambda: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let n_features = d.n_features();
    let mut weights = vec![0.0; n_features];
    let mut bias = 0.0;
    let mut step = 1.0;
    let (mut loss, mut grad_w, mut grad_b) =
        loss_and_gradient(d, sample_weights, &weights, bias, l2_lambda);

    for _ in 0..max_iters {
        if !loss.is_finite() {
            return Err(HectError::NonFinite("logistic loss diverged".into()));
        }
        let grad_norm = grad_w
            .iter()
            .chain(std::iter::once(&grad_b))
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm <= tol {
            break;
        }
        let grad_sq: f64 =
            grad_w.iter().map(|g| g * g).sum::<f64>() + grad_b * grad_b;

        // backtrack until the Armijo condition holds, then grow the step for
        // the next iteration
        loop {
            let cand_w: Vec<f64> = weights
                .iter()
                .zip(&grad_w)
                .map(|(w, g)| w - step * g)
                .collect();
            let cand_b = bias - step * grad_b;
            let cand_loss = regularized_loss(d, sample_weights, &cand_w, cand_b, l2_lambda);
            if cand_loss <= loss - ARMIJO_C1 * step * grad_sq {
                weights = cand_w;
                bias = cand_b;
                let (l, gw, gb) =
                    loss_and_gradient(d, sample_weights, &weights, bias, l2_lambda);
                loss = l;
                grad_w = gw;
                grad_b = gb;
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if step < MIN_STEP {
                return Ok((weights, bias));
            }
        }
    }
    if !loss.is_finite() || !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(HectError::NonFinite("logistic parameters diverged".into()));
    }
    Ok((weights, bias))
}
