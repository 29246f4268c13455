//! Gradient boosting with depth-1 trees on the logistic loss.
//!
//! Each round fits one axis-aligned stump to the pseudo-residuals, takes a
//! Newton step per leaf, and keeps the round only if the training loss does
//! not increase (halving the leaf step when it would). Split ties resolve to
//! the lowest feature index and threshold, so fitting is deterministic.

use crate::dataset::LabeledDataset;
use crate::error::{HectError, Result};

use super::{clip_prob, sigmoid};

const MIN_HESSIAN: f64 = 1e-12;
const MAX_HALVINGS: u32 = 40;

#[derive(Debug, Clone)]
struct Stump {
    feature: usize,
    threshold: f64,
    /// Added to the score when `x[feature] <= threshold`.
    left_value: f64,
    right_value: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct StumpModel {
    base_score: f64,
    stumps: Vec<Stump>,
    loss_trace: Vec<f64>,
}

impl StumpModel {
    pub(crate) fn predict(&self, x: &[f64]) -> f64 {
        let mut score = self.base_score;
        for s in &self.stumps {
            score += if x[s.feature] <= s.threshold {
                s.left_value
            } else {
                s.right_value
            };
        }
        sigmoid(score)
    }

    pub(crate) fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }
}

fn weighted_logloss(scores: &[f64], labels: &[u8], weights: &[f64], total_weight: f64) -> f64 {
    let mut loss = 0.0;
    for i in 0..scores.len() {
        let p = clip_prob(sigmoid(scores[i]));
        let y = labels[i] as f64;
        loss -= weights[i] * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    }
    loss / total_weight
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    /// Sorted-order position of the last left-hand sample.
    split_pos: usize,
}

/// Best stump split by weighted least squares on the residuals.
fn best_split(
    d: &LabeledDataset,
    sorted: &[Vec<usize>],
    residuals: &[f64],
    weights: &[f64],
) -> Option<BestSplit> {
    let n = residuals.len();
    let total_wr: f64 = (0..n).map(|i| weights[i] * residuals[i]).sum();
    let total_w: f64 = weights.iter().sum();
    let base = total_wr * total_wr / total_w;

    let mut best: Option<BestSplit> = None;
    for (feature, order) in sorted.iter().enumerate() {
        let mut left_wr = 0.0;
        let mut left_w = 0.0;
        for pos in 0..n - 1 {
            let i = order[pos];
            left_wr += weights[i] * residuals[i];
            left_w += weights[i];
            let v = d.row(i)[feature];
            let v_next = d.row(order[pos + 1])[feature];
            if v == v_next {
                continue;
            }
            let right_wr = total_wr - left_wr;
            let right_w = total_w - left_w;
            if left_w < MIN_HESSIAN || right_w < MIN_HESSIAN {
                continue;
            }
            let gain = left_wr * left_wr / left_w + right_wr * right_wr / right_w - base;
            if best.as_ref().map_or(true, |b| gain > b.gain) {
                best = Some(BestSplit {
                    feature,
                    threshold: v + (v_next - v) / 2.0,
                    gain,
                    split_pos: pos,
                });
            }
        }
    }
    best.filter(|b| b.gain > 1e-15)
}

pub(crate) fn fit_stumps(
    d: &LabeledDataset,
    sample_weights: &[f64],
    n_rounds: usize,
    learning_rate: f64,
) -> Result<StumpModel> {
    let n = d.n_samples();
    let total_weight: f64 = sample_weights.iter().sum();

    let weighted_prior = {
        let wy: f64 = (0..n)
            .map(|i| sample_weights[i] * d.labels()[i] as f64)
            .sum();
        clip_prob(wy / total_weight)
    };
    let base_score = (weighted_prior / (1.0 - weighted_prior)).ln();

    // per-feature sort order, ties by sample index
    let sorted: Vec<Vec<usize>> = (0..d.n_features())
        .map(|j| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                d.row(a)[j]
                    .partial_cmp(&d.row(b)[j])
                    .expect("finite features")
                    .then(a.cmp(&b))
            });
            order
        })
        .collect();

    let mut scores = vec![base_score; n];
    let mut stumps = Vec::with_capacity(n_rounds);
    let mut loss = weighted_logloss(&scores, d.labels(), sample_weights, total_weight);
    let mut loss_trace = vec![loss];

    for _ in 0..n_rounds {
        let mut residuals = vec![0.0; n];
        let mut hessians = vec![0.0; n];
        for i in 0..n {
            let p = sigmoid(scores[i]);
            residuals[i] = d.labels()[i] as f64 - p;
            hessians[i] = p * (1.0 - p);
        }
        let split = match best_split(d, &sorted, &residuals, sample_weights) {
            Some(s) => s,
            None => break,
        };

        // Newton step per leaf
        let order = &sorted[split.feature];
        let (mut l_wr, mut l_wh, mut r_wr, mut r_wh) = (0.0, 0.0, 0.0, 0.0);
        for (pos, &i) in order.iter().enumerate() {
            let wr = sample_weights[i] * residuals[i];
            let wh = sample_weights[i] * hessians[i];
            if pos <= split.split_pos {
                l_wr += wr;
                l_wh += wh;
            } else {
                r_wr += wr;
                r_wh += wh;
            }
        }
        let mut left_value = learning_rate * l_wr / l_wh.max(MIN_HESSIAN);
        let mut right_value = learning_rate * r_wr / r_wh.max(MIN_HESSIAN);

        let is_left: Vec<bool> = (0..n)
            .map(|i| d.row(i)[split.feature] <= split.threshold)
            .collect();
        for i in 0..n {
            scores[i] += if is_left[i] { left_value } else { right_value };
        }

        // keep the loss monotone: halve the leaf step while it overshoots
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let new_loss = weighted_logloss(&scores, d.labels(), sample_weights, total_weight);
            if new_loss <= loss {
                loss = new_loss;
                accepted = true;
                break;
            }
            for i in 0..n {
                scores[i] -= 0.5 * if is_left[i] { left_value } else { right_value };
            }
            left_value *= 0.5;
            right_value *= 0.5;
        }
        if !accepted {
            for i in 0..n {
                scores[i] -= if is_left[i] { left_value } else { right_value };
            }
            break;
        }
        if !loss.is_finite() {
            return Err(HectError::NonFinite("boosting loss diverged".into()));
        }
        stumps.push(Stump {
            feature: split.feature,
            threshold: split.threshold,
            left_value,
            right_value,
        });
        loss_trace.push(loss);
    }

    Ok(StumpModel {
        base_score,
        stumps,
        loss_trace,
    })
}
