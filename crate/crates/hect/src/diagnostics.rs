//! Localizes where test runs differ from trusted runs.
//!
//! Per-sample discrepancies are the raw ingredients of the test statistic;
//! per-feature importances come from predict-time column shuffles against the
//! out-of-fold models, calibrated per feature against the same trusted-only
//! replicates the goodness-of-fit test uses.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, ClassifierSpec, CrossFitResult};
use crate::dataset::{estimate_class_prior, pool_and_label, Ensemble, LabeledDataset};
use crate::error::{HectError, Result};
use crate::seed::{stream_rng, tag};
use crate::testing::{self, GofConfig};

/// A feature whose importance exceeds its null quantile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignificantFeature {
    pub name: String,
    pub importance: f64,
    /// Fraction of null importances strictly below the observed one.
    pub null_quantile_exceeded: f64,
}

/// Where the ensembles differ: per-sample and per-feature decompositions of
/// the test statistic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// r̂(x_i) − π̂₁ per pooled sample; positive marks test-like samples.
    pub local_discrepancies: Vec<f64>,
    /// Permutation importance per feature, floored at zero.
    pub feature_importances: Vec<f64>,
    pub significant_features: Vec<SignificantFeature>,
    pub alpha: f64,
    /// Mean of squared local discrepancies; identical to the test statistic.
    pub statistic_observed: f64,
    pub variable_names: Vec<String>,
    pub seed: u64,
}

/// Deviation of each posterior estimate from the pooled class prior.
pub fn local_discrepancy(d: &LabeledDataset, r_hats: &[f64]) -> Result<Vec<f64>> {
    if r_hats.len() != d.n_samples() {
        return Err(HectError::LengthMismatch(format!(
            "{} predictions for {} samples",
            r_hats.len(),
            d.n_samples()
        )));
    }
    let prior = estimate_class_prior(d);
    Ok(r_hats.iter().map(|r| r - prior).collect())
}

/// Label-aligned counterpart of the test statistic:
/// `(1/N) Σ (r̂_i − π̂)(y_i − π̂)`.
///
/// The statistic itself is blind to the prediction/label pairing (it only
/// measures spread around the prior), so shuffling a single informative
/// column merely permutes the predictions and leaves it unchanged. The
/// aligned form shares its scale — it equals the statistic for a perfect
/// classifier, is zero for any constant one — and drops exactly when a
/// shuffle severs the prediction/label link.
fn aligned_statistic(r_hats: &[f64], labels: &[u8]) -> f64 {
    let n = labels.len();
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let prior = ones as f64 / n as f64;
    let mut sum = 0.0;
    for (r, &y) in r_hats.iter().zip(labels) {
        sum += (r - prior) * (y as f64 - prior);
    }
    sum / n as f64
}

/// Importance of feature j over an existing cross-fit: the aligned-statistic
/// drop when column j is shuffled at predict time, averaged over
/// `n_shuffles` seeded shuffles and floored at zero.
fn importance_from_cross_fit(
    cf: &CrossFitResult,
    d: &LabeledDataset,
    n_shuffles: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let stat_orig = aligned_statistic(cf.predictions(), d.labels());
    let n = d.n_samples();
    let p = d.n_features();
    let mut importances = Vec::with_capacity(p);
    for j in 0..p {
        let column: Vec<f64> = (0..n).map(|i| d.row(i)[j]).collect();
        let mut drop_sum = 0.0;
        for s in 0..n_shuffles {
            let mut rng = stream_rng(seed, tag::SHUFFLE, (j * n_shuffles + s) as u64);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut preds = Vec::with_capacity(n);
            let mut row_buf = vec![0.0; p];
            for i in 0..n {
                row_buf.copy_from_slice(d.row(i));
                row_buf[j] = column[perm[i]];
                preds.push(cf.predict_row(i, &row_buf)?);
            }
            drop_sum += stat_orig - aligned_statistic(&preds, d.labels());
        }
        importances.push((drop_sum / n_shuffles as f64).max(0.0));
    }
    Ok(importances)
}

/// Predict-time permutation importance of every feature.
pub fn feature_importance(
    spec: &ClassifierSpec,
    d: &LabeledDataset,
    n_shuffles: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_shuffles == 0 {
        return Err(HectError::InvalidConfig(
            "n_shuffles must be at least 1".into(),
        ));
    }
    let folds_seed = stream_rng(seed, tag::FOLDS, 0).gen();
    let cf = classifier::cross_fit(spec, d, folds_seed)?;
    importance_from_cross_fit(&cf, d, n_shuffles, seed)
}

/// Flags features whose importance exceeds the empirical (1 − alpha)
/// quantile of their own null column.
///
/// `null_importances` holds one importance vector per trusted-only replicate.
/// The quantile is the ceil((1−alpha)·E)-th smallest null value, so the
/// flagged set only grows as alpha grows.
pub fn significant_features(
    names: &[String],
    importances: &[f64],
    null_importances: &[Vec<f64>],
    alpha: f64,
) -> Result<Vec<SignificantFeature>> {
    let p = importances.len();
    if names.len() != p {
        return Err(HectError::ShapeMismatch(format!(
            "{} names for {p} importances",
            names.len()
        )));
    }
    if null_importances.is_empty() {
        return Err(HectError::EmptyNull);
    }
    if null_importances.iter().any(|row| row.len() != p) {
        return Err(HectError::ShapeMismatch(
            "null importance rows must match the feature count".into(),
        ));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(HectError::InvalidConfig(format!("alpha {alpha} outside (0,1)")));
    }
    let e = null_importances.len();
    let q_index = (((1.0 - alpha) * e as f64).ceil() as usize).clamp(1, e);

    let mut flagged = Vec::new();
    for j in 0..p {
        let mut column: Vec<f64> = null_importances.iter().map(|row| row[j]).collect();
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite importances"));
        let threshold = column[q_index - 1];
        if importances[j] > threshold {
            let below = column.iter().filter(|&&v| v < importances[j]).count();
            flagged.push(SignificantFeature {
                name: names[j].clone(),
                importance: importances[j],
                null_quantile_exceeded: below as f64 / e as f64,
            });
        }
    }
    Ok(flagged)
}

/// Full diagnostics pass: local discrepancies, observed importances, and
/// per-feature significance against trusted-only null replicates.
pub fn diagnose(
    trusted: &Ensemble,
    test: &Ensemble,
    spec: &ClassifierSpec,
    cfg: &GofConfig,
    n_shuffles: usize,
) -> Result<DiagnosticsReport> {
    if n_shuffles == 0 {
        return Err(HectError::InvalidConfig(
            "n_shuffles must be at least 1".into(),
        ));
    }
    let spec = spec.resolve_balance(false);
    let m = trusted.len();
    let m_e = cfg.m_e.unwrap_or(test.len());
    testing::check_gof_sizes(m, m_e, spec.folds)?;

    let d = pool_and_label(trusted, test)?;
    let folds_seed = stream_rng(cfg.seed, tag::FOLDS, 0).gen();
    let cf = classifier::cross_fit(&spec, &d, folds_seed)?;
    let local = local_discrepancy(&d, cf.predictions())?;
    let statistic_observed = testing::test_statistic(cf.predictions(), d.labels())?;
    let importances = importance_from_cross_fit(&cf, &d, n_shuffles, cfg.seed)?;

    let template = testing::trusted_template(trusted, m_e)?;
    let null_importances: Result<Vec<Vec<f64>>> = (1..=cfg.replicates as u64)
        .into_par_iter()
        .map(|e| {
            let mut rng = stream_rng(cfg.seed, tag::GOF, e);
            let m_total = template.n_samples();
            let chosen = rand::seq::index::sample(&mut rng, m_total, m_e);
            let mut labels = vec![0u8; m_total];
            for i in chosen {
                labels[i] = 1;
            }
            let shuffle_seed: u64 = rng.gen();
            let d_e = template.with_labels(labels)?;
            let cf_e = classifier::cross_fit(&spec, &d_e, folds_seed)?;
            importance_from_cross_fit(&cf_e, &d_e, n_shuffles, shuffle_seed)
        })
        .collect();

    let significant = significant_features(
        &d.variable_names().to_vec(),
        &importances,
        &null_importances?,
        cfg.alpha,
    )?;

    Ok(DiagnosticsReport {
        local_discrepancies: local,
        feature_importances: importances,
        significant_features: significant,
        alpha: cfg.alpha,
        statistic_observed,
        variable_names: d.variable_names().to_vec(),
        seed: cfg.seed,
    })
}
