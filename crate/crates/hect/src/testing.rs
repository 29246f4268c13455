//! The squared-discrepancy test statistic and its two resampling calibrations.
//!
//! The statistic is the mean squared deviation of out-of-fold class-posterior
//! estimates from the pooled class prior: zero when the classifier carries no
//! label information, large when it separates the ensembles. Calibration is
//! by label permutation (two-sample) or by relabeling trusted-only subsets
//! (goodness of fit, exploiting m >> n).

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::classifier::{self, ClassifierSpec};
use crate::dataset::{
    estimate_class_prior, pool_and_label, Ensemble, LabeledDataset, TestMethod, TestReport,
};
use crate::error::{HectError, Result};
use crate::seed::{stream_rng, tag};

/// Mean squared deviation of the posterior estimates from the class prior.
///
/// Summation is fixed left-to-right in sample order, so the value is
/// bit-reproducible.
pub fn test_statistic(r_hats: &[f64], labels: &[u8]) -> Result<f64> {
    if r_hats.len() != labels.len() {
        return Err(HectError::LengthMismatch(format!(
            "{} predictions for {} labels",
            r_hats.len(),
            labels.len()
        )));
    }
    let n = labels.len();
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == n {
        return Err(HectError::SingleClass);
    }
    let prior = ones as f64 / n as f64;
    let mut sum = 0.0;
    for r in r_hats {
        let d = r - prior;
        sum += d * d;
    }
    Ok(sum / n as f64)
}

/// Add-one permutation p-value: `(1 + #{null >= observed}) / (len + 1)`.
///
/// Ties count toward the numerator and the value is never zero, which keeps
/// the test valid at any finite number of resamples.
pub fn p_value(observed: f64, nulls: &[f64]) -> Result<f64> {
    if nulls.is_empty() {
        return Err(HectError::EmptyNull);
    }
    let exceed = nulls.iter().filter(|&&t| t >= observed).count();
    Ok((1 + exceed) as f64 / (nulls.len() + 1) as f64)
}

/// Permutation-test settings.
#[derive(Debug, Clone)]
pub struct PermConfig {
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl PermConfig {
    pub fn new(permutations: usize, alpha: f64, seed: u64) -> Result<Self> {
        if permutations < 19 {
            return Err(HectError::InvalidConfig(format!(
                "need at least 19 permutations, got {permutations}"
            )));
        }
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(HectError::InvalidConfig(format!("alpha {alpha} outside (0,1)")));
        }
        Ok(PermConfig {
            permutations,
            alpha,
            seed,
        })
    }

    /// 1000 permutations at level 0.05.
    pub fn default_with_seed(seed: u64) -> Self {
        PermConfig {
            permutations: 1000,
            alpha: 0.05,
            seed,
        }
    }
}

/// Goodness-of-fit settings.
#[derive(Debug, Clone)]
pub struct GofConfig {
    /// Number of trusted-only null replicates.
    pub replicates: usize,
    /// Pseudo-test size per replicate; defaults to the test-ensemble size.
    pub m_e: Option<usize>,
    pub alpha: f64,
    pub seed: u64,
}

impl GofConfig {
    pub fn new(replicates: usize, m_e: Option<usize>, alpha: f64, seed: u64) -> Result<Self> {
        if replicates < 19 {
            return Err(HectError::InvalidConfig(format!(
                "need at least 19 null replicates, got {replicates}"
            )));
        }
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(HectError::InvalidConfig(format!("alpha {alpha} outside (0,1)")));
        }
        if m_e == Some(0) {
            return Err(HectError::InsufficientTrusted(
                "replicate size m_e must be at least 1".into(),
            ));
        }
        Ok(GofConfig {
            replicates,
            m_e,
            alpha,
            seed,
        })
    }

    /// 200 replicates at level 0.05, m_e = test size.
    pub fn default_with_seed(seed: u64) -> Self {
        GofConfig {
            replicates: 200,
            m_e: None,
            alpha: 0.05,
            seed,
        }
    }
}

fn fold_seed(master: u64) -> u64 {
    stream_rng(master, tag::FOLDS, 0).gen()
}

/// Two-sample permutation test of trusted vs test.
///
/// The observed statistic comes from a stratified cross-fit on the pooled
/// labeled data; each of the B replicates permutes the labels and reruns the
/// identical pipeline with the same fold keys. Replicates draw their
/// permutations from per-index streams, so results are independent of worker
/// count and schedule.
pub fn two_sample_test(
    trusted: &Ensemble,
    test: &Ensemble,
    spec: &ClassifierSpec,
    cfg: &PermConfig,
) -> Result<TestReport> {
    if cfg.permutations < 19 || !(0.0 < cfg.alpha && cfg.alpha < 1.0) {
        return Err(HectError::InvalidConfig(
            "permutation config out of range".into(),
        ));
    }
    let spec = spec.resolve_balance(false);
    let d = pool_and_label(trusted, test)?;
    let folds_seed = fold_seed(cfg.seed);

    let observed = test_statistic(
        &classifier::cross_fit_predictions(&spec, &d, folds_seed)?,
        d.labels(),
    )?;

    let nulls: Result<Vec<f64>> = (1..=cfg.permutations as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(cfg.seed, tag::PERMUTE, b);
            let mut labels = d.labels().to_vec();
            labels.shuffle(&mut rng);
            let d_b = d.with_labels(labels)?;
            test_statistic(
                &classifier::cross_fit_predictions(&spec, &d_b, folds_seed)?,
                d_b.labels(),
            )
        })
        .collect();

    TestReport::from_resampling(
        TestMethod::TwoSamplePermutation,
        observed,
        nulls?,
        cfg.alpha,
        estimate_class_prior(&d),
        cfg.seed,
        spec,
    )
}

/// One trusted-only null replicate: `m_e` trusted runs drawn without
/// replacement carry label 1, the rest label 0.
pub(crate) fn gof_null_dataset(
    trusted_pool: &LabeledDataset,
    m_e: usize,
    master_seed: u64,
    replicate: u64,
) -> Result<LabeledDataset> {
    let m = trusted_pool.n_samples();
    let mut rng = stream_rng(master_seed, tag::GOF, replicate);
    let chosen = rand::seq::index::sample(&mut rng, m, m_e);
    let mut labels = vec![0u8; m];
    for i in chosen {
        labels[i] = 1;
    }
    trusted_pool.with_labels(labels)
}

/// Labeled view of the trusted ensemble alone (labels are placeholders; the
/// caller swaps them per replicate).
pub(crate) fn trusted_template(trusted: &Ensemble, m_e: usize) -> Result<LabeledDataset> {
    let m = trusted.len();
    let mut rows = Vec::with_capacity(m * trusted.feature_count());
    let mut ids = Vec::with_capacity(m);
    for run in trusted.runs() {
        rows.extend_from_slice(run.features());
        ids.push(run.id().to_string());
    }
    let mut labels = vec![0u8; m];
    for l in labels.iter_mut().take(m_e) {
        *l = 1;
    }
    LabeledDataset::new(
        rows,
        trusted.feature_count(),
        labels,
        ids,
        trusted.variable_names().iter().cloned().collect(),
    )
}

pub(crate) fn check_gof_sizes(m: usize, m_e: usize, folds: usize) -> Result<()> {
    if m_e < 1 {
        return Err(HectError::InsufficientTrusted(
            "replicate size m_e must be at least 1".into(),
        ));
    }
    if m_e > m {
        return Err(HectError::InsufficientTrusted(format!(
            "replicate size {m_e} exceeds the {m} trusted runs"
        )));
    }
    if m - m_e < folds {
        return Err(HectError::InsufficientTrusted(format!(
            "only {} trusted runs left per replicate, need at least {folds} for folding",
            m - m_e
        )));
    }
    Ok(())
}

/// Goodness-of-fit test: the null is built entirely from trusted variability.
///
/// Each of the E replicates relabels a fresh subset of `m_e` trusted runs as
/// pseudo-test and reruns the identical cross-fit pipeline; the actual test
/// runs never enter the null.
pub fn gof_test(
    trusted: &Ensemble,
    test: &Ensemble,
    spec: &ClassifierSpec,
    cfg: &GofConfig,
) -> Result<TestReport> {
    if cfg.replicates < 19 || !(0.0 < cfg.alpha && cfg.alpha < 1.0) {
        return Err(HectError::InvalidConfig(
            "goodness-of-fit config out of range".into(),
        ));
    }
    let spec = spec.resolve_balance(false);
    let m = trusted.len();
    let m_e = cfg.m_e.unwrap_or(test.len());
    check_gof_sizes(m, m_e, spec.folds)?;

    let d = pool_and_label(trusted, test)?;
    let folds_seed = fold_seed(cfg.seed);
    let observed = test_statistic(
        &classifier::cross_fit_predictions(&spec, &d, folds_seed)?,
        d.labels(),
    )?;

    let template = trusted_template(trusted, m_e)?;
    let nulls: Result<Vec<f64>> = (1..=cfg.replicates as u64)
        .into_par_iter()
        .map(|e| {
            let d_e = gof_null_dataset(&template, m_e, cfg.seed, e)?;
            test_statistic(
                &classifier::cross_fit_predictions(&spec, &d_e, folds_seed)?,
                d_e.labels(),
            )
        })
        .collect();

    TestReport::from_resampling(
        TestMethod::GoodnessOfFit,
        observed,
        nulls?,
        cfg.alpha,
        estimate_class_prior(&d),
        cfg.seed,
        spec,
    )
}
