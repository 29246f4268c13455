//! Domain types: runs, ensembles, pooled labeled data and test reports.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierSpec;
use crate::error::{HectError, Result};

/// Whether an ensemble holds accepted-baseline runs or runs under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Trusted,
    Test,
}

/// One simulation output reduced to a feature vector.
#[derive(Debug, Clone)]
pub struct Run {
    id: String,
    features: Vec<f64>,
    variable_names: Arc<[String]>,
}

impl Run {
    /// Builds a run, rejecting non-finite values and length mismatches.
    pub fn new(
        id: impl Into<String>,
        features: Vec<f64>,
        variable_names: Arc<[String]>,
    ) -> Result<Self> {
        let id = id.into();
        if features.len() != variable_names.len() {
            return Err(HectError::InvalidRun {
                id,
                reason: format!(
                    "{} features but {} variable names",
                    features.len(),
                    variable_names.len()
                ),
            });
        }
        if let Some(j) = features.iter().position(|v| !v.is_finite()) {
            return Err(HectError::InvalidRun {
                id,
                reason: format!("non-finite value in feature '{}'", variable_names[j]),
            });
        }
        Ok(Run {
            id,
            features,
            variable_names,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub(crate) fn schema(&self) -> &Arc<[String]> {
        &self.variable_names
    }
}

/// A collection of runs sharing one feature schema.
#[derive(Debug, Clone)]
pub struct Ensemble {
    runs: Vec<Run>,
    role: Role,
}

impl Ensemble {
    /// Builds an ensemble, rejecting empty input and schema disagreement.
    pub fn new(runs: Vec<Run>, role: Role) -> Result<Self> {
        let first = runs.first().ok_or(HectError::EmptyEnsemble)?;
        let schema = first.schema().clone();
        for run in &runs[1..] {
            let same = Arc::ptr_eq(run.schema(), &schema)
                || run.variable_names() == &schema[..];
            if !same {
                return Err(HectError::SchemaMismatch(format!(
                    "run '{}' does not share the ensemble schema",
                    run.id()
                )));
            }
        }
        Ok(Ensemble { runs, role })
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.runs[0].features().len()
    }

    pub fn variable_names(&self) -> &[String] {
        self.runs[0].variable_names()
    }

    pub(crate) fn schema(&self) -> &Arc<[String]> {
        self.runs[0].schema()
    }

    /// Values of feature `j` across runs, in run order.
    pub fn feature_column(&self, j: usize) -> Vec<f64> {
        self.runs.iter().map(|r| r.features()[j]).collect()
    }

    /// Short provenance string: role, shape and the id range of the runs.
    pub fn fingerprint(&self) -> String {
        format!(
            "{:?}:{}x{}:{}..{}",
            self.role,
            self.len(),
            self.feature_count(),
            self.runs[0].id(),
            self.runs[self.len() - 1].id()
        )
    }
}

/// Pooled runs with binary labels: 0 = trusted, 1 = test.
///
/// Rows are stored row-major behind an `Arc` so that label permutations (the
/// permutation test makes hundreds of them) share the feature matrix.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    rows: Arc<Vec<f64>>,
    n_features: usize,
    labels: Vec<u8>,
    ids: Arc<Vec<String>>,
    variable_names: Arc<[String]>,
}

impl LabeledDataset {
    /// Builds a dataset, validating shapes, label values, finiteness and the
    /// presence of both classes.
    pub fn new(
        rows: Vec<f64>,
        n_features: usize,
        labels: Vec<u8>,
        ids: Vec<String>,
        variable_names: Arc<[String]>,
    ) -> Result<Self> {
        if n_features == 0 || rows.len() % n_features != 0 {
            return Err(HectError::ShapeMismatch(format!(
                "{} values do not form rows of {} features",
                rows.len(),
                n_features
            )));
        }
        let n = rows.len() / n_features;
        if labels.len() != n || ids.len() != n {
            return Err(HectError::LengthMismatch(format!(
                "{} rows, {} labels, {} ids",
                n,
                labels.len(),
                ids.len()
            )));
        }
        if n_features != variable_names.len() {
            return Err(HectError::ShapeMismatch(format!(
                "{} features but {} variable names",
                n_features,
                variable_names.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(HectError::InvalidConfig("labels must be 0 or 1".into()));
        }
        if !rows.iter().all(|v| v.is_finite()) {
            return Err(HectError::NonFinite("dataset row".into()));
        }
        let ones = labels.iter().filter(|&&l| l == 1).count();
        if ones == 0 || ones == n {
            return Err(HectError::SingleClass);
        }
        Ok(LabeledDataset {
            rows: Arc::new(rows),
            n_features,
            labels,
            ids: Arc::new(ids),
            variable_names,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    /// Same rows and ids under different labels; the feature matrix is shared.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.labels.len() {
            return Err(HectError::LengthMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                self.labels.len()
            )));
        }
        let ones = labels.iter().filter(|&&l| l == 1).count();
        if ones == 0 || ones == labels.len() {
            return Err(HectError::SingleClass);
        }
        Ok(LabeledDataset {
            rows: self.rows.clone(),
            n_features: self.n_features,
            labels,
            ids: self.ids.clone(),
            variable_names: self.variable_names.clone(),
        })
    }

    /// Count of label-1 samples.
    pub fn ones(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Pools a trusted and a test ensemble into one labeled dataset:
/// trusted runs first with label 0, then test runs with label 1.
pub fn pool_and_label(trusted: &Ensemble, test: &Ensemble) -> Result<LabeledDataset> {
    if trusted.role() != Role::Trusted || test.role() != Role::Test {
        return Err(HectError::InvalidConfig(
            "pool_and_label expects a Trusted and a Test ensemble, in that order".into(),
        ));
    }
    if trusted.variable_names() != test.variable_names() {
        return Err(HectError::SchemaMismatch(
            "trusted and test ensembles do not share a variable schema".into(),
        ));
    }
    let n_features = trusted.feature_count();
    let total = trusted.len() + test.len();
    let mut rows = Vec::with_capacity(total * n_features);
    let mut labels = Vec::with_capacity(total);
    let mut ids = Vec::with_capacity(total);
    for run in trusted.runs() {
        rows.extend_from_slice(run.features());
        labels.push(0);
        ids.push(run.id().to_string());
    }
    for run in test.runs() {
        rows.extend_from_slice(run.features());
        labels.push(1);
        ids.push(run.id().to_string());
    }
    LabeledDataset::new(rows, n_features, labels, ids, trusted.schema().clone())
}

/// Fraction of label-1 samples; strictly inside (0,1) for a valid dataset.
pub fn estimate_class_prior(d: &LabeledDataset) -> f64 {
    let ones: usize = d.labels().iter().map(|&l| l as usize).sum();
    ones as f64 / d.n_samples() as f64
}

/// Test verdict at the configured level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Pass,
    Fail,
}

/// Which calibration produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestMethod {
    /// Label-permutation null on the pooled sample.
    TwoSamplePermutation,
    /// Null built from trusted-only replicates.
    GoodnessOfFit,
    /// PCA-score threshold rule; no resampled null.
    PcaBaseline,
}

/// Outcome of a consistency test: the observed statistic, its resampled null,
/// the p-value and the verdict, plus enough configuration to re-run it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub method: TestMethod,
    pub statistic_observed: f64,
    pub null_statistics: Vec<f64>,
    pub p_value: f64,
    pub alpha: f64,
    pub decision: Decision,
    pub class_prior_hat: f64,
    pub seed: u64,
    /// Resolved classifier configuration; absent for the PCA baseline.
    pub classifier: Option<ClassifierSpec>,
    /// Non-fatal configuration notes (e.g. a threshold that can never trip).
    pub warnings: Vec<String>,
}

impl TestReport {
    /// Assembles a report for a resampling method, deriving the p-value by the
    /// add-one rule and the decision from `p <= alpha`.
    pub fn from_resampling(
        method: TestMethod,
        statistic_observed: f64,
        null_statistics: Vec<f64>,
        alpha: f64,
        class_prior_hat: f64,
        seed: u64,
        classifier: ClassifierSpec,
    ) -> Result<Self> {
        if method == TestMethod::PcaBaseline {
            return Err(HectError::InvalidConfig(
                "PCA baseline reports carry no resampled null".into(),
            ));
        }
        check_unit_open(alpha, "alpha")?;
        if !(0.0 < class_prior_hat && class_prior_hat < 1.0) {
            return Err(HectError::InvalidConfig(format!(
                "class prior {class_prior_hat} outside (0,1)"
            )));
        }
        let p_value = crate::testing::p_value(statistic_observed, &null_statistics)?;
        let decision = if p_value <= alpha {
            Decision::Fail
        } else {
            Decision::Pass
        };
        Ok(TestReport {
            method,
            statistic_observed,
            null_statistics,
            p_value,
            alpha,
            decision,
            class_prior_hat,
            seed,
            classifier: Some(classifier),
            warnings: Vec::new(),
        })
    }

    /// Assembles a PCA-baseline report from a binary verdict.
    ///
    /// The rule produces no null distribution, so the p-value is an encoding
    /// of the verdict (`alpha` on Fail, 1.0 on Pass) that keeps the
    /// `decision == Fail iff p <= alpha` identity; it is not a probability.
    pub fn from_verdict(
        statistic_observed: f64,
        alpha: f64,
        decision: Decision,
        class_prior_hat: f64,
        seed: u64,
        classifier: Option<ClassifierSpec>,
        warnings: Vec<String>,
    ) -> Result<Self> {
        check_unit_open(alpha, "alpha")?;
        let p_value = match decision {
            Decision::Fail => alpha,
            Decision::Pass => 1.0,
        };
        Ok(TestReport {
            method: TestMethod::PcaBaseline,
            statistic_observed,
            null_statistics: Vec::new(),
            p_value,
            alpha,
            decision,
            class_prior_hat,
            seed,
            classifier,
            warnings,
        })
    }
}

fn check_unit_open(x: f64, what: &str) -> Result<()> {
    if !(0.0 < x && x < 1.0) {
        return Err(HectError::InvalidConfig(format!("{what} {x} outside (0,1)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn schema(names: &[&str]) -> Arc<[String]> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn ensemble(role: Role, prefix: &str, rows: &[&[f64]], names: &[&str]) -> Ensemble {
        let sch = schema(names);
        let runs = rows
            .iter()
            .enumerate()
            .map(|(i, r)| Run::new(format!("{prefix}{i}"), r.to_vec(), sch.clone()).unwrap())
            .collect();
        Ensemble::new(runs, role).unwrap()
    }

    #[test]
    fn run_rejects_non_finite_and_length_mismatch() {
        let sch = schema(&["a", "b"]);
        assert!(Run::new("r", vec![1.0, f64::NAN], sch.clone()).is_err());
        assert!(Run::new("r", vec![1.0, f64::INFINITY], sch.clone()).is_err());
        assert!(Run::new("r", vec![1.0], sch.clone()).is_err());
        assert!(Run::new("r", vec![1.0, 2.0], sch).is_ok());
    }

    #[test]
    fn ensemble_rejects_empty_and_mixed_schema() {
        assert!(matches!(
            Ensemble::new(vec![], Role::Trusted),
            Err(HectError::EmptyEnsemble)
        ));
        let a = Run::new("a", vec![1.0], schema(&["x"])).unwrap();
        let b = Run::new("b", vec![1.0], schema(&["y"])).unwrap();
        assert!(matches!(
            Ensemble::new(vec![a, b], Role::Trusted),
            Err(HectError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn pool_concatenates_with_labels() {
        let t = ensemble(Role::Trusted, "t", &[&[1.0], &[2.0]], &["x"]);
        let x = ensemble(Role::Test, "x", &[&[3.0]], &["x"]);
        let d = pool_and_label(&t, &x).unwrap();
        assert_eq!(d.labels(), &[0, 0, 1]);
        assert_eq!(d.row(2), &[3.0]);
        assert_eq!(d.ids(), &["t0", "t1", "x0"]);
    }

    #[test]
    fn pool_at_operational_scale() {
        let sch = schema(&["x"]);
        let t_runs: Vec<Run> = (0..350)
            .map(|i| Run::new(format!("t{i}"), vec![i as f64], sch.clone()).unwrap())
            .collect();
        let x_runs: Vec<Run> = (0..3)
            .map(|i| Run::new(format!("x{i}"), vec![i as f64], sch.clone()).unwrap())
            .collect();
        let t = Ensemble::new(t_runs, Role::Trusted).unwrap();
        let x = Ensemble::new(x_runs, Role::Test).unwrap();
        let d = pool_and_label(&t, &x).unwrap();
        assert_eq!(d.n_samples(), 353);
        assert_eq!(d.labels().iter().filter(|&&l| l == 0).count(), 350);
        assert_eq!(d.labels().iter().filter(|&&l| l == 1).count(), 3);
        let prior = estimate_class_prior(&d);
        assert!((prior - 3.0 / 353.0).abs() < 1e-15);
    }

    #[test]
    fn pool_rejects_reordered_schema() {
        let t = ensemble(Role::Trusted, "t", &[&[1.0, 2.0]], &["a", "b"]);
        let x = ensemble(Role::Test, "x", &[&[1.0, 2.0]], &["b", "a"]);
        assert!(matches!(
            pool_and_label(&t, &x),
            Err(HectError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn pool_checks_roles() {
        let t = ensemble(Role::Trusted, "t", &[&[1.0]], &["x"]);
        assert!(pool_and_label(&t, &t).is_err());
    }

    #[test]
    fn class_prior_examples() {
        let sch = schema(&["x"]);
        let mk = |labels: &[u8]| {
            let rows: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            let ids = (0..labels.len()).map(|i| format!("s{i}")).collect();
            LabeledDataset::new(rows, 1, labels.to_vec(), ids, sch.clone()).unwrap()
        };
        assert_eq!(estimate_class_prior(&mk(&[1, 0, 0, 1])), 0.5);
        assert_eq!(estimate_class_prior(&mk(&[0, 1])), 0.5);
    }

    #[test]
    fn dataset_requires_both_classes() {
        let sch = schema(&["x"]);
        let r = LabeledDataset::new(
            vec![1.0, 2.0],
            1,
            vec![0, 0],
            vec!["a".into(), "b".into()],
            sch,
        );
        assert!(matches!(r, Err(HectError::SingleClass)));
    }

    #[test]
    fn report_decision_tracks_p_value() {
        let spec = ClassifierSpec::constant_prior(2);
        let r = TestReport::from_resampling(
            TestMethod::TwoSamplePermutation,
            0.5,
            vec![0.1; 99],
            0.05,
            0.2,
            7,
            spec.clone(),
        )
        .unwrap();
        assert_eq!(r.p_value, 0.01);
        assert_eq!(r.decision, Decision::Fail);

        let r = TestReport::from_resampling(
            TestMethod::GoodnessOfFit,
            0.05,
            vec![0.1; 99],
            0.05,
            0.2,
            7,
            spec,
        )
        .unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.decision, Decision::Pass);
    }
}
