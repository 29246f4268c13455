//! Probabilistic classifiers estimating the class posterior P(Y=1|X=x),
//! with stratified cross-fitting so every prediction is out-of-fold.

mod knn;
pub mod logistic;
mod stumps;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{HectError, Result};
use crate::seed::fold_key;

pub(crate) use knn::KnnModel;
pub(crate) use stumps::StumpModel;

/// All predictions are clipped into `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-6;

pub(crate) fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Classifier family plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassifierKind {
    /// Ignores features; predicts the training-set class prior.
    ConstantPrior,
    /// L2-regularized logistic regression fit by deterministic full-batch
    /// gradient descent from zero weights.
    LogisticRegression {
        l2_lambda: f64,
        max_iters: usize,
        tol: f64,
    },
    /// Depth-1 gradient boosting on the logistic loss.
    GradientBoostedStumps { n_rounds: usize, learning_rate: f64 },
    /// k-nearest neighbours by Euclidean distance, distance ties broken by
    /// lower sample id.
    KNearest { k: usize },
}

impl ClassifierKind {
    pub fn label(&self) -> &'static str {
        match self {
            ClassifierKind::ConstantPrior => "constant",
            ClassifierKind::LogisticRegression { .. } => "logistic",
            ClassifierKind::GradientBoostedStumps { .. } => "gbstumps",
            ClassifierKind::KNearest { .. } => "knn",
        }
    }
}

/// Whether to apply inverse-frequency sample weights during fitting.
///
/// `Auto` resolves to Off in both tests: weighted fits calibrate predictions
/// toward 1/2 while the statistic measures deviation from the pooled prior,
/// which drowns the signal once the class imbalance passes roughly 6:1. On
/// remains available for callers that want balanced fits anyway. Only the
/// logistic and stump models use weights; the constant prior and kNN ignore
/// them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BalanceMode {
    Auto,
    On,
    Off,
}

/// A classifier choice plus the cross-fitting fold count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub folds: usize,
    pub balance: BalanceMode,
}

impl ClassifierSpec {
    pub fn constant_prior(folds: usize) -> Self {
        ClassifierSpec {
            kind: ClassifierKind::ConstantPrior,
            folds,
            balance: BalanceMode::Auto,
        }
    }

    /// Logistic regression with the default hyperparameters.
    pub fn logistic(folds: usize) -> Self {
        ClassifierSpec {
            kind: ClassifierKind::LogisticRegression {
                l2_lambda: 0.1,
                max_iters: 200,
                tol: 1e-6,
            },
            folds,
            balance: BalanceMode::Auto,
        }
    }

    pub fn gb_stumps(folds: usize) -> Self {
        ClassifierSpec {
            kind: ClassifierKind::GradientBoostedStumps {
                n_rounds: 50,
                learning_rate: 0.1,
            },
            folds,
            balance: BalanceMode::Auto,
        }
    }

    pub fn knn(folds: usize, k: usize) -> Self {
        ClassifierSpec {
            kind: ClassifierKind::KNearest { k },
            folds,
            balance: BalanceMode::Auto,
        }
    }

    pub fn with_balance(mut self, balance: BalanceMode) -> Self {
        self.balance = balance;
        self
    }

    /// Replaces `Auto` with the calling method's default.
    pub fn resolve_balance(&self, default_on: bool) -> Self {
        let mut spec = self.clone();
        if spec.balance == BalanceMode::Auto {
            spec.balance = if default_on {
                BalanceMode::On
            } else {
                BalanceMode::Off
            };
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(HectError::InvalidConfig(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        match &self.kind {
            ClassifierKind::ConstantPrior => {}
            ClassifierKind::LogisticRegression {
                l2_lambda,
                max_iters,
                tol,
            } => {
                if !l2_lambda.is_finite() || *l2_lambda < 0.0 {
                    return Err(HectError::InvalidConfig(format!(
                        "l2_lambda must be finite and nonnegative, got {l2_lambda}"
                    )));
                }
                if *max_iters == 0 {
                    return Err(HectError::InvalidConfig("max_iters must be positive".into()));
                }
                if tol.is_nan() || *tol <= 0.0 {
                    return Err(HectError::InvalidConfig(format!(
                        "tol must be positive, got {tol}"
                    )));
                }
            }
            ClassifierKind::GradientBoostedStumps {
                n_rounds,
                learning_rate,
            } => {
                if *n_rounds == 0 {
                    return Err(HectError::InvalidConfig("n_rounds must be positive".into()));
                }
                if !(*learning_rate > 0.0 && learning_rate.is_finite()) {
                    return Err(HectError::InvalidConfig(format!(
                        "learning_rate must be positive, got {learning_rate}"
                    )));
                }
            }
            ClassifierKind::KNearest { k } => {
                if *k == 0 {
                    return Err(HectError::InvalidConfig("k must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// A trained classifier; `predict_proba` is deterministic and clipped.
#[derive(Debug, Clone)]
pub struct FittedClassifier {
    n_features: usize,
    model: Model,
}

#[derive(Debug, Clone)]
enum Model {
    Constant { prior: f64 },
    Logistic { weights: Vec<f64>, bias: f64 },
    Stumps(StumpModel),
    Knn(KnnModel),
}

impl FittedClassifier {
    /// Class-posterior estimate for one feature vector.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(HectError::SchemaMismatch(format!(
                "prediction input has {} features, model was trained on {}",
                x.len(),
                self.n_features
            )));
        }
        let p = match &self.model {
            Model::Constant { prior } => *prior,
            Model::Logistic { weights, bias } => {
                let mut z = *bias;
                for (w, v) in weights.iter().zip(x) {
                    z += w * v;
                }
                sigmoid(z)
            }
            Model::Stumps(m) => m.predict(x),
            Model::Knn(m) => m.predict(x),
        };
        Ok(clip_prob(p))
    }

    /// Training losses per boosting round; empty for other model kinds.
    pub fn training_loss_trace(&self) -> &[f64] {
        match &self.model {
            Model::Stumps(m) => m.loss_trace(),
            _ => &[],
        }
    }

    #[cfg(test)]
    pub(crate) fn from_logistic(weights: Vec<f64>, bias: f64) -> Self {
        FittedClassifier {
            n_features: weights.len(),
            model: Model::Logistic { weights, bias },
        }
    }

    #[cfg(test)]
    pub(crate) fn logistic_params(&self) -> Option<(&[f64], f64)> {
        match &self.model {
            Model::Logistic { weights, bias } => Some((weights, *bias)),
            _ => None,
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse-frequency sample weights, mean 1 across the dataset.
fn sample_weights(labels: &[u8], balance_on: bool) -> Vec<f64> {
    let n = labels.len();
    if !balance_on {
        return vec![1.0; n];
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let zeros = n - ones;
    let w1 = n as f64 / (2.0 * ones as f64);
    let w0 = n as f64 / (2.0 * zeros as f64);
    labels
        .iter()
        .map(|&l| if l == 1 { w1 } else { w0 })
        .collect()
}

/// Trains a classifier on the full dataset.
///
/// Both classes are present by `LabeledDataset` construction. All fits are
/// deterministic functions of (spec, data).
pub fn fit(spec: &ClassifierSpec, d: &LabeledDataset) -> Result<FittedClassifier> {
    spec.validate()?;
    let balance_on = spec.balance == BalanceMode::On;
    let weights = sample_weights(d.labels(), balance_on);
    let model = match &spec.kind {
        ClassifierKind::ConstantPrior => Model::Constant {
            prior: crate::dataset::estimate_class_prior(d),
        },
        ClassifierKind::LogisticRegression {
            l2_lambda,
            max_iters,
            tol,
        } => {
            let (w, b) = logistic::fit_logistic(d, &weights, *l2_lambda, *max_iters, *tol)?;
            Model::Logistic { weights: w, bias: b }
        }
        ClassifierKind::GradientBoostedStumps {
            n_rounds,
            learning_rate,
        } => Model::Stumps(stumps::fit_stumps(d, &weights, *n_rounds, *learning_rate)?),
        ClassifierKind::KNearest { k } => Model::Knn(KnnModel::fit(d, *k)),
    };
    Ok(FittedClassifier {
        n_features: d.n_features(),
        model,
    })
}

/// Out-of-fold predictions and the fold bookkeeping behind them.
#[derive(Debug, Clone)]
pub struct CrossFitResult {
    predictions: Vec<f64>,
    fold_assignment: Vec<usize>,
    models: Vec<FittedClassifier>,
}

impl CrossFitResult {
    /// One prediction per sample, in sample order; sample i's prediction
    /// comes from the model whose training folds exclude i.
    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn fold_assignment(&self) -> &[usize] {
        &self.fold_assignment
    }

    /// Predicts a (possibly modified) row with sample `i`'s out-of-fold model.
    pub fn predict_row(&self, i: usize, row: &[f64]) -> Result<f64> {
        self.models[self.fold_assignment[i]].predict_proba(row)
    }
}

/// Stratified fold assignment keyed by sample id.
///
/// Within each label class, samples are ordered by their seed-derived key and
/// dealt round-robin, so every fold holds a near-proportional share of each
/// class and the assignment survives row permutation.
fn assign_folds(d: &LabeledDataset, folds: usize, seed: u64) -> Result<Vec<usize>> {
    let ones = d.ones();
    let zeros = d.n_samples() - ones;
    let minority = ones.min(zeros);
    if folds > minority {
        return Err(HectError::TooFewSamples { folds, minority });
    }
    let mut assignment = vec![0usize; d.n_samples()];
    for class in [0u8, 1u8] {
        let mut members: Vec<(u64, &str, usize)> = d
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| (fold_key(seed, d.id(i)), d.id(i), i))
            .collect();
        members.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for (pos, (_, _, i)) in members.into_iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    Ok(assignment)
}

fn fold_training_set(d: &LabeledDataset, fold_of: &[usize], fold: usize) -> Result<LabeledDataset> {
    let keep: Vec<usize> = (0..d.n_samples()).filter(|&i| fold_of[i] != fold).collect();
    let mut rows = Vec::with_capacity(keep.len() * d.n_features());
    let mut labels = Vec::with_capacity(keep.len());
    let mut ids = Vec::with_capacity(keep.len());
    for &i in &keep {
        rows.extend_from_slice(d.row(i));
        labels.push(d.labels()[i]);
        ids.push(d.id(i).to_string());
    }
    LabeledDataset::new(
        rows,
        d.n_features(),
        labels,
        ids,
        d.variable_names().iter().cloned().collect(),
    )
}

/// K-fold cross-fit: fits one model per fold on the other folds and predicts
/// each sample out-of-fold. Fold assignment is a deterministic function of
/// `seed` and the sample ids.
pub fn cross_fit(spec: &ClassifierSpec, d: &LabeledDataset, seed: u64) -> Result<CrossFitResult> {
    spec.validate()?;
    let fold_of = assign_folds(d, spec.folds, seed)?;
    let mut models = Vec::with_capacity(spec.folds);
    for f in 0..spec.folds {
        let train = fold_training_set(d, &fold_of, f)?;
        models.push(fit(spec, &train)?);
    }
    let mut predictions = Vec::with_capacity(d.n_samples());
    for i in 0..d.n_samples() {
        predictions.push(models[fold_of[i]].predict_proba(d.row(i))?);
    }
    Ok(CrossFitResult {
        predictions,
        fold_assignment: fold_of,
        models,
    })
}

/// The out-of-fold prediction vector alone.
pub fn cross_fit_predictions(
    spec: &ClassifierSpec,
    d: &LabeledDataset,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(cross_fit(spec, d, seed)?.predictions)
}
