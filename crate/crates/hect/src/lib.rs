//! High-dimensional ensemble consistency testing.
//!
//! Decides whether a small set of "test" simulation runs is statistically
//! consistent with a large "trusted" ensemble. The decision is driven by a
//! probabilistic classifier: if no classifier can tell test runs from trusted
//! runs better than chance, the ensembles are consistent. Calibration is
//! always resampling-based (label permutation or trusted-only replicates),
//! never asymptotic.
//!
//! Modules:
//! - [`dataset`]: runs, ensembles, pooled labeled data, test reports.
//! - [`preprocess`]: spatial averaging, variance/redundancy filtering,
//!   standardization.
//! - [`classifier`]: class-posterior estimators with stratified cross-fitting.
//! - [`testing`]: the squared-discrepancy statistic, permutation two-sample
//!   test, and trusted-resample goodness-of-fit test.
//! - [`diagnostics`]: per-sample discrepancies and permutation feature
//!   importance with per-feature null calibration.
//! - [`pca`]: a simplified PCA-score consistency baseline.
//! - [`synth`]: a Gaussian ensemble emulator and Monte Carlo study harness.
//! - [`io`]: CSV and binary matrix ingestion shared with the CLI.
//!
//! Everything is deterministic given a seed: replicates, folds, shuffles and
//! synthetic draws each consume their own stream derived from the master seed,
//! so results do not depend on scheduling or worker count.

pub mod classifier;
pub mod dataset;
pub mod diagnostics;
mod eigen;
pub mod error;
pub mod io;
pub mod pca;
pub mod preprocess;
pub mod seed;
pub mod synth;
pub mod testing;

pub use dataset::{Decision, Ensemble, LabeledDataset, Role, Run, TestMethod, TestReport};
pub use error::HectError;
