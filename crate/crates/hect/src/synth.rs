//! Desk-scale synthetic ensemble emulator and Monte Carlo study harness.
//!
//! Draws unit-variance Gaussian runs with a configurable correlation
//! structure and an optional distributional shift on the test side, so type I
//! and type II error can be measured against known ground truth. Every run
//! draws from its own stream: trusted draws never depend on the shift, the
//! test-ensemble size, or worker scheduling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierSpec;
use crate::dataset::{Decision, Ensemble, Role, Run, TestReport};
use crate::error::{HectError, Result};
use crate::pca;
use crate::preprocess::{apply_standardize, fit_standardize};
use crate::seed::{stream_rng, tag};
use crate::testing::{gof_test, two_sample_test, GofConfig, PermConfig};

/// Correlation structure of the emulated features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Correlation {
    Independent,
    /// corr(f_i, f_j) = rho^|i-j|, rho in (-1, 1).
    Ar1 { rho: f64 },
    /// Equicorrelation rho within consecutive blocks, rho in [0, 1);
    /// block_size must divide the feature count.
    Blocks { block_size: usize, rho: f64 },
}

/// Generator settings: feature count, correlation, ensemble sizes, seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub d: usize,
    pub correlation: Correlation,
    /// Trusted-ensemble size.
    pub m: usize,
    /// Test-ensemble size.
    pub n: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(HectError::InvalidConfig("d must be at least 1".into()));
        }
        if self.m == 0 || self.n == 0 {
            return Err(HectError::InvalidConfig(
                "ensemble sizes must be at least 1".into(),
            ));
        }
        match self.correlation {
            Correlation::Independent => {}
            Correlation::Ar1 { rho } => {
                if !(-1.0 < rho && rho < 1.0) {
                    return Err(HectError::InvalidConfig(format!(
                        "AR1 rho {rho} outside (-1,1)"
                    )));
                }
            }
            Correlation::Blocks { block_size, rho } => {
                if !(0.0 <= rho && rho < 1.0) {
                    return Err(HectError::InvalidConfig(format!(
                        "block rho {rho} outside [0,1)"
                    )));
                }
                if block_size == 0 || self.d % block_size != 0 {
                    return Err(HectError::InvalidConfig(format!(
                        "block_size {block_size} must divide d = {}",
                        self.d
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Distributional shift applied to test runs only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ShiftSpec {
    None,
    MeanShift { delta: f64, features: Vec<usize> },
    VarianceScale { factor: f64, features: Vec<usize> },
    /// Redraws the listed features independently, severing their correlation
    /// with the rest while keeping the N(0,1) marginals.
    CorrelationBreak { features: Vec<usize> },
}

impl ShiftSpec {
    pub fn validate(&self, d: usize) -> Result<()> {
        let features = match self {
            ShiftSpec::None => return Ok(()),
            ShiftSpec::MeanShift { delta, features } => {
                if !delta.is_finite() {
                    return Err(HectError::InvalidConfig("delta must be finite".into()));
                }
                features
            }
            ShiftSpec::VarianceScale { factor, features } => {
                if !(*factor > 0.0 && factor.is_finite()) {
                    return Err(HectError::InvalidConfig(format!(
                        "variance factor {factor} must be positive"
                    )));
                }
                features
            }
            ShiftSpec::CorrelationBreak { features } => features,
        };
        if features.is_empty() {
            return Err(HectError::InvalidConfig(
                "shift feature subset must be nonempty".into(),
            ));
        }
        if let Some(&j) = features.iter().find(|&&j| j >= d) {
            return Err(HectError::InvalidConfig(format!(
                "shift feature {j} out of range for d = {d}"
            )));
        }
        Ok(())
    }

    /// Compact comma-free label for study tables.
    pub fn label(&self) -> String {
        match self {
            ShiftSpec::None => "none".into(),
            ShiftSpec::MeanShift { delta, features } => {
                format!("mean+{delta}@{}f", features.len())
            }
            ShiftSpec::VarianceScale { factor, features } => {
                format!("var*{factor}@{}f", features.len())
            }
            ShiftSpec::CorrelationBreak { features } => {
                format!("corrbreak@{}f", features.len())
            }
        }
    }
}

fn draw_base(rng: &mut rand_chacha::ChaCha8Rng, d: usize, correlation: Correlation) -> Vec<f64> {
    match correlation {
        Correlation::Independent => (0..d).map(|_| StandardNormal.sample(rng)).collect(),
        Correlation::Ar1 { rho } => {
            let scale = (1.0 - rho * rho).sqrt();
            let mut x = Vec::with_capacity(d);
            let mut prev: f64 = StandardNormal.sample(rng);
            x.push(prev);
            for _ in 1..d {
                let eps: f64 = StandardNormal.sample(rng);
                prev = rho * prev + scale * eps;
                x.push(prev);
            }
            x
        }
        Correlation::Blocks { block_size, rho } => {
            let n_blocks = d / block_size;
            let shared: Vec<f64> = (0..n_blocks).map(|_| StandardNormal.sample(rng)).collect();
            let a = rho.sqrt();
            let b = (1.0 - rho).sqrt();
            (0..d)
                .map(|j| {
                    let eps: f64 = StandardNormal.sample(rng);
                    a * shared[j / block_size] + b * eps
                })
                .collect()
        }
    }
}

/// Draws an ensemble of the given role.
///
/// Trusted runs use one stream family, test runs a disjoint one, and the
/// shift applies to test runs only.
pub fn generate(cfg: &SynthConfig, shift: &ShiftSpec, role: Role) -> Result<Ensemble> {
    cfg.validate()?;
    shift.validate(cfg.d)?;
    let (count, stream_tag, prefix) = match role {
        Role::Trusted => (cfg.m, tag::SYNTH_TRUSTED, "trusted"),
        Role::Test => (cfg.n, tag::SYNTH_TEST, "test"),
    };
    let names: std::sync::Arc<[String]> = (0..cfg.d).map(|j| format!("f{j:03}")).collect();
    let runs: Result<Vec<Run>> = (0..count)
        .map(|r| {
            let mut rng = stream_rng(cfg.seed, stream_tag, r as u64);
            let mut x = draw_base(&mut rng, cfg.d, cfg.correlation);
            if role == Role::Test {
                match shift {
                    ShiftSpec::None => {}
                    ShiftSpec::MeanShift { delta, features } => {
                        for &j in features {
                            x[j] += delta;
                        }
                    }
                    ShiftSpec::VarianceScale { factor, features } => {
                        let s = factor.sqrt();
                        for &j in features {
                            x[j] *= s;
                        }
                    }
                    ShiftSpec::CorrelationBreak { features } => {
                        for &j in features {
                            x[j] = StandardNormal.sample(&mut rng);
                        }
                    }
                }
            }
            Run::new(format!("{prefix}_{r:05}"), x, names.clone())
        })
        .collect();
    Ensemble::new(runs?, role)
}

/// Which calibration a study exercises.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum StudyMethod {
    TwoSample { permutations: usize },
    Gof { replicates: usize, m_e: Option<usize> },
    PcaBaseline { n_pc: usize, z_threshold: f64, fail_count: usize },
}

impl StudyMethod {
    pub fn label(&self) -> &'static str {
        match self {
            StudyMethod::TwoSample { .. } => "test2s",
            StudyMethod::Gof { .. } => "gof",
            StudyMethod::PcaBaseline { .. } => "baseline",
        }
    }
}

/// Whether the study measures size (rejection under no shift) or power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudyKind {
    TypeI,
    Power,
}

/// Study settings: generator, method, classifier and the shift grid.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub kind: StudyKind,
    pub trials: usize,
    pub method: StudyMethod,
    pub classifier: ClassifierSpec,
    pub synth: SynthConfig,
    /// Shift grid; a TypeI study ignores it and runs the no-shift case.
    pub shifts: Vec<ShiftSpec>,
    pub alpha: f64,
}

/// One study cell: rejection rate of a (shift, method, classifier) setting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRow {
    pub shift: String,
    pub classifier: String,
    pub method: String,
    pub trials: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    /// Binomial Monte Carlo standard error of the rejection rate.
    pub mc_se: f64,
    pub mean_p: f64,
}

/// Study results, one row per shift.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub const CSV_HEADER: &'static str =
        "shift,classifier,method,trials,rejections,rejection_rate,mc_se,mean_p";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.shift,
                r.classifier,
                r.method,
                r.trials,
                r.rejections,
                r.rejection_rate,
                r.mc_se,
                r.mean_p
            ));
        }
        out
    }
}

/// Runs one trial and returns its report.
pub fn run_trial(
    method: &StudyMethod,
    classifier: &ClassifierSpec,
    synth: &SynthConfig,
    shift: &ShiftSpec,
    alpha: f64,
) -> Result<TestReport> {
    let trusted = generate(synth, shift, Role::Trusted)?;
    let test = generate(synth, shift, Role::Test)?;
    let params = fit_standardize(&trusted)?;
    let trusted_std = apply_standardize(&trusted, &params)?;
    let test_std = apply_standardize(&test, &params)?;
    match method {
        StudyMethod::TwoSample { permutations } => {
            let cfg = PermConfig::new(*permutations, alpha, synth.seed)?;
            two_sample_test(&trusted_std, &test_std, classifier, &cfg)
        }
        StudyMethod::Gof { replicates, m_e } => {
            let cfg = GofConfig::new(*replicates, *m_e, alpha, synth.seed)?;
            gof_test(&trusted_std, &test_std, classifier, &cfg)
        }
        StudyMethod::PcaBaseline {
            n_pc,
            z_threshold,
            fail_count,
        } => {
            let model = pca::fit_pca(&trusted_std, *n_pc)?;
            let scores = pca::project_ensemble(&model, &trusted_std)?;
            pca::pca_ect(&model, &scores, &test_std, *z_threshold, *fail_count, alpha)
        }
    }
}

/// Monte Carlo study over the shift grid: each (shift, trial) cell draws its
/// ensembles from a fresh seeded stream and runs the configured test.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyTable> {
    if cfg.trials == 0 {
        return Err(HectError::InvalidConfig("trials must be at least 1".into()));
    }
    cfg.synth.validate()?;
    if !(0.0 < cfg.alpha && cfg.alpha < 1.0) {
        return Err(HectError::InvalidConfig(format!(
            "alpha {} outside (0,1)",
            cfg.alpha
        )));
    }
    let shifts: Vec<ShiftSpec> = match cfg.kind {
        StudyKind::TypeI => vec![ShiftSpec::None],
        StudyKind::Power => {
            if cfg.shifts.is_empty() {
                return Err(HectError::InvalidConfig(
                    "a power study needs at least one shift".into(),
                ));
            }
            cfg.shifts.clone()
        }
    };
    for s in &shifts {
        s.validate(cfg.synth.d)?;
    }

    let mut rows = Vec::with_capacity(shifts.len());
    for (s_idx, shift) in shifts.iter().enumerate() {
        let outcomes: Result<Vec<(bool, f64)>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| {
                let trial_seed: u64 = stream_rng(
                    cfg.synth.seed,
                    tag::STUDY,
                    (s_idx * cfg.trials + t) as u64,
                )
                .gen();
                let synth = SynthConfig {
                    seed: trial_seed,
                    ..cfg.synth.clone()
                };
                let report = run_trial(&cfg.method, &cfg.classifier, &synth, shift, cfg.alpha)?;
                Ok((report.decision == Decision::Fail, report.p_value))
            })
            .collect();
        let outcomes = outcomes?;
        let rejections = outcomes.iter().filter(|(fail, _)| *fail).count();
        let rate = rejections as f64 / cfg.trials as f64;
        let mean_p = outcomes.iter().map(|(_, p)| p).sum::<f64>() / cfg.trials as f64;
        rows.push(StudyRow {
            shift: shift.label(),
            classifier: cfg.classifier.kind.label().to_string(),
            method: cfg.method.label().to_string(),
            trials: cfg.trials,
            rejections,
            rejection_rate: rate,
            mc_se: (rate * (1.0 - rate) / cfg.trials as f64).sqrt(),
            mean_p,
        });
    }
    Ok(StudyTable { rows })
}
