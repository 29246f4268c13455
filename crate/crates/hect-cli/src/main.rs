//! `hect`: consistency testing of simulation ensembles from the command line.
//!
//! Subcommands: preprocess, test2s, gof, diagnose, baseline, simulate, study.
//! Exit codes: 0 = Pass/success, 1 = Fail verdict, 2 = parse/config error,
//! 3 = schema mismatch, 4 = other runtime error.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hect::classifier::{BalanceMode, ClassifierKind, ClassifierSpec};
use hect::dataset::{Decision, Ensemble, Role};
use hect::diagnostics;
use hect::error::HectError;
use hect::io;
use hect::pca;
use hect::preprocess;
use hect::synth::{self, Correlation, ShiftSpec, StudyKind, StudyMethod};
use hect::testing::{self, GofConfig, PermConfig};

use config::{parse_feature_list, ConfigFile, Resolved};

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn parse(message: String) -> Self {
        CliError { code: 2, message }
    }

    fn other(message: String) -> Self {
        CliError { code: 4, message }
    }
}

impl From<HectError> for CliError {
    fn from(e: HectError) -> Self {
        let code = match &e {
            HectError::Parse { .. } | HectError::InvalidConfig(_) => 2,
            HectError::SchemaMismatch(_) => 3,
            _ => 4,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::other(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "hect",
    about = "Classifier-based consistency testing for simulation ensembles",
    version
)]
struct Cli {
    /// Cap on concurrent replicates/trials (results do not depend on it).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Flat key=value config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ClassifierArgs {
    /// Classifier kind: constant | logistic | gbstumps | knn.
    #[arg(long)]
    classifier: Option<String>,

    /// Cross-fitting fold count.
    #[arg(long)]
    folds: Option<usize>,

    /// Inverse-frequency sample weighting: auto | on | off.
    #[arg(long)]
    balance: Option<String>,

    /// L2 penalty of the logistic fit.
    #[arg(long = "l2-lambda")]
    l2_lambda: Option<f64>,

    /// Gradient-descent iteration cap of the logistic fit.
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,

    /// Gradient-norm stopping tolerance of the logistic fit.
    #[arg(long)]
    tol: Option<f64>,

    /// Boosting rounds of the stump ensemble.
    #[arg(long = "n-rounds")]
    n_rounds: Option<usize>,

    /// Learning rate of the stump ensemble.
    #[arg(long = "learning-rate")]
    learning_rate: Option<f64>,

    /// Neighbour count of the kNN classifier.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Trusted-ensemble data file (or RAW4D directory for preprocess).
    #[arg(long)]
    trusted: PathBuf,

    /// Test-ensemble data file (or RAW4D directory for preprocess).
    #[arg(long)]
    test: PathBuf,

    /// Input format: csv | rawf64 (preprocess also accepts raw4d).
    #[arg(long)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, standardize (and for RAW4D input, spatially average) raw data.
    Preprocess {
        #[command(flatten)]
        data: DataArgs,

        /// Absolute-correlation threshold of the redundancy rule.
        #[arg(long = "corr-threshold")]
        corr_threshold: Option<f64>,

        /// Coefficient-of-variation threshold of the temporal rule.
        #[arg(long = "cv-threshold")]
        cv_threshold: Option<f64>,

        /// Keep only the final time step of RAW4D input.
        #[arg(long = "last-time-only")]
        last_time_only: Option<bool>,

        /// Output directory for the processed CSVs and the mask report.
        #[arg(long)]
        out: PathBuf,
    },

    /// Two-sample permutation test of trusted vs test.
    Test2s {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        classifier: ClassifierArgs,

        /// Number of label permutations.
        #[arg(long = "B")]
        b: Option<usize>,

        #[arg(long)]
        alpha: Option<f64>,

        #[arg(long)]
        seed: Option<u64>,

        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Goodness-of-fit test with a trusted-only null.
    Gof {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        classifier: ClassifierArgs,

        /// Number of trusted-only null replicates.
        #[arg(long = "E")]
        e: Option<usize>,

        /// Pseudo-test size per replicate; defaults to the test-ensemble size.
        #[arg(long = "m-e")]
        m_e: Option<usize>,

        #[arg(long)]
        alpha: Option<f64>,

        #[arg(long)]
        seed: Option<u64>,

        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Per-sample and per-feature difference diagnostics.
    Diagnose {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        classifier: ClassifierArgs,

        #[arg(long = "E")]
        e: Option<usize>,

        #[arg(long = "m-e")]
        m_e: Option<usize>,

        /// Predict-time shuffles per feature.
        #[arg(long = "n-shuffles")]
        n_shuffles: Option<usize>,

        #[arg(long)]
        alpha: Option<f64>,

        #[arg(long)]
        seed: Option<u64>,

        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// PCA-score threshold baseline.
    Baseline {
        #[command(flatten)]
        data: DataArgs,

        /// Number of principal components to retain.
        #[arg(long = "n-pc")]
        n_pc: Option<usize>,

        /// Score z-threshold for an extreme component.
        #[arg(long = "z-threshold")]
        z_threshold: Option<f64>,

        /// Extreme components needed to fail one run.
        #[arg(long = "fail-count")]
        fail_count: Option<usize>,

        #[arg(long)]
        alpha: Option<f64>,

        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Generate synthetic trusted/test ensembles with known ground truth.
    Simulate {
        /// Feature count.
        #[arg(long)]
        d: Option<usize>,

        /// Correlation: independent | ar1:RHO | blocks:SIZE:RHO.
        #[arg(long)]
        correlation: Option<String>,

        /// Trusted-ensemble size.
        #[arg(long)]
        m: Option<usize>,

        /// Test-ensemble size.
        #[arg(long)]
        n: Option<usize>,

        /// Test-side shift: none | mean:DELTA:FEATURES | var:FACTOR:FEATURES
        /// | corrbreak:FEATURES (FEATURES like 0-4 or 0,2,5).
        #[arg(long)]
        shift: Option<String>,

        /// Output format: csv | rawf64.
        #[arg(long)]
        format: Option<String>,

        #[arg(long)]
        seed: Option<u64>,

        /// Output directory for trusted/test files and the manifest.
        #[arg(long)]
        out: PathBuf,
    },

    /// Monte Carlo type-I / power studies on synthetic ensembles.
    Study {
        /// type1 | power.
        #[arg(long = "study-type")]
        study_type: Option<String>,

        /// test2s | gof | baseline.
        #[arg(long)]
        method: Option<String>,

        #[command(flatten)]
        classifier: ClassifierArgs,

        #[arg(long)]
        trials: Option<usize>,

        #[arg(long)]
        d: Option<usize>,

        #[arg(long)]
        correlation: Option<String>,

        #[arg(long)]
        m: Option<usize>,

        #[arg(long)]
        n: Option<usize>,

        /// Shift magnitude grid for power studies, e.g. 0,0.5,1,2,4.
        #[arg(long)]
        deltas: Option<String>,

        /// mean | var | corrbreak.
        #[arg(long = "shift-kind")]
        shift_kind: Option<String>,

        /// Features the shift applies to, e.g. 0-4.
        #[arg(long = "shift-features")]
        shift_features: Option<String>,

        #[arg(long = "B")]
        b: Option<usize>,

        #[arg(long = "E")]
        e: Option<usize>,

        #[arg(long = "m-e")]
        m_e: Option<usize>,

        #[arg(long = "n-pc")]
        n_pc: Option<usize>,

        #[arg(long = "z-threshold")]
        z_threshold: Option<f64>,

        #[arg(long = "fail-count")]
        fail_count: Option<usize>,

        #[arg(long)]
        alpha: Option<f64>,

        #[arg(long)]
        seed: Option<u64>,

        /// CSV table path (a JSON envelope lands next to it); stdout when
        /// omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Report wrapper: schema version, resolved configuration and seed.
#[derive(Serialize)]
struct Envelope<T: Serialize> {
    schema_version: u32,
    command: String,
    config: BTreeMap<String, String>,
    seed: Option<u64>,
    report: T,
}

fn emit_json<T: Serialize>(out: Option<&Path>, envelope: &Envelope<T>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(envelope)
        .map_err(|e| CliError::other(format!("cannot serialize report: {e}")))?;
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n"))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn read_ensemble(path: &Path, format: &str, role: Role) -> Result<Ensemble, CliError> {
    match format {
        "csv" => Ok(io::read_ensemble_csv(path, role)?),
        "rawf64" => Ok(io::read_ensemble_rawf64(path, role)?),
        other => Err(CliError::parse(format!(
            "unknown format '{other}' (expected csv or rawf64)"
        ))),
    }
}

fn build_classifier(
    r: &mut Resolved,
    cfg: &ConfigFile,
    a: &ClassifierArgs,
) -> Result<ClassifierSpec, CliError> {
    let name: String = r.get(a.classifier.clone(), cfg, "classifier", "logistic".into())?;
    let folds = r.get(a.folds, cfg, "folds", 5)?;
    let balance_name: String = r.get(a.balance.clone(), cfg, "balance", "auto".into())?;
    let balance = match balance_name.as_str() {
        "auto" => BalanceMode::Auto,
        "on" => BalanceMode::On,
        "off" => BalanceMode::Off,
        other => {
            return Err(CliError::parse(format!(
                "unknown balance mode '{other}' (expected auto, on or off)"
            )))
        }
    };
    let kind = match name.as_str() {
        "constant" => ClassifierKind::ConstantPrior,
        "logistic" => ClassifierKind::LogisticRegression {
            l2_lambda: r.get(a.l2_lambda, cfg, "l2-lambda", 0.1)?,
            max_iters: r.get(a.max_iters, cfg, "max-iters", 200)?,
            tol: r.get(a.tol, cfg, "tol", 1e-6)?,
        },
        "gbstumps" => ClassifierKind::GradientBoostedStumps {
            n_rounds: r.get(a.n_rounds, cfg, "n-rounds", 50)?,
            learning_rate: r.get(a.learning_rate, cfg, "learning-rate", 0.1)?,
        },
        "knn" => ClassifierKind::KNearest {
            k: r.get(a.k, cfg, "k", 5)?,
        },
        other => {
            return Err(CliError::parse(format!(
                "unknown classifier '{other}' (expected constant, logistic, gbstumps or knn)"
            )))
        }
    };
    let spec = ClassifierSpec {
        kind,
        folds,
        balance,
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_correlation(text: &str) -> Result<Correlation, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        ["independent"] => Ok(Correlation::Independent),
        ["ar1", rho] => Ok(Correlation::Ar1 {
            rho: rho
                .parse()
                .map_err(|_| CliError::parse(format!("bad AR1 rho '{rho}'")))?,
        }),
        ["blocks", size, rho] => Ok(Correlation::Blocks {
            block_size: size
                .parse()
                .map_err(|_| CliError::parse(format!("bad block size '{size}'")))?,
            rho: rho
                .parse()
                .map_err(|_| CliError::parse(format!("bad block rho '{rho}'")))?,
        }),
        _ => Err(CliError::parse(format!(
            "unknown correlation '{text}' (expected independent, ar1:RHO or blocks:SIZE:RHO)"
        ))),
    }
}

fn parse_shift(text: &str) -> Result<ShiftSpec, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        ["none"] => Ok(ShiftSpec::None),
        ["mean", delta, features] => Ok(ShiftSpec::MeanShift {
            delta: delta
                .parse()
                .map_err(|_| CliError::parse(format!("bad shift delta '{delta}'")))?,
            features: parse_feature_list(features)?,
        }),
        ["var", factor, features] => Ok(ShiftSpec::VarianceScale {
            factor: factor
                .parse()
                .map_err(|_| CliError::parse(format!("bad variance factor '{factor}'")))?,
            features: parse_feature_list(features)?,
        }),
        ["corrbreak", features] => Ok(ShiftSpec::CorrelationBreak {
            features: parse_feature_list(features)?,
        }),
        _ => Err(CliError::parse(format!(
            "unknown shift '{text}' (expected none, mean:DELTA:FEATURES, var:FACTOR:FEATURES or corrbreak:FEATURES)"
        ))),
    }
}

fn decision_code(decision: Decision) -> i32 {
    match decision {
        Decision::Pass => 0,
        Decision::Fail => 1,
    }
}

fn cmd_preprocess(
    cfg: &ConfigFile,
    data: DataArgs,
    corr_threshold: Option<f64>,
    cv_threshold: Option<f64>,
    last_time_only: Option<bool>,
    out: PathBuf,
) -> Result<i32, CliError> {
    let mut r = Resolved::default();
    let format: String = r.get(data.format.clone(), cfg, "format", "csv".into())?;
    let corr = r.get(corr_threshold, cfg, "corr-threshold", 0.98)?;
    let cv = r.get(cv_threshold, cfg, "cv-threshold", 0.0)?;
    let last_only = r.get(last_time_only, cfg, "last-time-only", false)?;
    r.note("trusted", data.trusted.display());
    r.note("test", data.test.display());

    let load = |path: &Path, role: Role| -> Result<Ensemble, CliError> {
        if format == "raw4d" {
            let raws = io::read_raw4d_dir(path)?;
            let runs: Result<Vec<_>, HectError> = raws
                .iter()
                .map(|raw| preprocess::spatial_average(raw, last_only))
                .collect();
            Ok(Ensemble::new(runs?, role)?)
        } else {
            read_ensemble(path, &format, role)
        }
    };
    let trusted = load(&data.trusted, Role::Trusted)?;
    let test = load(&data.test, Role::Test)?;

    let mask = preprocess::fit_filter(&trusted, corr, cv)?;
    let trusted_f = preprocess::apply_filter(&trusted, &mask)?;
    let test_f = preprocess::apply_filter(&test, &mask)?;
    let params = preprocess::fit_standardize(&trusted_f)?;
    let trusted_z = preprocess::apply_standardize(&trusted_f, &params)?;
    let test_z = preprocess::apply_standardize(&test_f, &params)?;

    std::fs::create_dir_all(&out)?;
    io::write_ensemble_csv(out.join("trusted_processed.csv"), &trusted_z)?;
    io::write_ensemble_csv(out.join("test_processed.csv"), &test_z)?;

    #[derive(Serialize)]
    struct PreprocessReport {
        mask: preprocess::FilterMask,
        dropped: BTreeMap<String, Vec<String>>,
        standardization: preprocess::StandardizationParams,
        kept_features: usize,
    }
    let mut dropped: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (name, reason) in mask.dropped() {
        dropped
            .entry(format!("{reason:?}"))
            .or_default()
            .push(name.to_string());
    }
    let report = PreprocessReport {
        kept_features: mask.kept_count(),
        dropped,
        standardization: params,
        mask,
    };
    emit_json(
        Some(&out.join("mask.json")),
        &Envelope {
            schema_version: SCHEMA_VERSION,
            command: "preprocess".into(),
            config: r.into_echo(),
            seed: None,
            report,
        },
    )?;
    eprintln!(
        "preprocess: kept {} of {} features -> {}",
        trusted_z.feature_count(),
        trusted.feature_count(),
        out.display()
    );
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_test2s(
    cfg: &ConfigFile,
    data: DataArgs,
    classifier: ClassifierArgs,
    b: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<i32, CliError> {
    let mut r = Resolved::default();
    let format: String = r.get(data.format.clone(), cfg, "format", "csv".into())?;
    let spec = build_classifier(&mut r, cfg, &classifier)?;
    let b = r.get(b, cfg, "B", 1000)?;
    let alpha = r.get(alpha, cfg, "alpha", 0.05)?;
    let seed = r.require(seed, cfg, "seed")?;
    r.note("trusted", data.trusted.display());
    r.note("test", data.test.display());

    let trusted = read_ensemble(&data.trusted, &format, Role::Trusted)?;
    let test = read_ensemble(&data.test, &format, Role::Test)?;
    let report = testing::two_sample_test(&trusted, &test, &spec, &PermConfig::new(b, alpha, seed)?)?;
    let code = decision_code(report.decision);
    emit_json(
        out.as_deref(),
        &Envelope {
            schema_version: SCHEMA_VERSION,
            command: "test2s".into(),
            config: r.into_echo(),
            seed: Some(seed),
            report,
        },
    )?;
    Ok(code)
}

#[allow(clippy::too_many_arguments)]
fn cmd_gof(
    cfg: &ConfigFile,
    data: DataArgs,
    classifier: ClassifierArgs,
    e: Option<usize>,
    m_e: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<i32, CliError> {
    let mut r = Resolved::default();
    let format: String = r.get(data.format.clone(), cfg, "format", "csv".into())?;
    let spec = build_classifier(&mut r, cfg, &classifier)?;
    let e = r.get(e, cfg, "E", 200)?;
    let m_e = match m_e {
        Some(v) => Some(v),
        None => cfg.get::<usize>("m-e")?,
    };
    if let Some(v) = m_e {
        r.note("m-e", v);
    }
    let alpha = r.get(alpha, cfg, "alpha", 0.05)?;
    let seed = r.require(seed, cfg, "seed")?;
    r.note("trusted", data.trusted.display());
    r.note("test", data.test.display());

    let trusted = read_ensemble(&data.trusted, &format, Role::Trusted)?;
    let test = read_ensemble(&data.test, &format, Role::Test)?;
    let report = testing::gof_test(&trusted, &test, &spec, &GofConfig::new(e, m_e, alpha, seed)?)?;
    let code = decision_code(report.decision);
    emit_json(
        out.as_deref(),
        &Envelope {
            schema_version: SCHEMA_VERSION,
            command: "gof".into(),
            config: r.into_echo(),
            seed: Some(seed),
            report,
        },
    )?;
    Ok(code)
}

#[allow(clippy::too_many_arguments)]
fn cmd_diagnose(
    cfg: &ConfigFile,
    data: DataArgs,
    classifier: ClassifierArgs,
    e: Option<usize>,
    m_e: Option<usize>,
    n_shuffles: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<i32, CliError> {
    let mut r = Resolved::default();
    let format: String = r.get(data.format.clone(), cfg, "format", "csv".into())?;
    let spec = build_classifier(&mut r, cfg, &classifier)?;
    let e = r.get(e, cfg, "E", 200)?;
    let m_e = match m_e {
        Some(v) => Some(v),
        None => cfg.get::<usize>("m-e")?,
    };
    if let Some(v) = m_e {
        r.note("m-e", v);
    }
    let n_shuffles = r.get(n_shuffles, cfg, "n-shuffles", 5)?;
    let alpha = r.get(alpha, cfg, "alpha", 0.05)?;
    let seed = r.require(seed, cfg, "seed")?;
    r.note("trusted", data.trusted.display());
    r.note("test", data.test.display());

    let trusted = read_ensemble(&data.trusted, &format, Role::Trusted)?;
    let test = read_ensemble(&data.test, &format, Role::Test)?;
    let report = diagnostics::diagnose(
        &trusted,
        &test,
        &spec,
        &GofConfig::new(e, m_e, alpha, seed)?,
        n_shuffles,
    )?;
    emit_json(
        out.as_deref(),
        &Envelope {
            schema_version: SCHEMA_VERSION,
            command: "diagnose".into(),
            config: r.into_echo(),
            seed: Some(seed),
            report,
        },
    )?;
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_baseline(
    cfg: &ConfigFile,
    data: DataArgs,
    n_pc: Option<usize>,
    z_threshold: Option<f64>,
    fail_count: Option<usize>,
    alpha: Option<f64>,
    out: Option<PathBuf>,
) -> Result<i32, CliError> {
    let mut r = Resolved::default();
    let format: String = r.get(data.format.clone(), cfg, "format", "csv".into())?;
    let n_pc = r.get(n_pc, cfg, "n-pc", 50)?;
    let z_threshold = r.get(z_threshold, cfg, "z-threshold", 2.0)?;
    let fail_count = r.get(fail_count, cfg, "fail-count", 3)?;
    let alpha = r.get(alpha, cfg, "alpha", 0.05)?;
    r.note("trusted", data.trusted.display());
    r.note("test", data.test.display());

    let trusted = read_ensemble(&data.trusted, &format, Role::Trusted)?;
    let test = read_ensemble(&data.test, &format, Role::Test)?;
    let model = pca::fit_pca(&trusted, n_pc)?;
    let trusted_scores = pca::project_ensemble(&model, &trusted)?;
    let report = pca::pca_ect(&model, &trusted_scores, &test, z_threshold, fail_count, alpha)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let code = decision_code(report.decision);
    emit_json(
        out.as_deref(),
        &Envelope {
            schema_version: SCHEMA_VERSION,
            command: "baseline".into(),
            config: r.into_echo(),
            seed: None,
            report,
        },
    )?;
    Ok(code)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    cfg: &ConfigFile,
    d: Option<usize>,
    correlation: Option<String>,
    m: Option<usize>,
    n: Option<usize>,
    shift: Option<String>,
    format: Option<String>,
    seed: Option<u64>,
    out: PathBuf,
) -> Result<i32, CliError> {
    let mut r = Resolved::default();
    let d = r.get(d, cfg, "d", 20)?;
    let correlation_s: String = r.get(correlation, cfg, "correlation", "independent".into())?;
    let m = r.get(m, cfg, "m", 100)?;
    let n = r.get(n, cfg, "n", 10)?;
    let shift_s: String = r.get(shift, cfg, "shift", "none".into())?;
    let format: String = r.get(format, cfg, "format", "csv".into())?;
    let seed = r.require(seed, cfg, "seed")?;

    let synth_cfg = synth::SynthConfig {
        d,
        correlation: parse_correlation(&correlation_s)?,
        m,
        n,
        seed,
    };
    let shift = parse_shift(&shift_s)?;
    let trusted = synth::generate(&synth_cfg, &shift, Role::Trusted)?;
    let test = synth::generate(&synth_cfg, &shift, Role::Test)?;

    std::fs::create_dir_all(&out)?;
    match format.as_str() {
        "csv" => {
            io::write_ensemble_csv(out.join("trusted.csv"), &trusted)?;
            io::write_ensemble_csv(out.join("test.csv"), &test)?;
        }
        "rawf64" => {
            io::write_ensemble_rawf64(out.join("trusted.rawf64"), &trusted)?;
            io::write_ensemble_rawf64(out.join("test.rawf64"), &test)?;
        }
        other => {
            return Err(CliError::parse(format!(
                "unknown format '{other}' (expected csv or rawf64)"
            )))
        }
    }

    #[derive(Serialize)]
    struct SimulateReport {
        trusted_runs: usize,
        test_runs: usize,
        features: usize,
    }
    emit_json(
        Some(&out.join("manifest.json")),
        &Envelope {
            schema_version: SCHEMA_VERSION,
            command: "simulate".into(),
            config: r.into_echo(),
            seed: Some(seed),
            report: SimulateReport {
                trusted_runs: m,
                test_runs: n,
                features: d,
            },
        },
    )?;
    eprintln!("simulate: wrote {m}+{n} runs of {d} features -> {}", out.display());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_study(
    cfg: &ConfigFile,
    study_type: Option<String>,
    method: Option<String>,
    classifier: ClassifierArgs,
    trials: Option<usize>,
    d: Option<usize>,
    correlation: Option<String>,
    m: Option<usize>,
    n: Option<usize>,
    deltas: Option<String>,
    shift_kind: Option<String>,
    shift_features: Option<String>,
    b: Option<usize>,
    e: Option<usize>,
    m_e: Option<usize>,
    n_pc: Option<usize>,
    z_threshold: Option<f64>,
    fail_count: Option<usize>,
    alpha: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<i32, CliError> {
    let mut r = Resolved::default();
    let study_type_s: String = r.get(study_type, cfg, "study-type", "type1".into())?;
    let kind = match study_type_s.as_str() {
        "type1" => StudyKind::TypeI,
        "power" => StudyKind::Power,
        other => {
            return Err(CliError::parse(format!(
                "unknown study type '{other}' (expected type1 or power)"
            )))
        }
    };
    let method_s: String = r.get(method, cfg, "method", "gof".into())?;
    let spec = build_classifier(&mut r, cfg, &classifier)?;
    let trials = r.get(trials, cfg, "trials", 100)?;
    let d = r.get(d, cfg, "d", 20)?;
    let correlation_s: String = r.get(correlation, cfg, "correlation", "independent".into())?;
    let m = r.get(m, cfg, "m", 100)?;
    let n = r.get(n, cfg, "n", 10)?;
    let alpha = r.get(alpha, cfg, "alpha", 0.05)?;
    let seed = r.require(seed, cfg, "seed")?;

    let study_method = match method_s.as_str() {
        "test2s" => StudyMethod::TwoSample {
            permutations: r.get(b, cfg, "B", 199)?,
        },
        "gof" => {
            let m_e = match m_e {
                Some(v) => Some(v),
                None => cfg.get::<usize>("m-e")?,
            };
            if let Some(v) = m_e {
                r.note("m-e", v);
            }
            StudyMethod::Gof {
                replicates: r.get(e, cfg, "E", 199)?,
                m_e,
            }
        }
        "baseline" => StudyMethod::PcaBaseline {
            n_pc: r.get(n_pc, cfg, "n-pc", 50)?,
            z_threshold: r.get(z_threshold, cfg, "z-threshold", 2.0)?,
            fail_count: r.get(fail_count, cfg, "fail-count", 3)?,
        },
        other => {
            return Err(CliError::parse(format!(
                "unknown method '{other}' (expected test2s, gof or baseline)"
            )))
        }
    };

    let shifts = match kind {
        StudyKind::TypeI => vec![ShiftSpec::None],
        StudyKind::Power => {
            let deltas_s: String = r.get(deltas, cfg, "deltas", "0,0.5,1,2,4".into())?;
            let kind_s: String = r.get(shift_kind, cfg, "shift-kind", "mean".into())?;
            let features_s: String = r.get(shift_features, cfg, "shift-features", "0-4".into())?;
            let features = parse_feature_list(&features_s)?;
            if kind_s == "corrbreak" {
                vec![ShiftSpec::CorrelationBreak { features }]
            } else {
                let mut shifts = Vec::new();
                for part in deltas_s.split(',') {
                    let value: f64 = part.trim().parse().map_err(|_| {
                        CliError::parse(format!("bad delta '{}'", part.trim()))
                    })?;
                    shifts.push(match kind_s.as_str() {
                        "mean" => {
                            if value == 0.0 {
                                ShiftSpec::None
                            } else {
                                ShiftSpec::MeanShift {
                                    delta: value,
                                    features: features.clone(),
                                }
                            }
                        }
                        "var" => ShiftSpec::VarianceScale {
                            factor: value,
                            features: features.clone(),
                        },
                        other => {
                            return Err(CliError::parse(format!(
                                "unknown shift kind '{other}' (expected mean, var or corrbreak)"
                            )))
                        }
                    });
                }
                shifts
            }
        }
    };

    let study = synth::StudyConfig {
        kind,
        trials,
        method: study_method,
        classifier: spec,
        synth: synth::SynthConfig {
            d,
            correlation: parse_correlation(&correlation_s)?,
            m,
            n,
            seed,
        },
        shifts,
        alpha,
    };
    let table = synth::run_study(&study)?;

    let csv = table.to_csv();
    match &out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            let json_path = path.with_extension("json");
            emit_json(
                Some(&json_path),
                &Envelope {
                    schema_version: SCHEMA_VERSION,
                    command: "study".into(),
                    config: r.into_echo(),
                    seed: Some(seed),
                    report: &table,
                },
            )?;
        }
        None => print!("{csv}"),
    }
    Ok(0)
}

fn dispatch(command: Command, cfg: &ConfigFile) -> Result<i32, CliError> {
    match command {
        Command::Preprocess {
            data,
            corr_threshold,
            cv_threshold,
            last_time_only,
            out,
        } => cmd_preprocess(cfg, data, corr_threshold, cv_threshold, last_time_only, out),
        Command::Test2s {
            data,
            classifier,
            b,
            alpha,
            seed,
            out,
        } => cmd_test2s(cfg, data, classifier, b, alpha, seed, out),
        Command::Gof {
            data,
            classifier,
            e,
            m_e,
            alpha,
            seed,
            out,
        } => cmd_gof(cfg, data, classifier, e, m_e, alpha, seed, out),
        Command::Diagnose {
            data,
            classifier,
            e,
            m_e,
            n_shuffles,
            alpha,
            seed,
            out,
        } => cmd_diagnose(cfg, data, classifier, e, m_e, n_shuffles, alpha, seed, out),
        Command::Baseline {
            data,
            n_pc,
            z_threshold,
            fail_count,
            alpha,
            out,
        } => cmd_baseline(cfg, data, n_pc, z_threshold, fail_count, alpha, out),
        Command::Simulate {
            d,
            correlation,
            m,
            n,
            shift,
            format,
            seed,
            out,
        } => cmd_simulate(cfg, d, correlation, m, n, shift, format, seed, out),
        Command::Study {
            study_type,
            method,
            classifier,
            trials,
            d,
            correlation,
            m,
            n,
            deltas,
            shift_kind,
            shift_features,
            b,
            e,
            m_e,
            n_pc,
            z_threshold,
            fail_count,
            alpha,
            seed,
            out,
        } => cmd_study(
            cfg, study_type, method, classifier, trials, d, correlation, m, n, deltas,
            shift_kind, shift_features, b, e, m_e, n_pc, z_threshold, fail_count, alpha, seed,
            out,
        ),
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match cli.jobs {
        Some(jobs) => {
            if jobs == 0 {
                return Err(CliError::parse("--jobs must be at least 1".into()));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| CliError::other(format!("cannot build thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command, &cfg))
        }
        None => dispatch(cli.command, &cfg),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => process::exit(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            process::exit(e.code);
        }
    }
}
