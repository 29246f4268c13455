//! Reduces raw gridded/temporal output to feature vectors: spatial averaging,
//! variance/redundancy filtering, and standardization.
//!
//! All statistics here (filter thresholds, means, standard deviations) are fit
//! on the trusted ensemble only and then applied to test runs, so test data
//! never leaks into the null model. Every operation is deterministic and uses
//! fixed left-to-right summation per feature.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{Ensemble, Run};
use crate::error::{HectError, Result};

const VAR_TOL: f64 = 1e-12;
const SD_TOL: f64 = 1e-12;

/// One simulation output on its native (variable, time, level, cell) grid.
#[derive(Debug, Clone)]
pub struct RawRun {
    id: String,
    values: Vec<f64>,
    dims: RawDims,
    cell_weights: Option<Vec<f64>>,
    variable_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDims {
    pub n_var: usize,
    pub n_time: usize,
    pub n_level: usize,
    pub n_cell: usize,
}

impl RawDims {
    pub fn len(&self) -> usize {
        self.n_var * self.n_time * self.n_level * self.n_cell
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RawRun {
    pub fn new(
        id: impl Into<String>,
        values: Vec<f64>,
        dims: RawDims,
        cell_weights: Option<Vec<f64>>,
        variable_names: Vec<String>,
    ) -> Result<Self> {
        let id = id.into();
        if dims.n_var == 0 || dims.n_time == 0 || dims.n_level == 0 || dims.n_cell == 0 {
            return Err(HectError::InvalidConfig(format!(
                "raw run '{id}' has a zero dimension"
            )));
        }
        if values.len() != dims.len() {
            return Err(HectError::ShapeMismatch(format!(
                "raw run '{id}': {} values for dims {:?}",
                values.len(),
                dims
            )));
        }
        if variable_names.len() != dims.n_var {
            return Err(HectError::ShapeMismatch(format!(
                "raw run '{id}': {} variable names for {} variables",
                variable_names.len(),
                dims.n_var
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(HectError::NonFinite(format!("raw run '{id}'")));
        }
        if let Some(w) = &cell_weights {
            if w.len() != dims.n_cell {
                return Err(HectError::ShapeMismatch(format!(
                    "raw run '{id}': {} cell weights for {} cells",
                    w.len(),
                    dims.n_cell
                )));
            }
            if !w.iter().all(|x| x.is_finite() && *x > 0.0) {
                return Err(HectError::InvalidConfig(format!(
                    "raw run '{id}': cell weights must be positive"
                )));
            }
        }
        Ok(RawRun {
            id,
            values,
            dims,
            cell_weights,
            variable_names,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dims(&self) -> RawDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_weights(&self) -> Option<&[f64]> {
        self.cell_weights.as_deref()
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    fn value(&self, v: usize, t: usize, l: usize, c: usize) -> f64 {
        let d = &self.dims;
        self.values[((v * d.n_time + t) * d.n_level + l) * d.n_cell + c]
    }
}

/// Collapses the (level, cell) grid of each variable to a weighted global
/// mean, per time step or for the final step only.
///
/// Cell weights apply identically at every vertical level; absent weights
/// mean a uniform average. With several time steps kept, feature names carry
/// a `@t` suffix and features are ordered variable-major, then time.
pub fn spatial_average(raw: &RawRun, last_time_only: bool) -> Result<Run> {
    let d = raw.dims();
    let times: Vec<usize> = if last_time_only {
        vec![d.n_time - 1]
    } else {
        (0..d.n_time).collect()
    };
    let uniform = vec![1.0; d.n_cell];
    let weights = raw.cell_weights().unwrap_or(&uniform);
    let weight_sum: f64 = weights.iter().sum();
    let denom = weight_sum * d.n_level as f64;

    let multi = times.len() > 1;
    let mut features = Vec::with_capacity(d.n_var * times.len());
    let mut names = Vec::with_capacity(d.n_var * times.len());
    for v in 0..d.n_var {
        for &t in &times {
            let mut sum = 0.0;
            for l in 0..d.n_level {
                for c in 0..d.n_cell {
                    sum += weights[c] * raw.value(v, t, l, c);
                }
            }
            features.push(sum / denom);
            if multi {
                names.push(format!("{}@{}", raw.variable_names()[v], t));
            } else {
                names.push(raw.variable_names()[v].clone());
            }
        }
    }
    Run::new(raw.id(), features, names.into())
}

/// Why a feature was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropReason {
    ZeroVariance,
    Redundant,
    LowTemporalVariability,
}

/// Which features survive filtering, with per-dropped-feature reasons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterMask {
    pub kept: Vec<bool>,
    pub reasons: Vec<Option<DropReason>>,
    /// Schema the mask was fitted on.
    pub variable_names: Vec<String>,
}

impl FilterMask {
    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn dropped(&self) -> Vec<(&str, DropReason)> {
        self.variable_names
            .iter()
            .zip(&self.reasons)
            .filter_map(|(n, r)| r.map(|r| (n.as_str(), r)))
            .collect()
    }
}

fn mean(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in xs {
        s += x;
    }
    s / xs.len() as f64
}

fn sample_variance(xs: &[f64], m: f64) -> f64 {
    let mut s = 0.0;
    for x in xs {
        let d = x - m;
        s += d * d;
    }
    s / (xs.len() - 1) as f64
}

fn pearson(xs: &[f64], ys: &[f64], mx: f64, my: f64, vx: f64, vy: f64) -> f64 {
    let mut cov = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
    }
    cov /= (xs.len() - 1) as f64;
    cov / (vx.sqrt() * vy.sqrt())
}

/// Splits `name@t` into its variable prefix and time index.
fn time_suffix(name: &str) -> Option<(&str, u64)> {
    let (prefix, suffix) = name.rsplit_once('@')?;
    suffix.parse::<u64>().ok().map(|t| (prefix, t))
}

/// Fits a filter on the trusted ensemble.
///
/// Rules apply in order and each later rule only sees survivors:
/// 1. sample variance below 1e-12 drops the feature (ZeroVariance);
/// 2. for each pair in index order with |Pearson r| above `corr_threshold`,
///    the higher-indexed feature drops (Redundant);
/// 3. a variable whose surviving per-time-step ensemble means have a
///    coefficient of variation below `cv_threshold` drops entirely
///    (LowTemporalVariability; only applies to `name@t` feature groups with
///    at least two surviving steps).
///
/// Computing rule 3 on survivors makes refitting on the filtered ensemble a
/// no-op at the same thresholds.
pub fn fit_filter(trusted: &Ensemble, corr_threshold: f64, cv_threshold: f64) -> Result<FilterMask> {
    if trusted.len() < 2 {
        return Err(HectError::DegenerateEnsemble(
            "filter fitting needs at least 2 trusted runs".into(),
        ));
    }
    if !(0.0 < corr_threshold && corr_threshold < 1.0) {
        return Err(HectError::InvalidConfig(format!(
            "corr_threshold {corr_threshold} outside (0,1)"
        )));
    }
    if cv_threshold.is_nan() || cv_threshold < 0.0 {
        return Err(HectError::InvalidConfig(format!(
            "cv_threshold {cv_threshold} must be nonnegative"
        )));
    }

    let p = trusted.feature_count();
    let columns: Vec<Vec<f64>> = (0..p).map(|j| trusted.feature_column(j)).collect();
    let means: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    let variances: Vec<f64> = columns
        .iter()
        .zip(&means)
        .map(|(c, &m)| sample_variance(c, m))
        .collect();

    let mut kept = vec![true; p];
    let mut reasons: Vec<Option<DropReason>> = vec![None; p];

    for j in 0..p {
        if variances[j] < VAR_TOL {
            kept[j] = false;
            reasons[j] = Some(DropReason::ZeroVariance);
        }
    }

    for i in 0..p {
        if !kept[i] {
            continue;
        }
        for j in i + 1..p {
            if !kept[j] {
                continue;
            }
            let r = pearson(
                &columns[i],
                &columns[j],
                means[i],
                means[j],
                variances[i],
                variances[j],
            );
            if r.abs() > corr_threshold {
                kept[j] = false;
                reasons[j] = Some(DropReason::Redundant);
            }
        }
    }

    // group surviving `name@t` features by variable prefix
    let names = trusted.variable_names();
    let mut groups: Vec<(&str, Vec<(u64, usize)>)> = Vec::new();
    for j in 0..p {
        if !kept[j] {
            continue;
        }
        if let Some((prefix, t)) = time_suffix(&names[j]) {
            match groups.iter_mut().find(|(g, _)| *g == prefix) {
                Some((_, members)) => members.push((t, j)),
                None => groups.push((prefix, vec![(t, j)])),
            }
        }
    }
    for (_, mut members) in groups {
        if members.len() < 2 {
            continue;
        }
        members.sort_by_key(|&(t, _)| t);
        let series: Vec<f64> = members.iter().map(|&(_, j)| means[j]).collect();
        let sm = mean(&series);
        let ssd = sample_variance(&series, sm).sqrt();
        let cv = if sm.abs() < 1e-12 {
            if ssd < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            ssd / sm.abs()
        };
        if cv < cv_threshold {
            for (_, j) in members {
                kept[j] = false;
                reasons[j] = Some(DropReason::LowTemporalVariability);
            }
        }
    }

    Ok(FilterMask {
        kept,
        reasons,
        variable_names: names.to_vec(),
    })
}

/// Drops masked features, preserving run order, ids and role.
pub fn apply_filter(e: &Ensemble, mask: &FilterMask) -> Result<Ensemble> {
    if e.variable_names() != mask.variable_names.as_slice() {
        return Err(HectError::SchemaMismatch(
            "filter mask was fitted on a different schema".into(),
        ));
    }
    if mask.kept_count() == 0 {
        return Err(HectError::DegenerateEnsemble(
            "filter mask keeps no features".into(),
        ));
    }
    let names: Arc<[String]> = mask
        .variable_names
        .iter()
        .zip(&mask.kept)
        .filter(|(_, &k)| k)
        .map(|(n, _)| n.clone())
        .collect();
    let runs: Result<Vec<Run>> = e
        .runs()
        .iter()
        .map(|run| {
            let feats: Vec<f64> = run
                .features()
                .iter()
                .zip(&mask.kept)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .collect();
            Run::new(run.id(), feats, names.clone())
        })
        .collect();
    Ensemble::new(runs?, e.role())
}

/// Per-feature location/scale fitted on the trusted ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub variable_names: Vec<String>,
    /// Provenance of the fitting ensemble.
    pub fitted_on: String,
}

/// Fits means and sample standard deviations on the trusted ensemble.
pub fn fit_standardize(trusted: &Ensemble) -> Result<StandardizationParams> {
    if trusted.len() < 2 {
        return Err(HectError::DegenerateEnsemble(
            "standardization needs at least 2 trusted runs".into(),
        ));
    }
    let p = trusted.feature_count();
    let mut means = Vec::with_capacity(p);
    let mut sds = Vec::with_capacity(p);
    for j in 0..p {
        let col = trusted.feature_column(j);
        let m = mean(&col);
        let sd = sample_variance(&col, m).sqrt();
        if sd < SD_TOL {
            return Err(HectError::DegenerateVariance(
                trusted.variable_names()[j].clone(),
            ));
        }
        means.push(m);
        sds.push(sd);
    }
    Ok(StandardizationParams {
        means,
        sds,
        variable_names: trusted.variable_names().to_vec(),
        fitted_on: trusted.fingerprint(),
    })
}

/// Maps each feature to (x - mean) / sd using trusted-ensemble statistics.
pub fn apply_standardize(e: &Ensemble, params: &StandardizationParams) -> Result<Ensemble> {
    if e.variable_names() != params.variable_names.as_slice() {
        return Err(HectError::SchemaMismatch(
            "standardization params were fitted on a different schema".into(),
        ));
    }
    let names = e.schema().clone();
    let runs: Result<Vec<Run>> = e
        .runs()
        .iter()
        .map(|run| {
            let feats: Vec<f64> = run
                .features()
                .iter()
                .enumerate()
                .map(|(j, v)| (v - params.means[j]) / params.sds[j])
                .collect();
            Run::new(run.id(), feats, names.clone())
        })
        .collect();
    Ensemble::new(runs?, e.role())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Role;

    fn raw(values: Vec<f64>, dims: RawDims, weights: Option<Vec<f64>>) -> RawRun {
        let names = (0..dims.n_var).map(|v| format!("VAR{v}")).collect();
        RawRun::new("r0", values, dims, weights, names).unwrap()
    }

    fn ensemble_from_rows(rows: &[&[f64]], names: &[&str]) -> Ensemble {
        let schema: Arc<[String]> = names.iter().map(|s| s.to_string()).collect();
        let runs = rows
            .iter()
            .enumerate()
            .map(|(i, r)| Run::new(format!("t{i}"), r.to_vec(), schema.clone()).unwrap())
            .collect();
        Ensemble::new(runs, Role::Trusted).unwrap()
    }

    #[test]
    fn average_of_constant_field_is_the_constant() {
        let dims = RawDims {
            n_var: 2,
            n_time: 1,
            n_level: 3,
            n_cell: 4,
        };
        let mut values = vec![7.0; 12];
        values.extend(vec![-2.5; 12]);
        let run = spatial_average(&raw(values, dims, None), false).unwrap();
        assert_eq!(run.features(), &[7.0, -2.5]);
        assert_eq!(run.variable_names(), &["VAR0", "VAR1"]);
    }

    #[test]
    fn unweighted_mean_of_two_cells() {
        let dims = RawDims {
            n_var: 1,
            n_time: 1,
            n_level: 1,
            n_cell: 2,
        };
        let run = spatial_average(&raw(vec![1.0, 3.0], dims, Some(vec![1.0, 1.0])), false).unwrap();
        assert_eq!(run.features(), &[2.0]);
    }

    #[test]
    fn weighted_mean_of_two_cells() {
        // (3*1 + 1*3) / 4 = 1.5
        let dims = RawDims {
            n_var: 1,
            n_time: 1,
            n_level: 1,
            n_cell: 2,
        };
        let run = spatial_average(&raw(vec![1.0, 3.0], dims, Some(vec![3.0, 1.0])), false).unwrap();
        assert_eq!(run.features(), &[1.5]);
    }

    #[test]
    fn multi_time_features_are_variable_major_with_suffixes() {
        let dims = RawDims {
            n_var: 2,
            n_time: 3,
            n_level: 1,
            n_cell: 1,
        };
        let values = vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        let run = spatial_average(&raw(values.clone(), dims, None), false).unwrap();
        assert_eq!(run.features(), &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]);
        assert_eq!(
            run.variable_names(),
            &["VAR0@0", "VAR0@1", "VAR0@2", "VAR1@0", "VAR1@1", "VAR1@2"]
        );
        let last = spatial_average(&raw(values, dims, None), true).unwrap();
        assert_eq!(last.features(), &[3.0, 30.0]);
        assert_eq!(last.variable_names(), &["VAR0", "VAR1"]);
    }

    #[test]
    fn average_invariant_to_cell_permutation() {
        let dims = RawDims {
            n_var: 1,
            n_time: 1,
            n_level: 1,
            n_cell: 3,
        };
        let a = spatial_average(
            &raw(vec![1.0, 2.0, 4.0], dims, Some(vec![0.5, 1.5, 2.0])),
            false,
        )
        .unwrap();
        let b = spatial_average(
            &raw(vec![4.0, 1.0, 2.0], dims, Some(vec![2.0, 0.5, 1.5])),
            false,
        )
        .unwrap();
        assert!((a.features()[0] - b.features()[0]).abs() < 1e-15);
    }

    #[test]
    fn filter_drops_constant_feature() {
        let e = ensemble_from_rows(
            &[&[1.0, 5.0], &[2.0, 5.0], &[3.0, 5.0]],
            &["varies", "const"],
        );
        let mask = fit_filter(&e, 0.98, 0.0).unwrap();
        assert_eq!(mask.kept, vec![true, false]);
        assert_eq!(mask.reasons[1], Some(DropReason::ZeroVariance));
    }

    #[test]
    fn filter_drops_later_duplicate_as_redundant() {
        let e = ensemble_from_rows(
            &[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0], &[2.5, 2.5]],
            &["a", "a_copy"],
        );
        let mask = fit_filter(&e, 0.98, 0.0).unwrap();
        assert_eq!(mask.kept, vec![true, false]);
        assert_eq!(mask.reasons[1], Some(DropReason::Redundant));
    }

    #[test]
    fn filter_keeps_moderately_correlated_pair() {
        // x = [-2,-1,0,1,2], y = [-2,0,2,-1,1]: both mean 0, sum of squares 10,
        // sum of products 5, so r = 5/10 = 0.5 exactly
        let e = ensemble_from_rows(
            &[
                &[-2.0, -2.0],
                &[-1.0, 0.0],
                &[0.0, 2.0],
                &[1.0, -1.0],
                &[2.0, 1.0],
            ],
            &["x", "y"],
        );
        let cols: Vec<Vec<f64>> = (0..2).map(|j| e.feature_column(j)).collect();
        let r = pearson(&cols[0], &cols[1], 0.0, 0.0, 2.5, 2.5);
        assert!((r - 0.5).abs() < 1e-12);
        let mask = fit_filter(&e, 0.98, 0.0).unwrap();
        assert_eq!(mask.kept, vec![true, true]);
    }

    #[test]
    fn filter_drops_flat_time_series() {
        // "flat" hovers around 100 at every step, "moving" ramps 10 -> 30;
        // each column gets its own cross-run deviation direction so no pair
        // trips the redundancy rule (pairwise |r| <= cos(pi/7) ~ 0.90)
        let dirs: Vec<[f64; 3]> = (0..7)
            .map(|k| {
                let theta = k as f64 * std::f64::consts::PI / 7.0;
                let (c, s) = (theta.cos(), theta.sin());
                let e2 = 1.0 / 3.0f64.sqrt();
                [
                    c + s * e2,
                    -c + s * e2,
                    -2.0 * s * e2,
                ]
            })
            .collect();
        let col = |base: f64, k: usize, run: usize| base + 0.1 * dirs[k][run];
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|run| {
                vec![
                    col(100.0, 0, run),
                    col(100.0, 1, run),
                    col(100.0, 2, run),
                    col(10.0, 3, run),
                    col(20.0, 4, run),
                    col(30.0, 5, run),
                    col(5.0, 6, run),
                ]
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let e = ensemble_from_rows(
            &refs,
            &["flat@0", "flat@1", "flat@2", "moving@0", "moving@1", "moving@2", "scalar"],
        );
        let mask = fit_filter(&e, 0.98, 0.01).unwrap();
        assert_eq!(
            mask.kept,
            vec![false, false, false, true, true, true, true]
        );
        assert_eq!(mask.reasons[0], Some(DropReason::LowTemporalVariability));
        assert_eq!(mask.reasons[1], Some(DropReason::LowTemporalVariability));
    }

    #[test]
    fn filter_refit_is_idempotent() {
        let e = ensemble_from_rows(
            &[
                &[1.0, 1.0, 5.0, 0.3],
                &[2.0, 2.0, 5.0, -0.7],
                &[3.0, 3.0, 5.0, 1.2],
                &[2.2, 2.2, 5.0, 0.1],
            ],
            &["a", "a_copy", "const", "b"],
        );
        let mask = fit_filter(&e, 0.98, 0.0).unwrap();
        let filtered = apply_filter(&e, &mask).unwrap();
        let mask2 = fit_filter(&filtered, 0.98, 0.0).unwrap();
        assert!(mask2.kept.iter().all(|&k| k));
    }

    #[test]
    fn apply_filter_identity_and_projection() {
        let e = ensemble_from_rows(
            &[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]],
            &["f1", "f2", "f3"],
        );
        let all = FilterMask {
            kept: vec![true, true, true],
            reasons: vec![None; 3],
            variable_names: e.variable_names().to_vec(),
        };
        let same = apply_filter(&e, &all).unwrap();
        assert_eq!(same.runs()[0].features(), e.runs()[0].features());

        let drop_mid = FilterMask {
            kept: vec![true, false, true],
            reasons: vec![None, Some(DropReason::ZeroVariance), None],
            variable_names: e.variable_names().to_vec(),
        };
        let cut = apply_filter(&e, &drop_mid).unwrap();
        assert_eq!(cut.variable_names(), &["f1", "f3"]);
        assert_eq!(cut.runs()[1].features(), &[4.0, 6.0]);
        assert_eq!(cut.runs()[1].id(), "t1");
    }

    #[test]
    fn apply_filter_rejects_foreign_schema() {
        let e = ensemble_from_rows(&[&[1.0], &[2.0]], &["f1"]);
        let mask = FilterMask {
            kept: vec![true],
            reasons: vec![None],
            variable_names: vec!["other".into()],
        };
        assert!(matches!(
            apply_filter(&e, &mask),
            Err(HectError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn standardize_maps_known_value() {
        // mean 5, sd 2 -> 7 maps to 1.0
        let e = ensemble_from_rows(&[&[3.0], &[5.0], &[7.0]], &["f"]);
        let params = fit_standardize(&e).unwrap();
        assert!((params.means[0] - 5.0).abs() < 1e-15);
        assert!((params.sds[0] - 2.0).abs() < 1e-15);
        let z = apply_standardize(&e, &params).unwrap();
        assert!((z.runs()[2].features()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardizing_fitting_ensemble_centers_and_scales() {
        let e = ensemble_from_rows(
            &[
                &[1.0, 10.0],
                &[2.0, 30.0],
                &[4.0, 15.0],
                &[8.0, 22.0],
                &[3.0, 19.0],
            ],
            &["a", "b"],
        );
        let params = fit_standardize(&e).unwrap();
        let z = apply_standardize(&e, &params).unwrap();
        for j in 0..2 {
            let col = z.feature_column(j);
            let m = mean(&col);
            let sd = sample_variance(&col, m).sqrt();
            assert!(m.abs() < 1e-10, "column {j} mean {m}");
            assert!((sd - 1.0).abs() < 1e-10, "column {j} sd {sd}");
        }
    }

    #[test]
    fn standardize_rejects_constant_feature() {
        let e = ensemble_from_rows(&[&[5.0], &[5.0], &[5.0]], &["const"]);
        assert!(matches!(
            fit_standardize(&e),
            Err(HectError::DegenerateVariance(_))
        ));
    }
}
