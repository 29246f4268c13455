//! Simplified PCA-score consistency baseline.
//!
//! Standardizes on trusted statistics, projects onto the top principal
//! components of the trusted sample covariance, and flags test runs whose
//! scores stray beyond a z-threshold in enough components. This exists as a
//! comparison point for the classifier tests, not as a port of any released
//! tool.

use crate::dataset::{Decision, Ensemble, Run, TestReport};
use crate::eigen::symmetric_eigen;
use crate::error::{HectError, Result};

/// Trusted-ensemble PCA: standardization, orthonormal components and their
/// explained variances.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// `components[k]` is the k-th principal axis (length = feature count).
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the trusted sample covariance, non-increasing.
    pub explained_variance: Vec<f64>,
    pub variable_names: Vec<String>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

/// Fits PCA on the trusted ensemble, keeping at most
/// `min(n_pc, features, runs - 1)` components.
///
/// Eigenvector signs are fixed so each component's largest-magnitude
/// coordinate (lowest index on ties) is positive.
pub fn fit_pca(trusted: &Ensemble, n_pc: usize) -> Result<PcaModel> {
    let m = trusted.len();
    if m < 2 {
        return Err(HectError::DegenerateEnsemble(
            "PCA needs at least 2 trusted runs".into(),
        ));
    }
    if n_pc == 0 {
        return Err(HectError::InvalidConfig("n_pc must be at least 1".into()));
    }
    let p = trusted.feature_count();

    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    for j in 0..p {
        let col = trusted.feature_column(j);
        let mean: f64 = col.iter().sum::<f64>() / m as f64;
        let var: f64 = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64;
        let sd = var.sqrt();
        if sd < 1e-12 {
            return Err(HectError::DegenerateVariance(
                trusted.variable_names()[j].clone(),
            ));
        }
        means[j] = mean;
        sds[j] = sd;
    }

    // standardized data, then its sample covariance
    let z: Vec<Vec<f64>> = trusted
        .runs()
        .iter()
        .map(|r| {
            r.features()
                .iter()
                .enumerate()
                .map(|(j, x)| (x - means[j]) / sds[j])
                .collect()
        })
        .collect();
    let mut cov = vec![vec![0.0; p]; p];
    for row in &z {
        for i in 0..p {
            for j in i..p {
                cov[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in i..p {
            cov[i][j] /= (m - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }

    let (values, vectors) = symmetric_eigen(&cov);
    let keep = n_pc.min(p).min(m - 1);
    let mut components = Vec::with_capacity(keep);
    let mut explained = Vec::with_capacity(keep);
    for k in 0..keep {
        let mut vec_k = vectors[k].clone();
        let mut pivot = 0;
        for (j, x) in vec_k.iter().enumerate() {
            if x.abs() > vec_k[pivot].abs() {
                pivot = j;
            }
        }
        if vec_k[pivot] < 0.0 {
            for x in vec_k.iter_mut() {
                *x = -*x;
            }
        }
        components.push(vec_k);
        explained.push(values[k].max(0.0));
    }

    Ok(PcaModel {
        means,
        sds,
        components,
        explained_variance: explained,
        variable_names: trusted.variable_names().to_vec(),
    })
}

/// Scores of one run: components applied to the standardized features.
pub fn project(model: &PcaModel, run: &Run) -> Result<Vec<f64>> {
    if run.variable_names() != model.variable_names.as_slice() {
        return Err(HectError::SchemaMismatch(
            "run does not match the PCA model schema".into(),
        ));
    }
    let z: Vec<f64> = run
        .features()
        .iter()
        .enumerate()
        .map(|(j, x)| (x - model.means[j]) / model.sds[j])
        .collect();
    Ok(model
        .components
        .iter()
        .map(|comp| comp.iter().zip(&z).map(|(c, v)| c * v).sum())
        .collect())
}

/// Scores for every run of an ensemble, in run order.
pub fn project_ensemble(model: &PcaModel, e: &Ensemble) -> Result<Vec<Vec<f64>>> {
    e.runs().iter().map(|r| project(model, r)).collect()
}

/// PCA-score consistency check.
///
/// A test run's score k is extreme when `|score_k|` exceeds `z_threshold`
/// times the trusted-score standard deviation of component k; a run fails
/// when at least `fail_count` of its scores are extreme; the ensemble fails
/// when a strict majority of test runs fail.
pub fn pca_ect(
    model: &PcaModel,
    trusted_scores: &[Vec<f64>],
    test: &Ensemble,
    z_threshold: f64,
    fail_count: usize,
    alpha: f64,
) -> Result<TestReport> {
    let n_pc = model.n_components();
    if trusted_scores.is_empty() {
        return Err(HectError::ShapeMismatch("no trusted scores".into()));
    }
    if trusted_scores.iter().any(|s| s.len() != n_pc) {
        return Err(HectError::ShapeMismatch(format!(
            "trusted scores must have {n_pc} components"
        )));
    }
    if z_threshold.is_nan() || z_threshold <= 0.0 {
        return Err(HectError::InvalidConfig(format!(
            "z_threshold {z_threshold} must be positive"
        )));
    }
    if fail_count == 0 {
        return Err(HectError::InvalidConfig("fail_count must be at least 1".into()));
    }
    let mut warnings = Vec::new();
    if fail_count > n_pc {
        warnings.push(format!(
            "fail_count {fail_count} exceeds the {n_pc} retained components; no run can fail"
        ));
    }

    let m = trusted_scores.len();
    let mut score_sds = vec![0.0; n_pc];
    for k in 0..n_pc {
        let mean: f64 = trusted_scores.iter().map(|s| s[k]).sum::<f64>() / m as f64;
        let var: f64 = trusted_scores
            .iter()
            .map(|s| (s[k] - mean) * (s[k] - mean))
            .sum::<f64>()
            / (m - 1) as f64;
        score_sds[k] = var.sqrt();
    }

    let mut failing_runs = 0usize;
    for run in test.runs() {
        let scores = project(model, run)?;
        let extreme = scores
            .iter()
            .zip(&score_sds)
            .filter(|(s, sd)| s.abs() > z_threshold * **sd)
            .count();
        if extreme >= fail_count {
            failing_runs += 1;
        }
    }
    let n_test = test.len();
    let decision = if 2 * failing_runs > n_test {
        Decision::Fail
    } else {
        Decision::Pass
    };

    TestReport::from_verdict(
        failing_runs as f64 / n_test as f64,
        alpha,
        decision,
        n_test as f64 / (m + n_test) as f64,
        0,
        None,
        warnings,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Role;
    use std::sync::Arc;

    fn ensemble(role: Role, prefix: &str, rows: &[Vec<f64>], names: &[&str]) -> Ensemble {
        let schema: Arc<[String]> = names.iter().map(|s| s.to_string()).collect();
        let runs = rows
            .iter()
            .enumerate()
            .map(|(i, r)| Run::new(format!("{prefix}{i}"), r.clone(), schema.clone()).unwrap())
            .collect();
        Ensemble::new(runs, role).unwrap()
    }

    #[test]
    fn colinear_data_yields_diagonal_component() {
        // points on y = x: first component is (1,1)/sqrt2, second variance 0
        let rows: Vec<Vec<f64>> = vec![
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, 3.0],
            vec![5.0, 5.0],
        ];
        let e = ensemble(Role::Trusted, "t", &rows, &["x", "y"]);
        let model = fit_pca(&e, 2).unwrap();
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert!((model.components[0][0] - inv_sqrt2).abs() < 1e-10);
        assert!((model.components[0][1] - inv_sqrt2).abs() < 1e-10);
        assert!(model.explained_variance[1].abs() < 1e-10);
    }

    #[test]
    fn component_count_clamps_to_rank() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                (0..10)
                    .map(|j| ((i * 7 + j * 3) % 11) as f64 + 0.1 * i as f64)
                    .collect()
            })
            .collect();
        let names: Vec<String> = (0..10).map(|j| format!("f{j}")).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let e = ensemble(Role::Trusted, "t", &rows, &refs);
        let model = fit_pca(&e, 50).unwrap();
        assert!(model.n_components() <= 10);

        // 3 runs cap at 2 components regardless of feature count
        let small = ensemble(
            Role::Trusted,
            "s",
            &[
                vec![1.0, 0.0, 3.0],
                vec![2.0, 1.0, 1.0],
                vec![0.0, 2.0, 2.0],
            ],
            &["a", "b", "c"],
        );
        assert_eq!(fit_pca(&small, 50).unwrap().n_components(), 2);
    }

    #[test]
    fn projection_examples() {
        let rows: Vec<Vec<f64>> = vec![
            vec![1.0, 10.0],
            vec![2.0, 14.0],
            vec![3.0, 11.0],
            vec![4.0, 17.0],
            vec![5.0, 13.0],
        ];
        let e = ensemble(Role::Trusted, "t", &rows, &["x", "y"]);
        let model = fit_pca(&e, 2).unwrap();

        // the trusted mean projects to the origin
        let mean_run = Run::new(
            "mean",
            model.means.clone(),
            e.schema().clone(),
        )
        .unwrap();
        for s in project(&model, &mean_run).unwrap() {
            assert!(s.abs() < 1e-10);
        }

        // trusted scores average to zero per component
        let scores = project_ensemble(&model, &e).unwrap();
        for k in 0..model.n_components() {
            let mean_k: f64 = scores.iter().map(|s| s[k]).sum::<f64>() / scores.len() as f64;
            assert!(mean_k.abs() < 1e-10);
        }
    }

    #[test]
    fn projection_is_component_dot_standardized() {
        let rows: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![2.0, 1.0], vec![4.0, 2.0], vec![6.0, 4.0]];
        let e = ensemble(Role::Trusted, "t", &rows, &["x", "y"]);
        let mut model = fit_pca(&e, 2).unwrap();
        // overwrite with a hand fixture: component (1,0) on standardized (3,7)
        model.components = vec![vec![1.0, 0.0]];
        model.explained_variance = vec![1.0];
        model.means = vec![0.0, 0.0];
        model.sds = vec![1.0, 1.0];
        let run = Run::new("r", vec![3.0, 7.0], e.schema().clone()).unwrap();
        assert_eq!(project(&model, &run).unwrap(), vec![3.0]);
    }

    #[test]
    fn score_variances_match_explained_variances() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let x = i as f64 * 0.37;
                vec![x.sin() * 2.0 + 0.1 * i as f64, x.cos() - 0.05 * i as f64, (x * 1.7).sin()]
            })
            .collect();
        let e = ensemble(Role::Trusted, "t", &rows, &["a", "b", "c"]);
        let model = fit_pca(&e, 3).unwrap();
        let scores = project_ensemble(&model, &e).unwrap();
        for k in 0..model.n_components() {
            let mean: f64 = scores.iter().map(|s| s[k]).sum::<f64>() / scores.len() as f64;
            let var: f64 = scores
                .iter()
                .map(|s| (s[k] - mean) * (s[k] - mean))
                .sum::<f64>()
                / (scores.len() - 1) as f64;
            assert!(
                (var - model.explained_variance[k]).abs() < 1e-8,
                "component {k}: score variance {var} vs eigenvalue {}",
                model.explained_variance[k]
            );
        }
    }

    /// Brute-force eigenvector oracle: power iteration with deflation and a
    /// fixed starting vector, fully independent of the Jacobi path.
    fn power_iteration_vectors(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut vectors = Vec::with_capacity(n);
        for k in 0..n {
            let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i + k) as f64 * 0.1).collect();
            for _ in 0..20_000 {
                let mut w = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        w[i] += a[i][j] * v[j];
                    }
                }
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-30 {
                    break;
                }
                for x in w.iter_mut() {
                    *x /= norm;
                }
                v = w;
            }
            let mut av = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    av[i] += a[i][j] * v[j];
                }
            }
            let lambda: f64 = v.iter().zip(&av).map(|(x, y)| x * y).sum();
            for i in 0..n {
                for j in 0..n {
                    a[i][j] -= lambda * v[i] * v[j];
                }
            }
            vectors.push(v);
        }
        vectors
    }

    #[test]
    fn jacobi_matches_power_iteration_oracle_on_5x5() {
        // identity-covariance fixture: 400 independent unit-variance draws
        let rows: Vec<Vec<f64>> = {
            use rand::Rng;
            use rand_chacha::rand_core::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
            (0..400)
                .map(|_| {
                    (0..5)
                        .map(|_| {
                            // Box-Muller keeps the oracle independent of the
                            // library's samplers
                            let u1: f64 = rng.gen_range(1e-12..1.0);
                            let u2: f64 = rng.gen_range(0.0..1.0);
                            (-2.0 * u1.ln()).sqrt()
                                * (2.0 * std::f64::consts::PI * u2).cos()
                        })
                        .collect()
                })
                .collect()
        };
        let e = ensemble(Role::Trusted, "t", &rows, &["a", "b", "c", "d", "e"]);
        let model = fit_pca(&e, 5).unwrap();

        // explained variances of an identity covariance are all ~1
        for (k, ev) in model.explained_variance.iter().enumerate() {
            assert!(
                (ev - 1.0).abs() < 0.35,
                "component {k}: explained variance {ev} far from 1"
            );
        }

        // independent oracle: the sample covariance of the standardized data
        let z: Vec<Vec<f64>> = e
            .runs()
            .iter()
            .map(|r| {
                r.features()
                    .iter()
                    .enumerate()
                    .map(|(j, x)| (x - model.means[j]) / model.sds[j])
                    .collect()
            })
            .collect();
        let mut cov = vec![vec![0.0; 5]; 5];
        for row in &z {
            for i in 0..5 {
                for j in 0..5 {
                    cov[i][j] += row[i] * row[j];
                }
            }
        }
        for row in cov.iter_mut() {
            for x in row.iter_mut() {
                *x /= (rows.len() - 1) as f64;
            }
        }
        let oracle_vecs = power_iteration_vectors(cov.clone());

        for k in 0..5 {
            // Rayleigh quotient of the oracle vector against the covariance
            let v = &oracle_vecs[k];
            let mut av = vec![0.0; 5];
            for i in 0..5 {
                for j in 0..5 {
                    av[i] += cov[i][j] * v[j];
                }
            }
            let lambda: f64 = v.iter().zip(&av).map(|(x, y)| x * y).sum();
            assert!(
                (lambda - model.explained_variance[k]).abs() < 1e-6,
                "component {k}: oracle eigenvalue {lambda} vs {}",
                model.explained_variance[k]
            );
            // eigenvectors agree up to sign
            let dot: f64 = v
                .iter()
                .zip(&model.components[k])
                .map(|(a, b)| a * b)
                .sum();
            assert!(
                (dot.abs() - 1.0).abs() < 1e-5,
                "component {k}: |cos| with oracle vector is {}",
                dot.abs()
            );
        }
    }

    #[test]
    fn components_are_orthonormal() {
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|i| {
                let x = i as f64;
                vec![x, (x * 0.9).sin() * 3.0, x * 0.5 + (x * 2.3).cos(), (x * 0.31).tan().atan()]
            })
            .collect();
        let e = ensemble(Role::Trusted, "t", &rows, &["a", "b", "c", "d"]);
        let model = fit_pca(&e, 4).unwrap();
        for p in 0..model.n_components() {
            for q in 0..model.n_components() {
                let dot: f64 = model.components[p]
                    .iter()
                    .zip(&model.components[q])
                    .map(|(a, b)| a * b)
                    .sum();
                let expect = if p == q { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-8, "components {p},{q}: {dot}");
            }
        }
    }

    #[test]
    fn reconstruction_error_non_increasing_in_k() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let x = i as f64;
                vec![x, (x * 1.1).sin() * 2.0, (x * 0.7).cos() * 1.5, x * 0.2 - (x * 0.43).sin()]
            })
            .collect();
        let e = ensemble(Role::Trusted, "t", &rows, &["a", "b", "c", "d"]);
        let model = fit_pca(&e, 4).unwrap();
        let scores = project_ensemble(&model, &e).unwrap();

        let z: Vec<Vec<f64>> = e
            .runs()
            .iter()
            .map(|r| {
                r.features()
                    .iter()
                    .enumerate()
                    .map(|(j, x)| (x - model.means[j]) / model.sds[j])
                    .collect()
            })
            .collect();

        let mut prev = f64::INFINITY;
        for k in 1..=model.n_components() {
            let mut err = 0.0;
            for (zi, si) in z.iter().zip(&scores) {
                for j in 0..zi.len() {
                    let mut recon = 0.0;
                    for c in 0..k {
                        recon += si[c] * model.components[c][j];
                    }
                    let d = zi[j] - recon;
                    err += d * d;
                }
            }
            assert!(err <= prev + 1e-10, "error grew at k={k}: {prev} -> {err}");
            prev = err;
        }
    }

    #[test]
    fn ect_passes_run_near_the_mean_and_fails_displaced_runs() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let x = i as f64 * 0.7;
                vec![x.sin(), x.cos(), (x * 1.3).sin()]
            })
            .collect();
        let e = ensemble(Role::Trusted, "t", &rows, &["a", "b", "c"]);
        let model = fit_pca(&e, 3).unwrap();
        let trusted_scores = project_ensemble(&model, &e).unwrap();

        // test runs equal to trusted runs near the center: pass
        let near = ensemble(
            Role::Test,
            "x",
            &[rows[3].clone(), rows[7].clone(), rows[11].clone()],
            &["a", "b", "c"],
        );
        let report = pca_ect(&model, &trusted_scores, &near, 2.0, 1, 0.05).unwrap();
        assert_eq!(report.decision, Decision::Pass);

        // test runs displaced by 10 trusted sds along component 1: fail
        let sd0: f64 = {
            let mean: f64 =
                trusted_scores.iter().map(|s| s[0]).sum::<f64>() / trusted_scores.len() as f64;
            (trusted_scores
                .iter()
                .map(|s| (s[0] - mean) * (s[0] - mean))
                .sum::<f64>()
                / (trusted_scores.len() - 1) as f64)
                .sqrt()
        };
        let shifted: Vec<Vec<f64>> = rows[..3]
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, v)| v + 10.0 * sd0 * model.components[0][j] * model.sds[j])
                    .collect()
            })
            .collect();
        let far = ensemble(Role::Test, "x", &shifted, &["a", "b", "c"]);
        let report = pca_ect(&model, &trusted_scores, &far, 2.0, 1, 0.05).unwrap();
        assert_eq!(report.decision, Decision::Fail);
        assert_eq!(report.p_value, 0.05);
    }

    #[test]
    fn ect_warns_when_fail_count_unreachable() {
        let rows: Vec<Vec<f64>> = vec![
            vec![1.0, 0.0],
            vec![2.0, 1.0],
            vec![3.0, 0.5],
            vec![4.0, 1.5],
        ];
        let e = ensemble(Role::Trusted, "t", &rows, &["a", "b"]);
        let model = fit_pca(&e, 2).unwrap();
        let scores = project_ensemble(&model, &e).unwrap();
        let test = ensemble(Role::Test, "x", &[vec![2.5, 0.75]], &["a", "b"]);
        let report = pca_ect(&model, &scores, &test, 2.0, 99, 0.05).unwrap();
        assert_eq!(report.decision, Decision::Pass);
        assert!(!report.warnings.is_empty());
    }
}
