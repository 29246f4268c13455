//! Property tests for the structural invariants: pooling is a labeled
//! bijection, the statistic is bounded and permutation-invariant, p-values
//! live on the add-one grid, filtering is idempotent, and averaging ignores
//! cell order.

use std::sync::Arc;

use proptest::prelude::*;

use hect::dataset::{estimate_class_prior, pool_and_label, Ensemble, Role, Run};
use hect::preprocess::{apply_filter, fit_filter, spatial_average, RawDims, RawRun};
use hect::testing::{p_value, test_statistic};

fn schema(p: usize) -> Arc<[String]> {
    (0..p).map(|j| format!("f{j}")).collect()
}

fn ensemble(rows: Vec<Vec<f64>>, role: Role, prefix: &str) -> Ensemble {
    let names = schema(rows[0].len());
    let runs = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| Run::new(format!("{prefix}{i}"), r, names.clone()).unwrap())
        .collect();
    Ensemble::new(runs, role).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pooling_is_a_labeled_bijection(
        trusted in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 1..20),
        test in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 1..8),
    ) {
        let t = ensemble(trusted.clone(), Role::Trusted, "t");
        let x = ensemble(test.clone(), Role::Test, "x");
        let d = pool_and_label(&t, &x).unwrap();

        prop_assert_eq!(d.n_samples(), trusted.len() + test.len());
        for (i, row) in trusted.iter().enumerate() {
            prop_assert_eq!(d.row(i), row.as_slice());
            prop_assert_eq!(d.labels()[i], 0);
        }
        for (i, row) in test.iter().enumerate() {
            prop_assert_eq!(d.row(trusted.len() + i), row.as_slice());
            prop_assert_eq!(d.labels()[trusted.len() + i], 1);
        }
        let prior = estimate_class_prior(&d);
        let expected = test.len() as f64 / (trusted.len() + test.len()) as f64;
        prop_assert_eq!(prior, expected);
    }

    #[test]
    fn statistic_bounded_and_permutation_invariant(
        pairs in prop::collection::vec((0.0f64..=1.0, 0u8..=1), 2..50),
        seed in any::<u64>(),
    ) {
        let mut pairs = pairs;
        // force both classes
        pairs[0].1 = 0;
        pairs[1].1 = 1;
        let r_hats: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();

        let stat = test_statistic(&r_hats, &labels).unwrap();
        let prior = labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64;
        let bound = prior.max(1.0 - prior).powi(2);
        prop_assert!(stat >= 0.0);
        prop_assert!(stat <= bound + 1e-15);

        // simultaneous permutation leaves the statistic unchanged (up to
        // reassociated summation)
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..pairs.len()).collect();
        perm.shuffle(&mut rng);
        let r2: Vec<f64> = perm.iter().map(|&i| r_hats[i]).collect();
        let l2: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        let stat2 = test_statistic(&r2, &l2).unwrap();
        prop_assert!((stat - stat2).abs() <= 1e-12 * (1.0 + stat.abs()));

        // zero iff every estimate equals the prior
        if stat == 0.0 {
            for r in &r_hats {
                prop_assert_eq!(*r, prior);
            }
        }
    }

    #[test]
    fn p_values_live_on_the_add_one_grid(
        nulls in prop::collection::vec(0.0f64..10.0, 1..200),
        observed in 0.0f64..10.0,
    ) {
        let p = p_value(observed, &nulls).unwrap();
        let n = nulls.len();
        let k = (p * (n + 1) as f64).round() as usize;
        prop_assert!(k >= 1 && k <= n + 1);
        prop_assert!((p - k as f64 / (n + 1) as f64).abs() < 1e-12);
        // monotone: a larger observed value never has a larger p
        let p_hi = p_value(observed + 1.0, &nulls).unwrap();
        prop_assert!(p_hi <= p);
    }

    #[test]
    fn filter_refit_drops_nothing(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 6), 4..12),
        dup_from in 0usize..6,
    ) {
        // append a duplicated column and a constant column to guarantee drops
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|mut r| {
                let dup = r[dup_from];
                r.push(dup);
                r.push(42.0);
                r
            })
            .collect();
        let e = ensemble(rows, Role::Trusted, "t");
        let mask = fit_filter(&e, 0.98, 0.0).unwrap();
        if mask.kept_count() == 0 {
            return Ok(());
        }
        let filtered = apply_filter(&e, &mask).unwrap();
        let mask2 = fit_filter(&filtered, 0.98, 0.0).unwrap();
        prop_assert!(mask2.kept.iter().all(|&k| k));
    }

    #[test]
    fn spatial_average_ignores_cell_order(
        cells in prop::collection::vec((0.1f64..5.0, -50.0f64..50.0), 2..10),
        seed in any::<u64>(),
    ) {
        let n_cell = cells.len();
        let weights: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let values: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let dims = RawDims { n_var: 1, n_time: 1, n_level: 1, n_cell };

        let base = RawRun::new(
            "r",
            values.clone(),
            dims,
            Some(weights.clone()),
            vec!["v".into()],
        )
        .unwrap();

        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n_cell).collect();
        perm.shuffle(&mut rng);
        let shuffled = RawRun::new(
            "r",
            perm.iter().map(|&i| values[i]).collect(),
            dims,
            Some(perm.iter().map(|&i| weights[i]).collect()),
            vec!["v".into()],
        )
        .unwrap();

        let a = spatial_average(&base, false).unwrap();
        let b = spatial_average(&shuffled, false).unwrap();
        prop_assert!((a.features()[0] - b.features()[0]).abs() < 1e-10);
    }
}
