//! Sparse-feature removal, correlation pruning and chained-equation
//! imputation with predictive mean matching.

mod mice;
mod prune;

pub use mice::{mice_impute, ConditionalModel, ImputationModelSet, DEFAULT_CYCLES, PMM_DONORS};
pub use prune::{
    drop_sparse_features, pairwise_complete_correlation, prune_correlated, PruneDecision, PruneReport,
    PruneRule,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{simulate_cohort, Cohort, FeatureMeta, SimConfig, SurvivalOutcome};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cohort_from(columns: Vec<(&str, Vec<Option<f64>>)>) -> Cohort {
        let n = columns[0].1.len();
        let metas = columns
            .iter()
            .map(|(name, _)| FeatureMeta::continuous(*name, -100.0, 100.0))
            .collect();
        let records = (0..n).map(|i| columns.iter().map(|c| c.1[i]).collect()).collect();
        let outcomes = (0..n)
            .map(|i| if i % 3 == 0 { SurvivalOutcome::censored(i as u32 + 1) } else { SurvivalOutcome::event(i as u32 + 1) })
            .collect();
        Cohort::new(metas, records, outcomes).unwrap()
    }

    fn with_missing(v: &[f64], every: usize) -> Vec<Option<f64>> {
        v.iter()
            .enumerate()
            .map(|(i, x)| if every > 0 && i % every == 0 { None } else { Some(*x) })
            .collect()
    }

    #[test]
    fn sparse_features() {
        let full: Vec<Option<f64>> = (0..10).map(|i| Some(i as f64)).collect();
        let sparse: Vec<Option<f64>> = (0..10).map(|i| if i < 8 { None } else { Some(1.0) }).collect();
        let c = cohort_from(vec![("full", full), ("sparse", sparse)]);
        let (out, dropped) = drop_sparse_features(&c, 0.75).unwrap();
        assert_eq!(dropped, vec!["sparse".to_string()]);
        assert_eq!(out.feature_names(), vec!["full".to_string()]);
        let (out, dropped) = drop_sparse_features(&c, 1.0).unwrap();
        assert!(dropped.is_empty() && out.n_features() == 2);
        assert!(drop_sparse_features(&c, 0.0).is_err());
    }

    #[test]
    fn duplicated_column_pruned_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        let w: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        let c = cohort_from(vec![("a", with_missing(&v, 0)), ("b", with_missing(&v, 0)), ("c", with_missing(&w, 0))]);
        let (out, rep) = prune_correlated(&c, 0.7).unwrap();
        assert_eq!(rep.dropped.len(), 1);
        assert_eq!(out.n_features(), 2);
        assert!(rep.surviving.contains(&"c".to_string()));
        assert!(rep.to_json().unwrap().contains("\"dropped\""));
    }

    #[test]
    fn independent_noise_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let c = cohort_from(vec![("a", with_missing(&a, 0)), ("b", with_missing(&b, 0))]);
        let (_, rep) = prune_correlated(&c, 0.7).unwrap();
        assert!(rep.dropped.is_empty());
    }

    #[test]
    fn three_correlated_keep_best_observed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
        let noisy = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            z.iter().map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let (x1, x2, x3) = (noisy(&mut rng), noisy(&mut rng), noisy(&mut rng));
        let c = cohort_from(vec![
            ("x1", with_missing(&x1, 50)),
            ("x2", with_missing(&x2, 10)),
            ("x3", with_missing(&x3, 5)),
        ]);
        let (out, rep) = prune_correlated(&c, 0.7).unwrap();
        assert_eq!(out.feature_names(), vec!["x1".to_string()]);
        assert_eq!(rep.dropped, vec!["x2".to_string(), "x3".to_string()]);
        assert!(rep.decisions.iter().all(|d| d.rule == PruneRule::HigherMissingRate));
    }

    #[test]
    fn constant_column_never_prunes() {
        let c = cohort_from(vec![("k", vec![Some(1.0); 50]), ("v", (0..50).map(|i| Some(i as f64)).collect())]);
        let (_, rep) = prune_correlated(&c, 0.1).unwrap();
        assert!(rep.dropped.is_empty());
        assert_eq!(rep.correlation[0][1], 0.0);
    }

    #[test]
    fn prune_invariants_on_random_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let z: Vec<f64> = (0..300).map(|_| rng.sample(StandardNormal)).collect();
            let cols: Vec<(String, Vec<Option<f64>>)> = (0..6)
                .map(|k| {
                    let noise = rng.random_range(0.1..1.5);
                    let v: Vec<f64> = z.iter().map(|x| x + noise * rng.sample::<f64, _>(StandardNormal)).collect();
                    (format!("f{k}"), with_missing(&v, rng.random_range(0..20)))
                })
                .collect();
            let c = cohort_from(cols.iter().map(|(n, v)| (n.as_str(), v.clone())).collect());
            let (_, rep) = prune_correlated(&c, 0.7).unwrap();
            let idx = |n: &String| rep.feature_names.iter().position(|x| x == n).unwrap();
            for d in &rep.dropped {
                assert!(!rep.surviving.contains(d));
                assert!(rep.surviving.iter().any(|s| rep.correlation[idx(d)][idx(s)].abs() >= 0.7));
            }
            for a in &rep.surviving {
                for b in &rep.surviving {
                    if a != b {
                        assert!(rep.correlation[idx(a)][idx(b)].abs() < 0.7);
                    }
                }
            }
        }
    }

    #[test]
    fn mice_identity_and_constant() {
        let c = cohort_from(vec![("a", (0..20).map(|i| Some(i as f64)).collect()), ("b", vec![Some(2.0); 20])]);
        assert_eq!(mice_impute(&c, 3, 1).unwrap(), c);
        let mut k = vec![Some(4.0); 20];
        k[7] = None;
        let c = cohort_from(vec![("a", (0..20).map(|i| Some(i as f64)).collect()), ("k", k)]);
        let out = mice_impute(&c, 3, 1).unwrap();
        assert_eq!(out.value(7, 1), Some(4.0));
        assert_eq!(out.missing_cells(), 0);
    }

    #[test]
    fn mice_rejects_unobserved_feature() {
        let c = cohort_from(vec![("a", (0..5).map(|i| Some(i as f64)).collect()), ("z", vec![None; 5])]);
        assert!(matches!(mice_impute(&c, 2, 0), Err(crate::Error::NoObservedValues(_))));
        assert!(mice_impute(&c, 0, 0).is_err());
    }

    fn simulated_with_mcar() -> (Cohort, Cohort) {
        let names = [
            "chess_scale_score",
            "cognitive_performance_scale_score",
            "mobilisation",
            "mobility_equipment",
            "pressure_ulcer_risk_score",
            "age_value",
        ];
        let cfg = SimConfig {
            n: 3000,
            features: names.iter().map(|s| s.to_string()).collect(),
            latent_correlation: 0.7,
            target_event_fraction: None,
            followup_days: None,
            missing_rates: Default::default(),
            ..SimConfig::default()
        };
        let (full, _) = simulate_cohort(&cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let records: Vec<Vec<Option<f64>>> = full
            .records()
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .map(|(j, v)| if j < 5 && rng.random::<f64>() < 0.2 { None } else { *v })
                    .collect()
            })
            .collect();
        let masked = Cohort::new(full.features().to_vec(), records, full.outcomes().to_vec()).unwrap();
        (full, masked)
    }

    #[test]
    fn mice_beats_median_imputation() {
        let (full, masked) = simulated_with_mcar();
        let (done, set) = ImputationModelSet::fit(&masked, DEFAULT_CYCLES, 5).unwrap();
        assert_eq!(done.missing_cells(), 0);
        let mut se_mice = 0.0;
        let mut se_median = 0.0;
        for i in 0..full.len() {
            for j in 0..full.n_features() {
                match masked.value(i, j) {
                    Some(v) => assert_eq!(done.value(i, j), Some(v)),
                    None => {
                        let truth = full.value(i, j).unwrap();
                        let got = done.value(i, j).unwrap();
                        assert!(done.features()[j].contains(got));
                        se_mice += (got - truth).powi(2);
                        se_median += (set.medians[j] - truth).powi(2);
                    }
                }
            }
        }
        assert!(se_mice < se_median, "{se_mice} vs {se_median}");
        assert_eq!(mice_impute(&masked, DEFAULT_CYCLES, 5).unwrap(), done);
    }

    #[test]
    fn stored_models_complete_new_rows() {
        let (_, masked) = simulated_with_mcar();
        let train = masked.subset(&(0..2500).collect::<Vec<_>>());
        let test = masked.subset(&(2500..3000).collect::<Vec<_>>());
        let (_, set) = ImputationModelSet::fit(&train, 5, 9).unwrap();
        let a = set.apply(&test, 3).unwrap();
        assert_eq!(a, set.apply(&test, 3).unwrap());
        assert_eq!(a.missing_cells(), 0);
        for i in 0..test.len() {
            for j in 0..test.n_features() {
                if let Some(v) = test.value(i, j) {
                    assert_eq!(a.value(i, j), Some(v));
                }
                assert!(a.features()[j].contains(a.value(i, j).unwrap()));
            }
        }
        let json = serde_json::to_string(&set).unwrap();
        let back: ImputationModelSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back.apply(&test, 3).unwrap(), a);
    }
}
