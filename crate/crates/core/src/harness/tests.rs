use proptest::prelude::*;

use super::*;
use crate::cohort::{simulate_cohort, SimConfig};

fn small_cohort(n: usize, seed: u64) -> Cohort {
    let config = SimConfig {
        n,
        ..SimConfig::default()
    };
    simulate_cohort(&config, seed).expect("simulate").0
}

fn quick_config(algorithms: Vec<AlgorithmSpec>) -> ExperimentConfig {
    ExperimentConfig {
        algorithms,
        n_repeats: 1,
        master_seed: 11,
        mice_cycles: 2,
        ibs_grid_points: 8,
        ..ExperimentConfig::default()
    }
}

fn fast_zoo() -> Vec<AlgorithmSpec> {
    vec![
        AlgorithmSpec::new(Algorithm::Coxph),
        AlgorithmSpec::new(Algorithm::Xgboost).with_rounds(40),
        AlgorithmSpec::new(Algorithm::GradientBoosting).with_rounds(10),
        AlgorithmSpec::new(Algorithm::RandomForest).with_estimators(8),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn split_is_a_stratified_partition(
        events in proptest::collection::vec(any::<bool>(), 50..400),
        seed in any::<u64>(),
    ) {
        let outcomes: Vec<SurvivalOutcome> = events
            .iter()
            .enumerate()
            .map(|(i, &e)| if e { SurvivalOutcome::event(i as u32 + 1) } else { SurvivalOutcome::censored(i as u32 + 1) })
            .collect();
        let (train, test) = stratified_split(&outcomes, 0.9, seed);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..outcomes.len()).collect::<Vec<_>>());
        let frac = |rows: &[usize]| rows.iter().filter(|&&i| outcomes[i].event).count() as f64 / rows.len() as f64;
        let n_events = events.iter().filter(|&&e| e).count();
        // rounding inside each stratum moves the share by at most one row
        let slack = 1.0 / test.len() as f64;
        prop_assert!((frac(&test) - n_events as f64 / outcomes.len() as f64).abs() <= 0.02_f64.max(slack));
    }
}

#[test]
fn split_on_simulated_cohort_keeps_event_share() {
    let cohort = small_cohort(3000, 1);
    for seed in 0..10 {
        let (_, test) = stratified_split(cohort.outcomes(), 0.9, seed);
        let share = test.iter().filter(|&&i| cohort.outcomes()[i].event).count() as f64 / test.len() as f64;
        assert!((share - cohort.event_fraction()).abs() <= 0.02);
    }
}

#[test]
fn config_toml_round_trip_and_shorthand() {
    let text = r#"
        algorithms = ["coxph", { kind = "xgboost", n_rounds = 50 }, "rf"]
        n_repeats = 3
        master_seed = 9
        canary = true

        [metric_mapping]
        cindex = "harrell"
    "#;
    let config = ExperimentConfig::from_toml(text).unwrap();
    assert_eq!(config.algorithms[0], AlgorithmSpec::new(Algorithm::Coxph));
    assert_eq!(config.algorithms[1], AlgorithmSpec::new(Algorithm::Xgboost).with_rounds(50));
    assert_eq!(config.algorithms[2].kind, Algorithm::RandomForest);
    assert_eq!(config.horizons_days, vec![30, 91, 182, 365]);
    assert_eq!(config.metric_mapping.cindex, ConcordanceEstimator::Harrell);
    let again = ExperimentConfig::from_toml(&config.to_toml().unwrap()).unwrap();
    assert_eq!(again, config);
    assert_eq!(again.hash(), config.hash());
    assert_ne!(ExperimentConfig::default().hash(), config.hash());
}

#[test]
fn config_rejects_bad_values() {
    for text in [
        "n_repeats = 0",
        "train_fraction = 1.0",
        "inner_train_fraction = 0.0",
        "horizons_days = [91, 30]",
        "algorithms = [\"coxph\", \"cox\"]",
        "algorithms = [\"svm\"]",
        "unknown_key = 1",
    ] {
        assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
    }
}

#[test]
fn grid_and_curve_calibration() {
    let grid = horizon_grid(182, 30);
    assert_eq!(grid[0], 1.0);
    assert_eq!(*grid.last().unwrap(), 182.0);
    assert!(grid.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(horizon_grid(5, 30), vec![1.0, 2.0, 3.0, 4.0, 5.0]);

    let curve = [0.99, 0.9, 0.8, 0.6];
    let cal = calibrate_curve(&curve, 0.3);
    assert!((cal[3] - 0.3).abs() < 1e-12);
    assert!(cal.windows(2).all(|w| w[0] >= w[1]));
    let same = calibrate_curve(&curve, 0.6);
    for (a, b) in same.iter().zip(&curve) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(calibrate_curve(&[1.0, 1.0], 0.7), vec![0.7, 0.7]);
}

#[test]
fn fold_preparation_never_reads_test_values() {
    let cohort = small_cohort(600, 2);
    let config = quick_config(vec![]);
    let (train, test) = stratified_split(cohort.outcomes(), 0.9, 5);
    let a = prepare_fold(&cohort, &train, &test, &config, 3).unwrap();

    // scramble every test row's predictors and outcome
    let mut records = cohort.records().to_vec();
    let mut outcomes = cohort.outcomes().to_vec();
    for &i in &test {
        records[i] = records[(i * 7 + 1) % records.len()].iter().map(|_| None).collect();
        outcomes[i] = SurvivalOutcome::event(1);
    }
    let scrambled = Cohort::new(cohort.features().to_vec(), records, outcomes).unwrap();
    let b = prepare_fold(&scrambled, &train, &test, &config, 3).unwrap();
    assert_eq!(a.imputation, b.imputation);
    assert_eq!(a.prune, b.prune);
    assert_eq!(a.x_train, b.x_train);
    assert_eq!(a.feature_names, b.feature_names);
    assert!(a.x_train.iter().all(|v| v.is_finite()));
    assert!(b.x_test.iter().all(|v| v.is_finite()));
}

#[test]
fn canary_is_added_to_both_sides() {
    let cohort = small_cohort(400, 3);
    let config = quick_config(vec![]);
    let (train, test) = stratified_split(cohort.outcomes(), 0.9, 5);
    let mut fold = prepare_fold(&cohort, &train, &test, &config, 3).unwrap();
    let p = fold.x_train.ncols();
    fold.add_canary();
    assert_eq!(fold.feature_names.last().unwrap(), CANARY_FEATURE);
    assert!(fold.x_train.column(p).iter().all(|&v| v == 0.0));
    for (i, o) in fold.y_test.iter().enumerate() {
        assert_eq!(fold.x_test[[i, p]], f64::from(o.time_days));
    }
    // linear models never see a column that is constant in training
    let fitted = fit_algorithm(
        &AlgorithmSpec::new(Algorithm::Coxph),
        fold.x_train.view(),
        &fold.y_train,
        &fold.feature_names,
        1,
    )
    .unwrap();
    assert!(!fitted.columns.contains(&p));
    assert_eq!(fitted.risk_scores(fold.x_test.view()).unwrap().len(), fold.y_test.len());
}

#[test]
fn canary_gets_no_importance_from_any_family() {
    let cohort = small_cohort(700, 4);
    let mut config = quick_config(fast_zoo());
    config.canary = true;
    config.n_repeats = 2;
    let report = run_experiments(&cohort, &config).unwrap();
    for r in &report.repeats {
        assert!(r.failure.is_none());
        assert_eq!(r.features.last().unwrap(), CANARY_FEATURE);
        for a in &r.algorithms {
            let c = a.canary.as_ref().expect("canary check");
            assert!(c.is_clean(), "{}: {c:?}", a.algorithm);
            if a.algorithm == "XGB" || a.algorithm == "GB" {
                assert_eq!(c.shap_mass, Some(0.0));
            }
        }
    }
}

#[test]
fn single_repeat_is_byte_identical() {
    let cohort = small_cohort(500, 5);
    let config = quick_config(fast_zoo());
    let a = run_experiments(&cohort, &config).unwrap().to_json().unwrap();
    let b = run_experiments(&cohort, &config).unwrap().to_json().unwrap();
    assert_eq!(a, b);
}

#[test]
fn report_shape_and_exports() {
    let cohort = small_cohort(900, 6);
    let mut config = quick_config(vec![
        AlgorithmSpec::new(Algorithm::Coxph),
        AlgorithmSpec::new(Algorithm::Ridge),
        AlgorithmSpec::new(Algorithm::Xgboost).with_rounds(30),
    ]);
    config.n_repeats = 3;
    let report = run_experiments(&cohort, &config).unwrap();

    assert_eq!(report.schema_version, REPORT_SCHEMA_VERSION);
    assert_eq!(report.provenance.config_hash, config.hash());
    assert_eq!(report.provenance.data_hash, data_hash(&cohort));
    assert_eq!(report.table6.len(), 3);
    assert_eq!(report.table7.len(), 3 * 4);
    assert!(report
        .table6
        .windows(2)
        .all(|w| w[0].cindex.as_ref().unwrap().point >= w[1].cindex.as_ref().unwrap().point));
    for row in &report.table6 {
        for v in [&row.cindex, &row.harrell, &row.auroc] {
            let v = v.as_ref().unwrap();
            assert_eq!(v.n_repeats, 3);
            assert!(v.low <= v.point && v.point <= v.high);
            assert!(v.point > 0.5 && v.point < 1.0);
        }
    }
    for row in &report.table7 {
        assert_eq!(row.failed_repeats, 0, "{row:?}");
        assert_eq!(row.ibs.as_ref().unwrap().n_repeats, 3);
    }
    // raw values reproduce the aggregated cell
    let cox: Vec<f64> = report
        .repeats
        .iter()
        .map(|r| r.algorithms[0].overall.cindex.unwrap())
        .collect();
    let mean = cox.iter().sum::<f64>() / 3.0;
    assert!((report.table6_row("CoxPH").unwrap().cindex.as_ref().unwrap().point - mean).abs() < 1e-12);

    let json = report.to_json().unwrap();
    let back = ExperimentReport::from_json(&json).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.to_json().unwrap(), json);

    let md = report.to_markdown();
    assert!(md.contains("| Model | C-index | Harrell's C-index | AUROC |"));
    assert!(md.contains("| CoxPH | 0."));
    assert!(md.contains("6-month"));
    let cell = report.table6_row("XGB").unwrap().cindex.as_ref().unwrap().cell();
    assert!(md.contains(&cell));

    let csv = report.to_csv().unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    assert_eq!(reader.records().count(), 3 * 3 + 12 * 4);

    let dir = tempfile::tempdir().unwrap();
    for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
        let path = dir.path().join(format!("report.{}", format.extension()));
        export_report(&report, format, &path).unwrap();
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
    }
    assert_eq!(load_report(dir.path().join("report.json")).unwrap(), report);
    assert!(export_report(&report, ReportFormat::Json, dir.path().join("missing/report.json")).is_err());
}

#[test]
fn empty_report_renders_empty_tables() {
    let cohort = small_cohort(300, 7);
    let report = run_experiments(&cohort, &quick_config(vec![])).unwrap();
    assert!(report.table6.is_empty() && report.table7.is_empty());
    let md = report.to_markdown();
    assert!(md.contains("| Model | C-index | Harrell's C-index | AUROC |\n|---|---|---|---|\n"));
    let csv = report.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 1);
    let json = report.to_json().unwrap();
    assert_eq!(ExperimentReport::from_json(&json).unwrap().to_json().unwrap(), json);
}

#[test]
fn metric_failures_leave_gaps() {
    let cohort = small_cohort(400, 8);
    let mut config = quick_config(vec![AlgorithmSpec::new(Algorithm::Coxph)]);
    // no one can die before day 1, so the first horizon has no cases
    config.horizons_days = vec![2, 91];
    let cohort = {
        let outcomes: Vec<SurvivalOutcome> = cohort
            .outcomes()
            .iter()
            .map(|o| if o.time_days <= 2 { SurvivalOutcome::censored(3) } else { *o })
            .collect();
        Cohort::new(cohort.features().to_vec(), cohort.records().to_vec(), outcomes).unwrap()
    };
    let report = run_experiments(&cohort, &config).unwrap();
    let run = &report.repeats[0].algorithms[0];
    assert!(run.failures.iter().any(|f| f.contains("2d")), "{:?}", run.failures);
    let rows = report.table7_rows("CoxPH");
    assert!(rows[0].dynamic_auroc.is_none());
    assert_eq!(rows[0].failed_repeats, 1);
    assert!(rows[1].dynamic_auroc.is_some());
    assert!(report.to_markdown().contains("n/a"));
    // the overall AUROC averages over horizons, so it is missing as well
    assert!(report.table6[0].auroc.is_none());
    assert!(report.table6[0].cindex.is_some());
}

#[test]
fn stable_ordering_across_failures() {
    let rows = report::build_tables(&["A".into(), "B".into()], &[], &[]).0;
    assert_eq!(rows.iter().map(|r| r.algorithm.as_str()).collect::<Vec<_>>(), ["A", "B"]);
    assert!(rows.iter().all(|r| r.cindex.is_none() && r.failed_repeats == 0));
}
