//! Repeated train/test protocol over the model zoo, with per-horizon Platt
//! calibration and report emission.

mod config;
mod fold;
mod report;
mod train;

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use config::{horizon_label, Algorithm, AlgorithmSpec, ConcordanceEstimator, ExperimentConfig, MetricMapping};
pub use fold::{
    fit_algorithm, prepare_fold, stratified_split, varying_columns, FoldModel, PreparedFold, CANARY_FEATURE,
};
pub use report::{
    export_report, load_report, AlgorithmRun, CanaryCheck, ExperimentReport, HorizonMetrics, OverallMetrics,
    Provenance, ReportFormat, RepeatRecord, Table6Row, Table7Row, REPORT_SCHEMA_VERSION,
};
pub use train::{baseline_grid, train_bundle};

use crate::calibrate::{fit_platt_at_horizon, PlattScaler};
use crate::cohort::{Cohort, SurvivalOutcome};
use crate::ensemble::{predict_survival_any, FittedModel};
use crate::error::{Error, Result};
use crate::explain::tree_shap;
use crate::metrics::{dynamic_auc, harrell_cindex, integrated_brier, ipcw_cindex_with};
use crate::rng::derive_seed;
use crate::survcore::{censoring_km, StepFunction};

/// SHA-256 of the cohort's JSON form, hex encoded.
pub fn data_hash(cohort: &Cohort) -> String {
    let json = serde_json::to_vec(cohort).expect("cohort serialises");
    hex::encode(Sha256::digest(&json))
}

/// Runs every repeat and aggregates the tables. Failures of single fits or
/// metrics are recorded in the report and leave gaps in the tables.
pub fn run_experiments(cohort: &Cohort, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if cohort.is_empty() {
        return Err(Error::invalid("cohort is empty"));
    }
    let repeats: Vec<RepeatRecord> = (0..config.n_repeats)
        .into_par_iter()
        .map(|r| run_repeat(cohort, config, r))
        .collect();
    let names: Vec<String> = config.algorithms.iter().map(|a| a.label().to_string()).collect();
    let (table6, table7) = report::build_tables(&names, &config.horizons_days, &repeats);
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        provenance: Provenance {
            master_seed: config.master_seed,
            config_hash: config.hash(),
            data_hash: data_hash(cohort),
            n_rows: cohort.len(),
            n_features: cohort.n_features(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        config: config.clone(),
        table6,
        table7,
        repeats,
    })
}

fn run_repeat(cohort: &Cohort, config: &ExperimentConfig, r: usize) -> RepeatRecord {
    let seed = derive_seed(config.master_seed, "repeat", r as u64);
    let (train_rows, test_rows) = stratified_split(cohort.outcomes(), config.train_fraction, derive_seed(seed, "split", 0));
    let test_events = test_rows.iter().filter(|&&i| cohort.outcomes()[i].event).count();
    let mut record = RepeatRecord {
        repeat: r,
        seed,
        n_train: train_rows.len(),
        n_test: test_rows.len(),
        test_event_fraction: test_events as f64 / test_rows.len().max(1) as f64,
        features: Vec::new(),
        algorithms: Vec::new(),
        failure: None,
    };
    let fold = prepare_fold(cohort, &train_rows, &test_rows, config, seed).map(|mut f| {
        if config.canary {
            f.add_canary();
        }
        f
    });
    match fold {
        Ok(fold) => {
            record.features = fold.feature_names.clone();
            record.algorithms = config
                .algorithms
                .iter()
                .enumerate()
                .map(|(k, spec)| run_algorithm(&fold, config, spec, derive_seed(seed, "model", k as u64)))
                .collect();
        }
        Err(e) => {
            record.failure = Some(e.to_string());
        }
    }
    record
}

fn concordance(
    estimator: ConcordanceEstimator,
    g: &StepFunction<f64>,
    scores: &[f64],
    outcomes: &[SurvivalOutcome],
    horizon: Option<u32>,
) -> Result<f64> {
    match estimator {
        ConcordanceEstimator::Ipcw => ipcw_cindex_with(g, scores, outcomes, horizon.map(f64::from)),
        ConcordanceEstimator::Harrell => match horizon {
            None => harrell_cindex(scores, outcomes),
            Some(h) => harrell_cindex(scores, &censor_at(outcomes, h)),
        },
    }
}

/// Administrative censoring at `h` days.
fn censor_at(outcomes: &[SurvivalOutcome], h: u32) -> Vec<SurvivalOutcome> {
    outcomes
        .iter()
        .map(|o| {
            if o.time_days > h {
                SurvivalOutcome::censored(h)
            } else {
                *o
            }
        })
        .collect()
}

/// Evenly spaced whole days from 1 to `h` inclusive, at most `points` of
/// them.
pub fn horizon_grid(h: u32, points: usize) -> Vec<f64> {
    let points = points.max(2);
    let mut grid: Vec<f64> = (0..points)
        .map(|k| (1.0 + (f64::from(h) - 1.0) * k as f64 / (points - 1) as f64).round())
        .collect();
    grid.dedup();
    grid
}

/// `S(t)^k` with `k` chosen so that the curve passes through the
/// calibrated probability at the horizon (the last grid point).
pub fn calibrate_curve(curve: &[f64], calibrated_at_horizon: f64) -> Vec<f64> {
    let s_h = *curve.last().expect("non-empty curve");
    let p = calibrated_at_horizon.clamp(1e-300, 1.0);
    if s_h >= 1.0 {
        // no hazard by the horizon: fall back to a flat curve at p
        return vec![p; curve.len()];
    }
    let k = p.ln() / s_h.max(1e-300).ln();
    curve.iter().map(|s| s.powf(k)).collect()
}

fn run_algorithm(fold: &PreparedFold, config: &ExperimentConfig, spec: &AlgorithmSpec, seed: u64) -> AlgorithmRun {
    let mut run = AlgorithmRun {
        algorithm: spec.label().to_string(),
        overall: OverallMetrics::default(),
        horizons: Vec::new(),
        canary: None,
        failures: Vec::new(),
    };
    let g = censoring_km::<f64>(&fold.y_train);
    let mapping = config.metric_mapping;
    let fail = |what: &str, e: Error| format!("{what}: {e}");

    match fit_algorithm(spec, fold.x_train.view(), &fold.y_train, &fold.feature_names, seed) {
        Ok(fitted) => {
            if config.canary {
                run.canary = Some(canary_check(&fitted, fold));
            }
            match fitted.risk_scores(fold.x_test.view()) {
                Ok(scores) => {
                    let y = &fold.y_test;
                    match concordance(mapping.cindex, &g, &scores, y, None) {
                        Ok(v) => run.overall.cindex = Some(v),
                        Err(e) => run.failures.push(fail("cindex", e)),
                    }
                    match concordance(mapping.harrell, &g, &scores, y, None) {
                        Ok(v) => run.overall.harrell = Some(v),
                        Err(e) => run.failures.push(fail("harrell", e)),
                    }
                    let aucs: Result<Vec<f64>> = config
                        .horizons_days
                        .iter()
                        .map(|&h| dynamic_auc(f64::from(h), &scores, y, &g))
                        .collect();
                    match aucs {
                        Ok(a) if !a.is_empty() => run.overall.auroc = Some(a.iter().sum::<f64>() / a.len() as f64),
                        Ok(_) => {}
                        Err(e) => run.failures.push(fail("auroc", e)),
                    }
                }
                Err(e) => run.failures.push(fail("scoring", e)),
            }
        }
        Err(e) => run.failures.push(fail("fit", e)),
    }

    if !config.horizons_days.is_empty() {
        match calibrated_horizons(fold, config, spec, seed, &g) {
            Ok((metrics, failures)) => {
                run.horizons = metrics;
                run.failures.extend(failures);
            }
            Err(e) => run.failures.push(fail("calibration fit", e)),
        }
    }
    run
}

/// Fits on the inner training split, Platt-scales each horizon on the
/// inner validation split and scores the calibrated outputs on the test
/// fold.
fn calibrated_horizons(
    fold: &PreparedFold,
    config: &ExperimentConfig,
    spec: &AlgorithmSpec,
    seed: u64,
    g: &StepFunction<f64>,
) -> Result<(Vec<HorizonMetrics>, Vec<String>)> {
    let (inner, val) = stratified_split(&fold.y_train, config.inner_train_fraction, derive_seed(seed, "inner", 0));
    let x_inner = fold.x_train.select(Axis(0), &inner);
    let y_inner: Vec<SurvivalOutcome> = inner.iter().map(|&i| fold.y_train[i]).collect();
    let x_val = fold.x_train.select(Axis(0), &val);
    let y_val: Vec<SurvivalOutcome> = val.iter().map(|&i| fold.y_train[i]).collect();

    let fitted = fit_algorithm(spec, x_inner.view(), &y_inner, &fold.feature_names, derive_seed(seed, "inner-fit", 0))?;
    let val_scores = fitted.risk_scores(x_val.view())?;
    let test_scores = fitted.risk_scores(fold.x_test.view())?;
    let x_test = fitted.select(fold.x_test.view());
    let y = &fold.y_test;

    let mut metrics = Vec::new();
    let mut failures = Vec::new();
    for &h in &config.horizons_days {
        let mut m = HorizonMetrics {
            horizon_days: h,
            dynamic_auroc: None,
            ibs: None,
            cindex: None,
            harrell: None,
            platt_a: None,
            platt_b: None,
        };
        let scaler: PlattScaler<f64> = match fit_platt_at_horizon(&val_scores, &y_val, h) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("platt {h}d: {e}"));
                metrics.push(m);
                continue;
            }
        };
        m.platt_a = Some(scaler.a);
        m.platt_b = Some(scaler.b);
        let probs = scaler.predict_many(&test_scores);
        let risk: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
        let mut note = |name: &str, r: Result<f64>| match r {
            Ok(v) => Some(v),
            Err(e) => {
                failures.push(format!("{name} {h}d: {e}"));
                None
            }
        };
        m.dynamic_auroc = note("dynamic auroc", dynamic_auc(f64::from(h), &risk, y, g));
        m.cindex = note("cindex", concordance(config.metric_mapping.cindex, g, &risk, y, Some(h)));
        m.harrell = note("harrell", concordance(config.metric_mapping.harrell, g, &risk, y, Some(h)));
        m.ibs = note("ibs", calibrated_ibs(&fitted.model, x_test.view(), &probs, y, g, h, config.ibs_grid_points));
        metrics.push(m);
    }
    Ok((metrics, failures))
}

fn calibrated_ibs(
    model: &FittedModel,
    x: ArrayView2<f64>,
    probs: &[f64],
    outcomes: &[SurvivalOutcome],
    g: &StepFunction<f64>,
    h: u32,
    points: usize,
) -> Result<f64> {
    let grid = horizon_grid(h, points);
    let curves = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let s = predict_survival_any(model, &x.row(i).to_vec(), &grid)?.survival;
            Ok(calibrate_curve(&s, probs[i]))
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    integrated_brier(&grid, &curves, outcomes, g)
}

fn canary_check(fitted: &FoldModel, fold: &PreparedFold) -> CanaryCheck {
    let canary_col = fold.feature_names.iter().position(|n| n == CANARY_FEATURE);
    let local = canary_col.and_then(|c| fitted.columns.iter().position(|&j| j == c));
    let split_usage = local.map_or(0, |k| fitted.model.split_usage()[k]);
    let (shap_mass, coefficient) = match (&fitted.model, local) {
        (FittedModel::Boosted(m), Some(k)) => {
            let x = fitted.select(fold.x_test.view());
            let mass = (0..x.nrows())
                .into_par_iter()
                .map(|i| tree_shap(m, &x.row(i).to_vec()).map(|e| e.contributions[k].abs()))
                .collect::<Result<Vec<f64>>>()
                .map(|v| v.iter().sum())
                .unwrap_or(f64::NAN);
            (Some(mass), None)
        }
        (FittedModel::Cox(m), Some(k)) => (None, Some(m.coefficients[k].abs())),
        (FittedModel::Cox(_), None) => (None, Some(0.0)),
        _ => (None, None),
    };
    CanaryCheck {
        split_usage,
        shap_mass,
        coefficient,
    }
}

#[cfg(test)]
mod tests;
