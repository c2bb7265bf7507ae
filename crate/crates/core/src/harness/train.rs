use std::collections::BTreeMap;

use ndarray::Axis;
use rayon::prelude::*;

use super::config::{AlgorithmSpec, ExperimentConfig};
use super::fold::{fit_algorithm, stratified_split, varying_columns};
use super::{concordance, data_hash};
use crate::bundle::{BaselineCurve, BundleProvenance, ModelBundle, BUNDLE_SCHEMA_VERSION};
use crate::calibrate::fit_platt_at_horizon;
use crate::cohort::{Cohort, SurvivalOutcome};
use crate::ensemble::predict_survival_any;
use crate::error::{Error, Result};
use crate::impute::{drop_sparse_features, prune_correlated, ImputationModelSet};
use crate::metrics::dynamic_auc;
use crate::rng::derive_seed;
use crate::survcore::censoring_km;

/// Days on which the cohort baseline curve is sampled: weekly to two years
/// plus every configured horizon.
pub fn baseline_grid(horizons: &[u32]) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=104).map(|w| f64::from(w * 7)).collect();
    grid.extend(horizons.iter().map(|&h| f64::from(h)));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Fits a deployable model on the whole cohort: preprocessing and
/// imputation models on every row, the model on the inner training split
/// and one Platt scaler per horizon on the held-out remainder.
pub fn train_bundle(cohort: &Cohort, spec: &AlgorithmSpec, config: &ExperimentConfig) -> Result<ModelBundle> {
    config.validate()?;
    let seed = derive_seed(config.master_seed, "final", 0);
    let (pruned, _) = drop_sparse_features(cohort, config.max_missing_fraction)?;
    let (pruned, _) = prune_correlated(&pruned, config.correlation_threshold)?;
    let (completed, imputation) = ImputationModelSet::fit(&pruned, config.mice_cycles, derive_seed(seed, "mice", 0))?;
    let x_all = completed.design_matrix()?;
    let y = completed.outcomes();
    let (inner, val) = stratified_split(y, config.inner_train_fraction, derive_seed(seed, "inner", 0));
    let keep = varying_columns(x_all.select(Axis(0), &inner).view());
    if keep.is_empty() {
        return Err(Error::invalid("no feature varies across the training rows"));
    }
    let x = x_all.select(Axis(1), &keep);
    let features: Vec<_> = keep.iter().map(|&j| completed.features()[j].clone()).collect();
    let names: Vec<String> = features.iter().map(|f| f.name.clone()).collect();

    let y_inner: Vec<SurvivalOutcome> = inner.iter().map(|&i| y[i]).collect();
    let y_val: Vec<SurvivalOutcome> = val.iter().map(|&i| y[i]).collect();
    let fitted = fit_algorithm(spec, x.select(Axis(0), &inner).view(), &y_inner, &names, derive_seed(seed, "fit", 0))?;
    let model = fitted.model;
    let x_val = x.select(Axis(0), &val);
    let val_scores = model.risk_scores(x_val.view())?;

    let mut scalers = Vec::new();
    let mut metrics = BTreeMap::new();
    let g = censoring_km::<f64>(&y_inner);
    let mapping = config.metric_mapping;
    metrics.insert("validation_cindex".into(), concordance(mapping.cindex, &g, &val_scores, &y_val, None)?);
    metrics.insert("validation_harrell".into(), concordance(mapping.harrell, &g, &val_scores, &y_val, None)?);
    for &h in &config.horizons_days {
        scalers.push(fit_platt_at_horizon(&val_scores, &y_val, h)?);
        if let Ok(auc) = dynamic_auc(f64::from(h), &val_scores, &y_val, &g) {
            metrics.insert(format!("validation_dynamic_auroc_{h}d"), auc);
        }
    }

    let times = baseline_grid(&config.horizons_days);
    let curves = (0..x.nrows())
        .into_par_iter()
        .map(|i| predict_survival_any(&model, &x.row(i).to_vec(), &times).map(|c| c.survival))
        .collect::<Result<Vec<_>>>()?;
    let n = curves.len() as f64;
    let survival = (0..times.len())
        .map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / n)
        .collect::<Vec<f64>>();
    // averaging can leave sub-ulp upticks; keep the curve monotone
    let survival = survival
        .iter()
        .scan(1.0f64, |m, &s| {
            *m = m.min(s);
            Some(*m)
        })
        .collect();

    let bundle = ModelBundle {
        schema_version: BUNDLE_SCHEMA_VERSION,
        model: Some(model),
        scalers,
        baseline: BaselineCurve { times, survival },
        features,
        imputation: Some(imputation),
        provenance: BundleProvenance {
            algorithm: spec.label().to_string(),
            config_hash: config.hash(),
            data_hash: data_hash(cohort),
            seed: config.master_seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            metrics,
        },
    };
    bundle.validate()?;
    Ok(bundle)
}
