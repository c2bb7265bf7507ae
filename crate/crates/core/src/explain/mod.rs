//! Shapley attributions of boosted-model margins and the plot data built on
//! them (summary, dependence, waterfall, survival overlay).

mod treeshap;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{predict_margin, predict_survival_any, BoostedCoxModel, FittedModel};
use crate::error::{Error, Result};

/// Attribution of one record's margin (log relative hazard).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub base_value: f64,
    pub contributions: Vec<f64>,
    pub feature_names: Vec<String>,
    pub feature_values: Vec<f64>,
    pub margin: f64,
}

impl ShapExplanation {
    /// `base_value + Σ contributions`.
    pub fn total(&self) -> f64 {
        self.base_value + self.contributions.iter().sum::<f64>()
    }
}

/// Expected margin over the training data (cover-weighted leaf means).
pub fn base_value(model: &BoostedCoxModel) -> Result<f64> {
    model.trees.iter().map(treeshap::expected_value).sum()
}

/// Path-dependent TreeSHAP summed over the model's trees.
pub fn tree_shap(model: &BoostedCoxModel, x: &[f64]) -> Result<ShapExplanation> {
    let margin = predict_margin(model, x)?;
    let mut phi = vec![0.0; model.n_features()];
    let mut base = 0.0;
    for tree in &model.trees {
        base += treeshap::expected_value(tree)?;
        treeshap::tree_shap_into(tree, x, &mut phi)?;
    }
    Ok(ShapExplanation {
        base_value: base,
        contributions: phi,
        feature_names: model.feature_names.clone(),
        feature_values: x.to_vec(),
        margin,
    })
}

fn shap_matrix(model: &BoostedCoxModel, x: ArrayView2<f64>) -> Result<Vec<ShapExplanation>> {
    (0..x.nrows())
        .into_par_iter()
        .map(|i| tree_shap(model, &x.row(i).to_vec()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub mean_abs_shap: f64,
}

/// Ranked importance plus per-row `(φ, value)` pairs for a beeswarm plot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub base_value: f64,
    pub ranking: Vec<RankedFeature>,
    pub feature_names: Vec<String>,
    /// Row-major, one row per background record.
    pub shap_values: Vec<Vec<f64>>,
    pub feature_values: Vec<Vec<f64>>,
}

pub fn shap_summary(model: &BoostedCoxModel, background: ArrayView2<f64>) -> Result<ShapSummary> {
    if background.nrows() == 0 {
        return Err(Error::invalid("background must contain at least one row"));
    }
    let rows = shap_matrix(model, background)?;
    let p = model.n_features();
    let n = rows.len() as f64;
    let mut mean_abs = vec![0.0; p];
    for r in &rows {
        for (m, c) in mean_abs.iter_mut().zip(&r.contributions) {
            *m += c.abs() / n;
        }
    }
    let mut ranking: Vec<RankedFeature> = model
        .feature_names
        .iter()
        .zip(&mean_abs)
        .map(|(name, &m)| RankedFeature {
            name: name.clone(),
            mean_abs_shap: m,
        })
        .collect();
    ranking.sort_by(|a, b| b.mean_abs_shap.total_cmp(&a.mean_abs_shap).then_with(|| a.name.cmp(&b.name)));
    Ok(ShapSummary {
        base_value: base_value(model)?,
        ranking,
        feature_names: model.feature_names.clone(),
        shap_values: rows.iter().map(|r| r.contributions.clone()).collect(),
        feature_values: rows.into_iter().map(|r| r.feature_values).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependenceData {
    pub feature: String,
    pub values: Vec<f64>,
    pub shap: Vec<f64>,
    /// `None` when no other feature exists or none shows any interaction.
    pub partner: Option<String>,
    pub partner_values: Option<Vec<f64>>,
    /// Heuristic score per candidate partner, in feature order.
    pub partner_scores: Vec<(String, f64)>,
}

const DEPENDENCE_BINS: usize = 10;

/// SHAP values of one feature against its values, with an automatically
/// chosen partner: the feature whose values best track `φ_feature` within
/// bins of the feature's own values (size-weighted mean absolute
/// correlation; ties go to the earlier name).
pub fn shap_dependence(model: &BoostedCoxModel, x: ArrayView2<f64>, feature: &str) -> Result<DependenceData> {
    let j = model
        .feature_names
        .iter()
        .position(|f| f == feature)
        .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
    let values: Vec<f64> = x.column(j).to_vec();
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::ConstantFeature(feature.to_string()));
    }
    let rows = shap_matrix(model, x)?;
    let shap: Vec<f64> = rows.iter().map(|r| r.contributions[j]).collect();
    let bins = bin_rows(&values);

    let mut partner_scores = Vec::new();
    for (k, name) in model.feature_names.iter().enumerate() {
        if k == j {
            continue;
        }
        let mut acc = 0.0;
        let mut weight = 0.0;
        for members in &bins {
            if members.len() < 3 {
                continue;
            }
            let a: Vec<f64> = members.iter().map(|&i| shap[i]).collect();
            let b: Vec<f64> = members.iter().map(|&i| x[[i, k]]).collect();
            acc += members.len() as f64 * correlation(&a, &b).abs();
            weight += members.len() as f64;
        }
        let score = if weight > 0.0 { acc / weight } else { 0.0 };
        partner_scores.push((name.clone(), score));
    }
    let best = partner_scores
        .iter()
        .filter(|(_, s)| *s > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
        .map(|(n, _)| n.clone());
    let partner_values = best.as_ref().map(|name| {
        let k = model.feature_names.iter().position(|f| f == name).expect("known name");
        x.column(k).to_vec()
    });
    Ok(DependenceData {
        feature: feature.to_string(),
        values,
        shap,
        partner: best,
        partner_values,
        partner_scores,
    })
}

/// Rows grouped by distinct value, or by value deciles when there are many.
fn bin_rows(values: &[f64]) -> Vec<Vec<usize>> {
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= DEPENDENCE_BINS {
        let mut bins = vec![Vec::new(); distinct.len()];
        for (i, v) in values.iter().enumerate() {
            let b = distinct.partition_point(|d| d < v);
            bins[b].push(i);
        }
        return bins;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let n = order.len();
    (0..DEPENDENCE_BINS)
        .map(|b| order[b * n / DEPENDENCE_BINS..(b + 1) * n / DEPENDENCE_BINS].to_vec())
        .collect()
}

/// Pearson correlation; 0 when either side is constant.
fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let scale = (saa * sbb).sqrt();
    if scale <= 1e-300 || saa <= 1e-24 * (ma * ma).max(1.0) * n {
        0.0
    } else {
        sab / scale
    }
}

pub const REMAINING_LABEL: &str = "remaining";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterfallRow {
    pub label: String,
    /// Absent for the collapsed row.
    pub feature_value: Option<f64>,
    pub contribution: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waterfall {
    pub base_value: f64,
    pub margin: f64,
    /// `base_value + Σ contributions`, independent of collapsing.
    pub total: f64,
    pub rows: Vec<WaterfallRow>,
}

/// Contributions by decreasing magnitude, the first `top_k` non-zero ones
/// kept and the rest summed into one `remaining` row, with running totals
/// from the base value.
pub fn waterfall_data(explanation: &ShapExplanation, top_k: usize) -> Result<Waterfall> {
    if top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    let mut order: Vec<usize> = (0..explanation.contributions.len()).collect();
    let c = &explanation.contributions;
    let names = &explanation.feature_names;
    order.sort_by(|&a, &b| c[b].abs().total_cmp(&c[a].abs()).then_with(|| names[a].cmp(&names[b])));
    let kept: Vec<usize> = order.iter().copied().filter(|&i| c[i] != 0.0).take(top_k).collect();
    let rest: Vec<usize> = order.iter().copied().filter(|i| !kept.contains(i)).collect();

    let total = explanation.total();
    let mut rows = Vec::new();
    let mut running = explanation.base_value;
    for &i in &kept {
        rows.push(WaterfallRow {
            label: names[i].clone(),
            feature_value: explanation.feature_values.get(i).copied(),
            contribution: c[i],
            start: running,
            end: running + c[i],
        });
        running += c[i];
    }
    if !rest.is_empty() || kept.is_empty() {
        let sum: f64 = rest.iter().map(|&i| c[i]).sum();
        rows.push(WaterfallRow {
            label: REMAINING_LABEL.to_string(),
            feature_value: None,
            contribution: sum,
            start: running,
            end: running + sum,
        });
    }
    if let Some(last) = rows.last_mut() {
        last.end = total;
    }
    Ok(Waterfall {
        base_value: explanation.base_value,
        margin: explanation.margin,
        total,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOverlay {
    pub times: Vec<f64>,
    pub individual: Vec<f64>,
    pub cohort_mean: Vec<f64>,
}

/// The record's survival curve next to the mean curve of the cohort rows.
pub fn survival_overlay(
    model: &FittedModel,
    record: &[f64],
    cohort: ArrayView2<f64>,
    times: &[f64],
) -> Result<SurvivalOverlay> {
    if cohort.nrows() == 0 {
        return Err(Error::invalid("cohort must contain at least one row"));
    }
    let individual = predict_survival_any(model, record, times)?.survival;
    let curves: Vec<Vec<f64>> = (0..cohort.nrows())
        .into_par_iter()
        .map(|i| predict_survival_any(model, &cohort.row(i).to_vec(), times).map(|c| c.survival))
        .collect::<Result<_>>()?;
    let n = curves.len() as f64;
    let cohort_mean = (0..times.len())
        .map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / n)
        .collect();
    Ok(SurvivalOverlay {
        times: times.to_vec(),
        individual,
        cohort_mean,
    })
}
