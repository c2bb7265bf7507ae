use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, SurvivalOutcome};
use crate::error::{Error, Result};
use crate::survcore::fit_coxph;

/// Removes features whose missing rate is at least `max_missing_fraction`.
pub fn drop_sparse_features(cohort: &Cohort, max_missing_fraction: f64) -> Result<(Cohort, Vec<String>)> {
    if !(max_missing_fraction > 0.0 && max_missing_fraction <= 1.0) {
        return Err(Error::invalid("max_missing_fraction must lie in (0, 1]"));
    }
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (j, meta) in cohort.features().iter().enumerate() {
        if meta.missing_rate >= max_missing_fraction {
            dropped.push(meta.name.clone());
        } else {
            keep.push(j);
        }
    }
    Ok((cohort.select_features(&keep), dropped))
}

/// Which rule settled a pruned pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneRule {
    HigherMissingRate,
    WeakerUnivariateEffect,
    LaterName,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneDecision {
    pub kept: String,
    pub dropped: String,
    pub correlation: f64,
    pub rule: PruneRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub threshold: f64,
    pub dropped: Vec<String>,
    pub surviving: Vec<String>,
    /// Column order of `correlation`.
    pub feature_names: Vec<String>,
    /// Pairwise-complete Pearson correlations.
    pub correlation: Vec<Vec<f64>>,
    pub decisions: Vec<PruneDecision>,
}

impl PruneReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Pearson correlation over rows where both values are present. A column
/// that is constant on those rows has correlation 0 with everything.
pub fn pairwise_complete_correlation(a: &[Option<f64>], b: &[Option<f64>]) -> f64 {
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .collect();
    if pairs.len() < 2 {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

fn univariate_effect(column: &[Option<f64>], outcomes: &[SurvivalOutcome], name: &str) -> f64 {
    let (vals, outs): (Vec<f64>, Vec<SurvivalOutcome>) = column
        .iter()
        .zip(outcomes)
        .filter_map(|(v, o)| Some(((*v)?, *o)))
        .unzip();
    let x = Array2::from_shape_vec((vals.len(), 1), vals).expect("column shape");
    fit_coxph(x.view(), &outs, &[name.to_string()])
        .map(|m| m.coefficients[0].abs())
        .unwrap_or(0.0)
}

/// Greedy pruning of highly correlated features.
///
/// Pairs with |r| ≥ `threshold` are visited in descending |r|. While both
/// members survive, the one with the higher missing rate is dropped, then
/// the one with the weaker univariate Cox coefficient, then the later name.
/// A dropped feature left without any surviving correlated partner is
/// restored afterwards.
pub fn prune_correlated(cohort: &Cohort, threshold: f64) -> Result<(Cohort, PruneReport)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("correlation threshold must lie in (0, 1)"));
    }
    let p = cohort.n_features();
    let columns: Vec<Vec<Option<f64>>> = (0..p).map(|j| cohort.column(j)).collect();
    let mut corr = vec![vec![0.0; p]; p];
    for a in 0..p {
        corr[a][a] = 1.0;
        for b in (a + 1)..p {
            let r = pairwise_complete_correlation(&columns[a], &columns[b]);
            corr[a][b] = r;
            corr[b][a] = r;
        }
    }
    let metas = cohort.features();
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for a in 0..p {
        for b in (a + 1)..p {
            if corr[a][b].abs() >= threshold {
                pairs.push((a, b, corr[a][b]));
            }
        }
    }
    pairs.sort_by(|x, y| y.2.abs().total_cmp(&x.2.abs()).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));

    let mut effects: Vec<Option<f64>> = vec![None; p];
    let mut effect = |j: usize| -> f64 {
        *effects[j].get_or_insert_with(|| univariate_effect(&columns[j], cohort.outcomes(), &metas[j].name))
    };
    let mut alive = vec![true; p];
    let mut decisions = Vec::new();
    for &(a, b, r) in &pairs {
        if !alive[a] || !alive[b] {
            continue;
        }
        let (ma, mb) = (metas[a].missing_rate, metas[b].missing_rate);
        let (drop, rule) = if ma != mb {
            (if ma > mb { a } else { b }, PruneRule::HigherMissingRate)
        } else {
            let (ea, eb) = (effect(a), effect(b));
            if ea != eb {
                (if ea < eb { a } else { b }, PruneRule::WeakerUnivariateEffect)
            } else {
                let later = if metas[a].name > metas[b].name { a } else { b };
                (later, PruneRule::LaterName)
            }
        };
        let keep = if drop == a { b } else { a };
        alive[drop] = false;
        decisions.push(PruneDecision {
            kept: metas[keep].name.clone(),
            dropped: metas[drop].name.clone(),
            correlation: r,
            rule,
        });
    }
    for j in 0..p {
        if !alive[j] && !(0..p).any(|k| alive[k] && k != j && corr[j][k].abs() >= threshold) {
            alive[j] = true;
            decisions.retain(|d| d.dropped != metas[j].name);
        }
    }
    let keep: Vec<usize> = (0..p).filter(|&j| alive[j]).collect();
    let report = PruneReport {
        threshold,
        dropped: (0..p).filter(|&j| !alive[j]).map(|j| metas[j].name.clone()).collect(),
        surviving: keep.iter().map(|&j| metas[j].name.clone()).collect(),
        feature_names: cohort.feature_names(),
        correlation: corr,
        decisions,
    };
    Ok((cohort.select_features(&keep), report))
}
