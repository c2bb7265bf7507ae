//! Tree ensembles for survival: boosted Cox models (two presets behind one
//! trainer) and random survival forests with log-rank splitting.

mod boost;
mod forest;
mod tree;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use boost::{
    fit_gbcox, predict_margin, predict_margins, BoostParams, BoostPreset, BoostedCoxModel, CoxObjective,
};
pub use forest::{fit_rsf, logrank_statistic, ForestParams, SurvivalForestModel, SurvivalTree};
pub use tree::{RegressionTree, LEAF};

use crate::error::{Error, Result};
use crate::survcore::{curve_from_hazard, CoxModel, SurvivalCurve};

/// Any fitted model family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittedModel {
    Cox(CoxModel<f64>),
    Boosted(BoostedCoxModel),
    Forest(SurvivalForestModel),
}

impl FittedModel {
    pub fn family(&self) -> &'static str {
        match self {
            FittedModel::Cox(_) => "cox",
            FittedModel::Boosted(_) => "boosted",
            FittedModel::Forest(_) => "forest",
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            FittedModel::Cox(m) => &m.feature_names,
            FittedModel::Boosted(m) => &m.feature_names,
            FittedModel::Forest(m) => &m.feature_names,
        }
    }

    /// Higher means earlier expected event: the Cox linear predictor, the
    /// boosted margin, or the forest's summed cumulative hazard.
    pub fn risk_score(&self, x: &[f64]) -> Result<f64> {
        match self {
            FittedModel::Cox(m) => m.risk_score(x),
            FittedModel::Boosted(m) => predict_margin(m, x),
            FittedModel::Forest(m) => m.risk_score(x),
        }
    }

    pub fn risk_scores(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        x.rows().into_iter().map(|r| self.risk_score(&r.to_vec())).collect()
    }

    /// Split counts per feature (all zero for Cox models).
    pub fn split_usage(&self) -> Vec<usize> {
        match self {
            FittedModel::Cox(m) => vec![0; m.feature_names.len()],
            FittedModel::Boosted(m) => m.split_usage(),
            FittedModel::Forest(m) => m.split_usage(),
        }
    }
}

/// Survival curve from any model family.
pub fn predict_survival_any(model: &FittedModel, x: &[f64], times: &[f64]) -> Result<SurvivalCurve<f64>> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("times must be ascending"));
    }
    match model {
        FittedModel::Cox(m) => Ok(curve_from_hazard(&m.baseline, m.risk_score(x)?, times)),
        FittedModel::Boosted(m) => Ok(curve_from_hazard(&m.baseline, predict_margin(m, x)?, times)),
        FittedModel::Forest(m) => {
            let h = m.cumulative_hazard(x, times)?;
            Ok(SurvivalCurve {
                times: times.to_vec(),
                survival: h.into_iter().map(|v| (-v).exp()).collect(),
            })
        }
    }
}
