use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrate::HORIZON_PRESETS;
use crate::error::{Error, Result};

/// The model zoo.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Coxph,
    Ridge,
    Lasso,
    ElasticNet,
    GradientBoosting,
    Xgboost,
    RandomForest,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Coxph,
        Algorithm::Ridge,
        Algorithm::Lasso,
        Algorithm::ElasticNet,
        Algorithm::GradientBoosting,
        Algorithm::Xgboost,
        Algorithm::RandomForest,
    ];

    /// Short name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Coxph => "CoxPH",
            Algorithm::Ridge => "Ridge",
            Algorithm::Lasso => "Lasso",
            Algorithm::ElasticNet => "Elastic",
            Algorithm::GradientBoosting => "GB",
            Algorithm::Xgboost => "XGB",
            Algorithm::RandomForest => "RF",
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(
            self,
            Algorithm::Coxph | Algorithm::Ridge | Algorithm::Lasso | Algorithm::ElasticNet
        )
    }

    pub fn parse(text: &str) -> Option<Self> {
        let key = text.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Some(match key.as_str() {
            "coxph" | "cox" => Algorithm::Coxph,
            "ridge" => Algorithm::Ridge,
            "lasso" => Algorithm::Lasso,
            "elastic_net" | "elastic" => Algorithm::ElasticNet,
            "gradient_boosting" | "gb" => Algorithm::GradientBoosting,
            "xgboost" | "xgb" => Algorithm::Xgboost,
            "random_forest" | "rf" | "rsf" => Algorithm::RandomForest,
            _ => return None,
        })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One configured model. Round and tree counts default to the presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr")]
pub struct AlgorithmSpec {
    pub kind: Algorithm,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_estimators: Option<usize>,
}

impl AlgorithmSpec {
    pub fn new(kind: Algorithm) -> Self {
        AlgorithmSpec {
            kind,
            n_rounds: None,
            n_estimators: None,
        }
    }

    pub fn with_rounds(mut self, n: usize) -> Self {
        self.n_rounds = Some(n);
        self
    }

    pub fn with_estimators(mut self, n: usize) -> Self {
        self.n_estimators = Some(n);
        self
    }

    pub fn label(&self) -> &'static str {
        self.kind.label()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecRepr {
    Name(String),
    Full {
        kind: String,
        #[serde(default)]
        n_rounds: Option<usize>,
        #[serde(default)]
        n_estimators: Option<usize>,
    },
}

impl TryFrom<SpecRepr> for AlgorithmSpec {
    type Error = String;

    fn try_from(repr: SpecRepr) -> std::result::Result<Self, String> {
        let (kind, n_rounds, n_estimators) = match repr {
            SpecRepr::Name(k) => (k, None, None),
            SpecRepr::Full {
                kind,
                n_rounds,
                n_estimators,
            } => (kind, n_rounds, n_estimators),
        };
        let kind = Algorithm::parse(&kind).ok_or_else(|| format!("unknown algorithm `{kind}`"))?;
        Ok(AlgorithmSpec {
            kind,
            n_rounds,
            n_estimators,
        })
    }
}

/// Estimator behind a concordance column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcordanceEstimator {
    Ipcw,
    Harrell,
}

/// Which estimator fills the "C-index" and "Harrell" columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricMapping {
    pub cindex: ConcordanceEstimator,
    pub harrell: ConcordanceEstimator,
}

impl Default for MetricMapping {
    fn default() -> Self {
        MetricMapping {
            cindex: ConcordanceEstimator::Ipcw,
            harrell: ConcordanceEstimator::Harrell,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithms: Vec<AlgorithmSpec>,
    pub n_repeats: usize,
    /// Share of rows in the outer training fold.
    pub train_fraction: f64,
    /// Share of the training fold used to fit the model that is then
    /// Platt-scaled on the rest.
    pub inner_train_fraction: f64,
    pub master_seed: u64,
    pub horizons_days: Vec<u32>,
    pub metric_mapping: MetricMapping,
    pub max_missing_fraction: f64,
    pub correlation_threshold: f64,
    pub mice_cycles: usize,
    /// Adds an outcome-copy column that is 0 on training rows and the
    /// observed time on test rows.
    pub canary: bool,
    /// Points of the Brier grid per horizon.
    pub ibs_grid_points: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algorithms: Algorithm::ALL.iter().map(|&a| AlgorithmSpec::new(a)).collect(),
            n_repeats: 20,
            train_fraction: 0.9,
            inner_train_fraction: 0.9,
            master_seed: 0,
            horizons_days: HORIZON_PRESETS.to_vec(),
            metric_mapping: MetricMapping::default(),
            max_missing_fraction: 0.75,
            correlation_threshold: 0.7,
            mice_cycles: crate::impute::DEFAULT_CYCLES,
            canary: false,
            ibs_grid_points: 30,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if self.n_repeats == 0 {
            return Err(Error::Config("n_repeats must be at least 1".into()));
        }
        if !unit(self.train_fraction) || !unit(self.inner_train_fraction) {
            return Err(Error::Config("split fractions must lie in (0, 1)".into()));
        }
        if self.horizons_days.iter().any(|&h| h < 2) || self.horizons_days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("horizons must be ascending, distinct and at least 2 days".into()));
        }
        if !(self.max_missing_fraction > 0.0 && self.max_missing_fraction <= 1.0) {
            return Err(Error::Config("max_missing_fraction must lie in (0, 1]".into()));
        }
        if !(self.correlation_threshold > 0.0 && self.correlation_threshold <= 1.0) {
            return Err(Error::Config("correlation_threshold must lie in (0, 1]".into()));
        }
        if self.mice_cycles == 0 {
            return Err(Error::Config("mice_cycles must be at least 1".into()));
        }
        if self.ibs_grid_points < 2 {
            return Err(Error::Config("ibs_grid_points must be at least 2".into()));
        }
        let mut kinds: Vec<Algorithm> = self.algorithms.iter().map(|a| a.kind).collect();
        kinds.sort();
        if kinds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("each algorithm may appear once".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }
}

/// Forecast label such as `6-month`.
pub fn horizon_label(days: u32) -> String {
    match days {
        30 => "1-month".into(),
        91 => "3-month".into(),
        182 => "6-month".into(),
        365 => "12-month".into(),
        d => format!("{d}-day"),
    }
}
