use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Algorithm, AlgorithmSpec, ExperimentConfig};
use crate::cohort::{Cohort, FeatureMeta, SurvivalOutcome};
use crate::ensemble::{fit_gbcox, fit_rsf, BoostParams, FittedModel, ForestParams};
use crate::error::{Error, Result};
use crate::impute::{drop_sparse_features, prune_correlated, ImputationModelSet, PruneReport};
use crate::rng::derive_seed;
use crate::survcore::CoxPreset;

pub const CANARY_FEATURE: &str = "canary_outcome_copy";

/// Row indices of a two-way split that keeps the event share of both parts
/// close to the share in `outcomes`. Both parts come back sorted.
pub fn stratified_split(outcomes: &[SurvivalOutcome], train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for stratum in [true, false] {
        let mut rows: Vec<usize> = (0..outcomes.len()).filter(|&i| outcomes[i].event == stratum).collect();
        rows.shuffle(&mut rng);
        let k = (train_fraction * rows.len() as f64).round() as usize;
        train.extend_from_slice(&rows[..k]);
        test.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Design matrices of one outer split after training-fold-only
/// preprocessing.
#[derive(Clone, Debug)]
pub struct PreparedFold {
    pub feature_names: Vec<String>,
    pub features: Vec<FeatureMeta>,
    pub x_train: Array2<f64>,
    pub y_train: Vec<SurvivalOutcome>,
    pub x_test: Array2<f64>,
    pub y_test: Vec<SurvivalOutcome>,
    pub dropped_sparse: Vec<String>,
    pub prune: PruneReport,
    pub imputation: ImputationModelSet,
}

/// Sparse-feature removal, correlation pruning and imputation-model fitting
/// on the training rows; the test rows only receive the fitted column
/// selection and imputation.
pub fn prepare_fold(
    cohort: &Cohort,
    train_rows: &[usize],
    test_rows: &[usize],
    config: &ExperimentConfig,
    seed: u64,
) -> Result<PreparedFold> {
    let train = cohort.subset(train_rows);
    let (train, dropped_sparse) = drop_sparse_features(&train, config.max_missing_fraction)?;
    let (train, prune) = prune_correlated(&train, config.correlation_threshold)?;
    let (train, imputation) = ImputationModelSet::fit(&train, config.mice_cycles, derive_seed(seed, "mice", 0))?;
    let test = cohort.subset(test_rows).select_named(&train.feature_names())?;
    let test = imputation.apply(&test, derive_seed(seed, "mice-apply", 0))?;
    Ok(PreparedFold {
        feature_names: train.feature_names(),
        features: train.features().to_vec(),
        x_train: train.design_matrix()?,
        y_train: train.outcomes().to_vec(),
        x_test: test.design_matrix()?,
        y_test: test.outcomes().to_vec(),
        dropped_sparse,
        prune,
        imputation,
    })
}

impl PreparedFold {
    /// Appends the leakage canary: 0 on every training row, the observed
    /// time on every test row.
    pub fn add_canary(&mut self) {
        let max = self.y_test.iter().map(|o| o.time_days).max().unwrap_or(0) as f64;
        let train_col = Array2::zeros((self.x_train.nrows(), 1));
        let test_col = Array2::from_shape_fn((self.x_test.nrows(), 1), |(i, _)| f64::from(self.y_test[i].time_days));
        self.x_train = ndarray::concatenate![Axis(1), self.x_train, train_col];
        self.x_test = ndarray::concatenate![Axis(1), self.x_test, test_col];
        self.feature_names.push(CANARY_FEATURE.to_string());
        self.features.push(FeatureMeta::continuous(CANARY_FEATURE, 0.0, max.max(1.0)));
    }
}

/// A fitted model plus the design-matrix columns it consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldModel {
    pub model: FittedModel,
    pub columns: Vec<usize>,
}

impl FoldModel {
    pub fn risk_scores(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.model.risk_scores(x.select(Axis(1), &self.columns).view())
    }

    pub fn select(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.select(Axis(1), &self.columns)
    }
}

/// Columns that take more than one value.
pub fn varying_columns(x: ArrayView2<f64>) -> Vec<usize> {
    (0..x.ncols())
        .filter(|&j| {
            let c = x.column(j);
            c.iter().any(|&v| v != c[0])
        })
        .collect()
}

/// Fits one zoo member. Linear models only see columns that vary on the
/// training rows; tree models see every column.
pub fn fit_algorithm(
    spec: &AlgorithmSpec,
    x: ArrayView2<f64>,
    outcomes: &[SurvivalOutcome],
    names: &[String],
    seed: u64,
) -> Result<FoldModel> {
    if names.len() != x.ncols() {
        return Err(Error::invalid("feature names do not match the design matrix"));
    }
    let columns: Vec<usize> = if spec.kind.is_linear() {
        varying_columns(x)
    } else {
        (0..x.ncols()).collect()
    };
    let xs = x.select(Axis(1), &columns);
    let ns: Vec<String> = columns.iter().map(|&j| names[j].clone()).collect();
    let model = match spec.kind {
        Algorithm::Coxph => FittedModel::Cox(CoxPreset::Coxph.fit(xs.view(), outcomes, &ns)?),
        Algorithm::Ridge => FittedModel::Cox(CoxPreset::Ridge.fit(xs.view(), outcomes, &ns)?),
        Algorithm::Lasso => FittedModel::Cox(CoxPreset::Lasso.fit(xs.view(), outcomes, &ns)?),
        Algorithm::ElasticNet => FittedModel::Cox(CoxPreset::Elastic.fit(xs.view(), outcomes, &ns)?),
        Algorithm::GradientBoosting | Algorithm::Xgboost => {
            let mut params = if spec.kind == Algorithm::GradientBoosting {
                BoostParams::preset_a()
            } else {
                BoostParams::preset_b()
            };
            if let Some(n) = spec.n_rounds {
                params.n_rounds = n;
            }
            FittedModel::Boosted(fit_gbcox(xs.view(), outcomes, &ns, &params.with_seed(seed))?)
        }
        Algorithm::RandomForest => {
            let mut params = ForestParams::preset();
            if let Some(n) = spec.n_estimators {
                params.n_estimators = n;
            }
            FittedModel::Forest(fit_rsf(xs.view(), outcomes, &ns, &params.with_seed(seed))?)
        }
    };
    Ok(FoldModel { model, columns })
}
