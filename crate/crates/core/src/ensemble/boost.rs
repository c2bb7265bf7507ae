use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow_gradient_tree, Binned, GrowParams, RegressionTree};
use crate::cohort::SurvivalOutcome;
use crate::error::{Error, Result};
use crate::survcore::{
    breslow_baseline, descending_groups, log_likelihood_grouped, margin_derivatives_grouped, BreslowBaseline,
};

/// Breslow partial log-likelihood of per-row margins with the risk-set
/// ordering computed once.
pub struct CoxObjective<'a> {
    outcomes: &'a [SurvivalOutcome],
    groups: Vec<Vec<usize>>,
}

impl<'a> CoxObjective<'a> {
    pub fn new(outcomes: &'a [SurvivalOutcome]) -> Self {
        CoxObjective {
            outcomes,
            groups: descending_groups(outcomes),
        }
    }

    pub fn log_likelihood(&self, margins: &[f64]) -> f64 {
        log_likelihood_grouped(margins, self.outcomes, &self.groups)
    }

    /// First and second derivatives of the log-likelihood in each margin.
    pub fn derivatives(&self, margins: &[f64]) -> (Vec<f64>, Vec<f64>) {
        margin_derivatives_grouped(margins, self.outcomes, &self.groups)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostPreset {
    /// Least-squares trees on the gradient, per-split feature sampling,
    /// tree dropout.
    A,
    /// Second-order leaf weights, per-tree column sampling, split penalty.
    B,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostParams {
    pub preset: BoostPreset,
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per split (`None` = all).
    pub max_features: Option<usize>,
    /// Fraction of columns drawn once per tree.
    pub colsample_bytree: f64,
    pub subsample: f64,
    pub dropout_rate: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
    /// Newton leaf weights `G/(H+λ)`; otherwise least-squares means.
    pub second_order: bool,
    pub seed: u64,
}

const PRESET_A_MIN_SAMPLES_SPLIT: f64 = 20.04;
const PRESET_A_MIN_SAMPLES_LEAF: f64 = 1.85;

impl BoostParams {
    pub fn preset_a() -> Self {
        BoostParams {
            preset: BoostPreset::A,
            n_rounds: 771,
            learning_rate: 0.28,
            max_depth: 7,
            min_samples_split: PRESET_A_MIN_SAMPLES_SPLIT.floor() as usize,
            min_samples_leaf: PRESET_A_MIN_SAMPLES_LEAF.floor() as usize,
            max_features: Some(4),
            colsample_bytree: 1.0,
            subsample: 0.83,
            dropout_rate: 0.05,
            gamma: 0.0,
            lambda: 0.0,
            min_child_weight: 0.0,
            second_order: false,
            seed: 0,
        }
    }

    pub fn preset_b() -> Self {
        BoostParams {
            preset: BoostPreset::B,
            n_rounds: 1107,
            learning_rate: 0.018,
            max_depth: 3,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
            colsample_bytree: 0.83,
            subsample: 0.58,
            dropout_rate: 0.0,
            gamma: 0.49,
            lambda: 1.0,
            min_child_weight: 1.0,
            second_order: true,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !frac(self.subsample) || !frac(self.colsample_bytree) {
            return Err(Error::invalid("subsample and colsample_bytree must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must lie in [0, 1)"));
        }
        if self.max_features == Some(0) {
            return Err(Error::invalid("max_features must be at least 1"));
        }
        if self.gamma < 0.0 || self.lambda < 0.0 || self.min_child_weight < 0.0 {
            return Err(Error::invalid("gamma, lambda and min_child_weight must be non-negative"));
        }
        Ok(())
    }
}

/// Boosted Cox model. Leaf weights already include the learning rate
/// (`eta_in_leaves`), so the margin is the plain sum of tree outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedCoxModel {
    pub feature_names: Vec<String>,
    pub params: BoostParams,
    pub learning_rate: f64,
    pub eta_in_leaves: bool,
    pub trees: Vec<RegressionTree>,
    pub baseline: BreslowBaseline<f64>,
    /// Negative partial log-likelihood on the training rows, before the
    /// first round and after each round.
    pub loss_trace: Vec<f64>,
    /// Rounds whose tree was shrunk so the training likelihood would not drop.
    pub shrunk_rounds: usize,
}

impl BoostedCoxModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn loss_trace_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in self.loss_trace.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }

    /// Split counts per feature summed over all trees.
    pub fn split_usage(&self) -> Vec<usize> {
        let p = self.n_features();
        self.trees.iter().fold(vec![0; p], |mut acc, t| {
            for (a, c) in acc.iter_mut().zip(t.split_counts(p)) {
                *a += c;
            }
            acc
        })
    }
}

pub fn predict_margin(model: &BoostedCoxModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.n_features() {
        return Err(Error::FeatureCountMismatch {
            expected: model.n_features(),
            found: x.len(),
        });
    }
    Ok(model.trees.iter().map(|t| t.predict(x)).sum())
}

pub fn predict_margins(model: &BoostedCoxModel, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    x.rows()
        .into_iter()
        .map(|row| predict_margin(model, &row.to_vec()))
        .collect()
}

/// Gradient boosting on the Breslow partial log-likelihood.
pub fn fit_gbcox(
    x: ArrayView2<f64>,
    outcomes: &[SurvivalOutcome],
    feature_names: &[String],
    params: &BoostParams,
) -> Result<BoostedCoxModel> {
    params.validate()?;
    let x = x.as_standard_layout();
    let (n, p) = x.dim();
    if outcomes.len() != n {
        return Err(Error::invalid("rows and outcomes differ in length"));
    }
    if feature_names.len() != p {
        return Err(Error::invalid("feature name count does not match columns"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("feature matrix must be complete and finite"));
    }
    let events = outcomes.iter().filter(|o| o.event).count();
    if events < 2 {
        return Err(Error::TooFewEvents { required: 2, found: events });
    }

    let objective = CoxObjective::new(outcomes);
    let binned = Binned::new(x.view());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let grow = GrowParams {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split.max(2),
        min_samples_leaf: params.min_samples_leaf.max(1),
        min_child_weight: params.min_child_weight,
        lambda: if params.second_order { params.lambda } else { 0.0 },
        gamma: params.gamma,
        features_per_split: params.max_features.map(|k| k.min(p)),
        leaf_scale: params.learning_rate,
    };
    let n_rows = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let n_cols = ((params.colsample_bytree * p as f64).round() as usize).clamp(1, p.max(1));
    let ones = vec![1.0; n];
    let dropout = params.dropout_rate > 0.0;

    let mut margin = vec![0.0; n];
    let mut trees: Vec<RegressionTree> = Vec::with_capacity(params.n_rounds);
    let mut scales: Vec<f64> = Vec::new();
    let mut leaf_of: Vec<Vec<u32>> = Vec::new();
    let mut loglik = objective.log_likelihood(&margin);
    let mut loss_trace = vec![-loglik];
    let mut shrunk_rounds = 0;

    for iteration in 0..params.n_rounds {
        let dropped: Vec<usize> = if dropout && !trees.is_empty() {
            let mut d: Vec<usize> = (0..trees.len())
                .filter(|_| rng.random::<f64>() < params.dropout_rate)
                .collect();
            if d.is_empty() {
                d.push(rng.random_range(0..trees.len()));
            }
            d
        } else {
            Vec::new()
        };
        let mut base = margin.clone();
        for &m in &dropped {
            for (i, b) in base.iter_mut().enumerate() {
                *b -= scales[m] * trees[m].value(leaf_of[m][i] as usize);
            }
        }
        let (grad, hess) = objective.derivatives(&base);
        if grad.iter().chain(&hess).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { iteration });
        }
        let neg_hess: Vec<f64> = hess.iter().map(|h| -h).collect();

        let mut rows: Vec<usize> = if n_rows < n {
            let mut r = sample(&mut rng, n, n_rows).into_vec();
            r.sort_unstable();
            r
        } else {
            (0..n).collect()
        };
        let allowed: Vec<usize> = if n_cols < p {
            let mut c = sample(&mut rng, p, n_cols).into_vec();
            c.sort_unstable();
            c
        } else {
            (0..p).collect()
        };
        let hstat = if params.second_order { &neg_hess } else { &ones };
        let tree = grow_gradient_tree(&binned, &mut rows, &grad, hstat, &allowed, &grow, &mut rng);
        let leaves: Vec<u32> = (0..n)
            .map(|i| tree.leaf_index(x.row(i).as_slice().expect("standard layout")) as u32)
            .collect();

        if dropout {
            let k = dropped.len() as f64;
            let new_scale = 1.0 / (k + 1.0);
            for &m in &dropped {
                scales[m] *= k / (k + 1.0);
            }
            margin = base;
            for &m in &dropped {
                for (i, v) in margin.iter_mut().enumerate() {
                    *v += scales[m] * trees[m].value(leaf_of[m][i] as usize);
                }
            }
            for (i, v) in margin.iter_mut().enumerate() {
                *v += new_scale * tree.value(leaves[i] as usize);
            }
            loglik = objective.log_likelihood(&margin);
            scales.push(new_scale);
            leaf_of.push(leaves);
        } else {
            // shrink the step until the training likelihood does not fall
            let mut s = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let trial: Vec<f64> = margin
                    .iter()
                    .zip(&leaves)
                    .map(|(m, &l)| m + s * tree.value(l as usize))
                    .collect();
                let ll = objective.log_likelihood(&trial);
                if ll >= loglik {
                    accepted = Some((trial, ll));
                    break;
                }
                s *= 0.5;
            }
            if s < 1.0 {
                shrunk_rounds += 1;
            }
            match accepted {
                Some((trial, ll)) => {
                    margin = trial;
                    loglik = ll;
                    scales.push(s);
                }
                None => scales.push(0.0),
            }
        }
        trees.push(tree);
        loss_trace.push(-loglik);
    }

    for (t, &s) in trees.iter_mut().zip(&scales) {
        if s != 1.0 {
            t.scale_values(s);
        }
    }
    let model_margins: Vec<f64> = (0..n)
        .map(|i| {
            let row = x.row(i);
            let row = row.as_slice().expect("standard layout");
            trees.iter().map(|t| t.predict(row)).sum()
        })
        .collect();
    let baseline = breslow_baseline(outcomes, &model_margins)?;
    Ok(BoostedCoxModel {
        feature_names: feature_names.to_vec(),
        params: params.clone(),
        learning_rate: params.learning_rate,
        eta_in_leaves: true,
        trees,
        baseline,
        loss_trace,
        shrunk_rounds,
    })
}
