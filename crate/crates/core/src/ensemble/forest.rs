use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{partition, Binned, NodeArena, RegressionTree};
use crate::cohort::SurvivalOutcome;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::survcore::{nelson_aalen, StepFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per split (`None` = ceil(sqrt(p))).
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

const MIN_SAMPLES_SPLIT: f64 = 2.54;
const MIN_SAMPLES_LEAF: f64 = 20.89;

impl ForestParams {
    pub fn preset() -> Self {
        ForestParams {
            n_estimators: 592,
            max_depth: 7,
            min_samples_split: MIN_SAMPLES_SPLIT.floor() as usize,
            min_samples_leaf: MIN_SAMPLES_LEAF.floor() as usize,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// One forest member. Leaf nodes carry the Nelson-Aalen cumulative hazard
/// of their training members; the tree's leaf values hold the summed hazard
/// over the forest's event times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTree {
    pub tree: RegressionTree,
    pub leaf_hazards: Vec<Option<StepFunction<f64>>>,
    pub bootstrap_seed: u64,
}

impl SurvivalTree {
    pub fn hazard_at(&self, x: &[f64]) -> &StepFunction<f64> {
        self.leaf_hazards[self.tree.leaf_index(x)]
            .as_ref()
            .expect("every leaf stores a hazard")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalForestModel {
    pub feature_names: Vec<String>,
    pub params: ForestParams,
    pub trees: Vec<SurvivalTree>,
    /// Distinct training event times; risk scores sum hazards over them.
    pub event_times: Vec<f64>,
}

impl SurvivalForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::FeatureCountMismatch {
                expected: self.n_features(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Average over trees of the leaf hazard summed over the event times.
    pub fn risk_score(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        if self.trees.is_empty() {
            return Ok(0.0);
        }
        Ok(self.trees.iter().map(|t| t.tree.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    /// Average leaf cumulative hazard at each time.
    pub fn cumulative_hazard(&self, x: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut h = vec![0.0; times.len()];
        for t in &self.trees {
            let leaf = t.hazard_at(x);
            for (acc, &s) in h.iter_mut().zip(times) {
                *acc += leaf.eval(s);
            }
        }
        let m = self.trees.len().max(1) as f64;
        Ok(h.into_iter().map(|v| v / m).collect())
    }

    pub fn split_usage(&self) -> Vec<usize> {
        let p = self.n_features();
        self.trees.iter().fold(vec![0; p], |mut acc, t| {
            for (a, c) in acc.iter_mut().zip(t.tree.split_counts(p)) {
                *a += c;
            }
            acc
        })
    }
}

/// Absolute standardised two-sample log-rank statistic of `left` against the
/// remaining rows, evaluated directly from its definition.
pub fn logrank_statistic(outcomes: &[SurvivalOutcome], left: &[bool]) -> f64 {
    let mut times: Vec<u32> = outcomes.iter().filter(|o| o.event).map(|o| o.time_days).collect();
    times.sort_unstable();
    times.dedup();
    let (mut num, mut var) = (0.0f64, 0.0f64);
    for t in times {
        let (mut y, mut yl, mut d, mut dl) = (0.0, 0.0, 0.0, 0.0);
        for (o, &l) in outcomes.iter().zip(left) {
            if o.time_days >= t {
                y += 1.0;
                if l {
                    yl += 1.0;
                }
                if o.time_days == t && o.event {
                    d += 1.0;
                    if l {
                        dl += 1.0;
                    }
                }
            }
        }
        num += dl - yl * d / y;
        if y > 1.0 {
            var += d * (yl / y) * (1.0 - yl / y) * (y - d) / (y - 1.0);
        }
    }
    if var > 0.0 {
        num.abs() / var.sqrt()
    } else {
        0.0
    }
}

pub fn fit_rsf(
    x: ArrayView2<f64>,
    outcomes: &[SurvivalOutcome],
    feature_names: &[String],
    params: &ForestParams,
) -> Result<SurvivalForestModel> {
    let x = x.as_standard_layout();
    let (n, p) = x.dim();
    if params.n_estimators == 0 {
        return Err(Error::invalid("n_estimators must be at least 1"));
    }
    if n == 0 {
        return Err(Error::invalid("no training rows"));
    }
    if outcomes.len() != n {
        return Err(Error::invalid("rows and outcomes differ in length"));
    }
    if feature_names.len() != p {
        return Err(Error::invalid("feature name count does not match columns"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("feature matrix must be complete and finite"));
    }
    let binned = Binned::new(x.view());
    let mut event_times: Vec<u32> = outcomes.iter().filter(|o| o.event).map(|o| o.time_days).collect();
    event_times.sort_unstable();
    event_times.dedup();
    let event_times: Vec<f64> = event_times.into_iter().map(f64::from).collect();
    let k = params
        .max_features
        .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
        .clamp(1, p.max(1));

    let trees: Vec<SurvivalTree> = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(params.seed, "rsf-tree", t as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows: Vec<usize> = if params.bootstrap {
                let mut r: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                r.sort_unstable();
                r
            } else {
                (0..n).collect()
            };
            let mut grower = LogrankGrower {
                binned: &binned,
                outcomes,
                params,
                k,
                order: (0..p).collect(),
                arena: NodeArena::default(),
                hazards: Vec::new(),
            };
            grower.grow(&mut rows, 0, &mut rng);
            let LogrankGrower { arena, hazards, .. } = grower;
            let mut tree = arena.finish(params.max_depth);
            let mut leaf_hazards = vec![None; tree.n_nodes()];
            for (node, h) in hazards {
                let risk: f64 = event_times.iter().map(|&s| h.eval(s)).sum();
                tree.set_value(node, risk);
                leaf_hazards[node] = Some(h);
            }
            SurvivalTree {
                tree,
                leaf_hazards,
                bootstrap_seed: seed,
            }
        })
        .collect();
    Ok(SurvivalForestModel {
        feature_names: feature_names.to_vec(),
        params: params.clone(),
        trees,
        event_times,
    })
}

struct LogrankGrower<'a> {
    binned: &'a Binned,
    outcomes: &'a [SurvivalOutcome],
    params: &'a ForestParams,
    k: usize,
    order: Vec<usize>,
    arena: NodeArena,
    hazards: Vec<(usize, StepFunction<f64>)>,
}

impl LogrankGrower<'_> {
    fn grow<R: Rng>(&mut self, rows: &mut [usize], depth: usize, rng: &mut R) -> usize {
        let node = self.arena.push_leaf(0.0, rows.len() as f64);
        let min_leaf = self.params.min_samples_leaf.max(1);
        let t0 = self.outcomes[rows[0]].time_days;
        let degenerate = rows.iter().all(|&i| self.outcomes[i].time_days == t0);
        if depth >= self.params.max_depth
            || rows.len() < self.params.min_samples_split.max(2)
            || rows.len() < 2 * min_leaf
            || degenerate
        {
            self.make_leaf(node, rows);
            return node;
        }
        let Some((feature, lo, hi)) = self.best_split(rows, rng) else {
            self.make_leaf(node, rows);
            return node;
        };
        let codes = &self.binned.codes[feature];
        let n_left = partition(rows, |i| codes[i] <= lo);
        let threshold = self.binned.threshold(feature, lo, hi);
        let (l_rows, r_rows) = rows.split_at_mut(n_left);
        let l = self.grow(l_rows, depth + 1, rng);
        let r = self.grow(r_rows, depth + 1, rng);
        self.arena.split(node, feature, threshold, l, r);
        node
    }

    fn make_leaf(&mut self, node: usize, rows: &[usize]) {
        let members: Vec<SurvivalOutcome> = rows.iter().map(|&i| self.outcomes[i]).collect();
        self.hazards.push((node, nelson_aalen(&members)));
    }

    fn best_split<R: Rng>(&mut self, rows: &[usize], rng: &mut R) -> Option<(usize, u32, u32)> {
        // event-time slots within the node
        let mut ev: Vec<u32> = rows
            .iter()
            .filter(|&&i| self.outcomes[i].event)
            .map(|&i| self.outcomes[i].time_days)
            .collect();
        ev.sort_unstable();
        ev.dedup();
        if ev.is_empty() {
            return None;
        }
        let t = ev.len();
        // slot = number of event times ≤ own time; at risk at event slots < slot
        let slot = |i: usize| ev.partition_point(|&e| e <= self.outcomes[i].time_days);
        let death_slot = |i: usize| {
            let o = &self.outcomes[i];
            o.event.then(|| ev.partition_point(|&e| e < o.time_days))
        };
        let mut y_tot = vec![0.0; t + 1];
        let mut d_tot = vec![0.0; t];
        for &i in rows {
            y_tot[slot(i)] += 1.0;
            if let Some(e) = death_slot(i) {
                d_tot[e] += 1.0;
            }
        }
        for s in (0..t).rev() {
            y_tot[s] += y_tot[s + 1];
        }
        // y_tot[e + 1] = number at risk at event e

        let min_leaf = self.params.min_samples_leaf.max(1);
        let n = rows.len();
        let mut best: Option<(f64, usize, u32, u32)> = None;
        self.order.shuffle(rng);
        let mut visited = 0;
        let order = self.order.clone();
        for &j in &order {
            if visited >= self.k {
                break;
            }
            if self.binned.is_constant_on(j, rows) {
                continue;
            }
            visited += 1;
            let groups = self.binned.present_codes(j, rows);
            let mut cnt_l = vec![0.0; t + 1];
            let mut d_l = vec![0.0; t];
            let mut n_l = 0;
            for w in groups.windows(2) {
                for &i in &w[0].1 {
                    cnt_l[slot(i)] += 1.0;
                    if let Some(e) = death_slot(i) {
                        d_l[e] += 1.0;
                    }
                }
                n_l += w[0].1.len();
                if n_l < min_leaf || n - n_l < min_leaf {
                    continue;
                }
                let (mut num, mut var) = (0.0f64, 0.0f64);
                // at risk on the left at event e: Σ_{s > e} cnt_l[s]
                let mut suffix = 0.0;
                let mut yl_at = vec![0.0; t];
                for s in (1..=t).rev() {
                    suffix += cnt_l[s];
                    yl_at[s - 1] = suffix;
                }
                for e in 0..t {
                    let y = y_tot[e + 1];
                    let d = d_tot[e];
                    if d == 0.0 || y == 0.0 {
                        continue;
                    }
                    let yl = yl_at[e];
                    num += d_l[e] - yl * d / y;
                    if y > 1.0 {
                        var += d * (yl / y) * (1.0 - yl / y) * (y - d) / (y - 1.0);
                    }
                }
                if var <= 0.0 {
                    continue;
                }
                let stat = num.abs() / var.sqrt();
                if best.is_none_or(|b| stat > b.0) {
                    best = Some((stat, j, w[0].0, w[1].0));
                }
            }
        }
        best.filter(|b| b.0 > 0.0).map(|(_, j, lo, hi)| (j, lo, hi))
    }
}
