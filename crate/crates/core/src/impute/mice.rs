use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, FeatureMeta};
use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::rng::derive_seed;

pub const DEFAULT_CYCLES: usize = 10;
pub const PMM_DONORS: usize = 5;
/// Donor pools kept in a fitted model are thinned to at most this many
/// evenly spaced quantiles of the predicted mean.
const MAX_STORED_DONORS: usize = 2000;

/// Linear model of one feature on every other feature, plus its donor pool
/// for predictive mean matching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalModel {
    pub feature: usize,
    /// Intercept followed by one coefficient per feature (0 at `feature`).
    pub coefficients: Vec<f64>,
    /// (predicted mean, observed value) of training donors, sorted by the
    /// predicted mean.
    pub donors: Vec<(f64, f64)>,
}

impl ConditionalModel {
    fn predict(&self, row: &[f64]) -> f64 {
        self.coefficients[0]
            + row
                .iter()
                .zip(&self.coefficients[1..])
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }
}

/// Chained-equation imputation models estimated on one cohort, reusable on
/// new rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationModelSet {
    pub features: Vec<FeatureMeta>,
    pub medians: Vec<f64>,
    /// Feature indices in the order they are visited each cycle.
    pub visit_order: Vec<usize>,
    pub models: Vec<ConditionalModel>,
    pub cycles: usize,
    pub seed: u64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Picks one of the `k` donors whose predicted means are nearest to `target`.
fn draw_donor(donors: &[(f64, f64)], target: f64, k: usize, rng: &mut ChaCha8Rng) -> f64 {
    let pos = donors.partition_point(|d| d.0 < target);
    let (mut lo, mut hi) = (pos, pos); // window [lo, hi)
    let k = k.min(donors.len());
    while hi - lo < k {
        let take_left = if lo == 0 {
            false
        } else if hi == donors.len() {
            true
        } else {
            (target - donors[lo - 1].0) <= (donors[hi].0 - target)
        };
        if take_left {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    donors[rng.random_range(lo..hi)].1
}

fn thin(donors: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    if donors.len() <= MAX_STORED_DONORS {
        return donors;
    }
    let n = donors.len();
    (0..MAX_STORED_DONORS)
        .map(|k| donors[k * (n - 1) / (MAX_STORED_DONORS - 1)])
        .collect()
}

impl ImputationModelSet {
    /// Fits the chained equations on `cohort` and returns the completed
    /// cohort with the fitted models.
    pub fn fit(cohort: &Cohort, cycles: usize, seed: u64) -> Result<(Cohort, ImputationModelSet)> {
        if cycles == 0 {
            return Err(Error::invalid("cycles must be at least 1"));
        }
        let (n, p) = (cohort.len(), cohort.n_features());
        let features = cohort.features().to_vec();
        let mut medians = Vec::with_capacity(p);
        for (j, meta) in features.iter().enumerate() {
            let mut obs: Vec<f64> = cohort.column(j).into_iter().flatten().collect();
            if obs.is_empty() {
                if n == 0 {
                    medians.push(meta.min);
                    continue;
                }
                return Err(Error::NoObservedValues(meta.name.clone()));
            }
            medians.push(meta.snap(median(&mut obs)));
        }
        let mut visit_order: Vec<usize> = (0..p).filter(|&j| features[j].missing_rate > 0.0).collect();
        if !visit_order.is_empty() && visit_order.len() == p {
            return Err(Error::invalid("imputation needs at least one fully observed feature"));
        }
        visit_order.sort_by(|&a, &b| {
            features[a]
                .missing_rate
                .total_cmp(&features[b].missing_rate)
                .then(a.cmp(&b))
        });

        let mut filled = Array2::<f64>::zeros((n, p));
        for (i, row) in cohort.records().iter().enumerate() {
            for j in 0..p {
                filled[[i, j]] = row[j].unwrap_or(medians[j]);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut models: Vec<ConditionalModel> = Vec::new();
        for cycle in 0..cycles {
            for &j in &visit_order {
                let observed: Vec<usize> = (0..n).filter(|&i| cohort.value(i, j).is_some()).collect();
                let mut design = Array2::<f64>::zeros((observed.len(), p + 1));
                let mut target = Array1::<f64>::zeros(observed.len());
                for (r, &i) in observed.iter().enumerate() {
                    design[[r, 0]] = 1.0;
                    for k in 0..p {
                        if k != j {
                            design[[r, k + 1]] = filled[[i, k]];
                        }
                    }
                    target[r] = filled[[i, j]];
                }
                let coefficients = least_squares(&design, &target, 1e-8)
                    .map(|c| c.to_vec())
                    .unwrap_or_else(|| {
                        let mut c = vec![0.0; p + 1];
                        c[0] = target.mean().unwrap_or(medians[j]);
                        c
                    });
                let mut model = ConditionalModel {
                    feature: j,
                    coefficients,
                    donors: Vec::new(),
                };
                let mut donors: Vec<(f64, f64)> = observed
                    .iter()
                    .map(|&i| {
                        let row = masked_row(filled.row(i).as_slice().expect("row-major"), j);
                        (model.predict(&row), filled[[i, j]])
                    })
                    .collect();
                donors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
                for i in (0..n).filter(|&i| cohort.value(i, j).is_none()) {
                    let row = masked_row(filled.row(i).as_slice().expect("row-major"), j);
                    let v = draw_donor(&donors, model.predict(&row), PMM_DONORS, &mut rng);
                    filled[[i, j]] = features[j].snap(v);
                }
                if cycle + 1 == cycles {
                    model.donors = thin(donors);
                    models.push(model);
                }
            }
        }
        let records = (0..n)
            .map(|i| (0..p).map(|j| Some(filled[[i, j]])).collect())
            .collect();
        let set = ImputationModelSet {
            features,
            medians,
            visit_order,
            models,
            cycles,
            seed,
        };
        Ok((cohort.with_records(records), set))
    }

    /// Completes one row with the stored models. Observed values are kept.
    pub fn impute_row(&self, row: &[Option<f64>], seed: u64) -> Result<Vec<f64>> {
        if row.len() != self.features.len() {
            return Err(Error::FeatureCountMismatch {
                expected: self.features.len(),
                found: row.len(),
            });
        }
        let mut filled: Vec<f64> = row
            .iter()
            .zip(&self.medians)
            .map(|(v, m)| v.unwrap_or(*m))
            .collect();
        if row.iter().all(Option::is_some) {
            return Ok(filled);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..self.cycles {
            for model in &self.models {
                let j = model.feature;
                if row[j].is_some() {
                    continue;
                }
                let v = if model.donors.is_empty() {
                    self.medians[j]
                } else {
                    let masked = masked_row(&filled, j);
                    draw_donor(&model.donors, model.predict(&masked), PMM_DONORS, &mut rng)
                };
                filled[j] = self.features[j].snap(v);
            }
        }
        // features that were complete in training have no model; use medians
        Ok(filled)
    }

    /// Completes every row of a cohort with the same columns. Each row gets
    /// its own random stream derived from `seed` and the row index.
    pub fn apply(&self, cohort: &Cohort, seed: u64) -> Result<Cohort> {
        if cohort.feature_names() != self.features.iter().map(|f| f.name.clone()).collect::<Vec<_>>() {
            return Err(Error::invalid("cohort columns differ from the imputation models"));
        }
        let records = cohort
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                self.impute_row(r, derive_seed(seed, "impute-row", i as u64))
                    .map(|v| v.into_iter().map(Some).collect())
            })
            .collect::<Result<Vec<Vec<Option<f64>>>>>()?;
        Ok(cohort.with_records(records))
    }
}

fn masked_row(row: &[f64], j: usize) -> Vec<f64> {
    let mut r = row.to_vec();
    r[j] = 0.0;
    r
}

/// Chained-equation imputation producing one completed cohort.
pub fn mice_impute(cohort: &Cohort, cycles: usize, seed: u64) -> Result<Cohort> {
    ImputationModelSet::fit(cohort, cycles, seed).map(|(c, _)| c)
}
