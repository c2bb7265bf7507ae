//! Shared synthetic data for unit tests.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::cohort::SurvivalOutcome;

/// Exponential survival with log-hazard `eta(x)` over standard normal
/// features, independent exponential censoring at `censor_rate` (per unit
/// time), times reported in tenths.
pub fn survival_data(
    rng: &mut ChaCha8Rng,
    n: usize,
    p: usize,
    censor_rate: f64,
    eta: impl Fn(&[f64]) -> f64,
) -> (Array2<f64>, Vec<SurvivalOutcome>) {
    let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
    let outcomes = (0..n)
        .map(|i| {
            let row = x.row(i).to_vec();
            let t = 20.0 * rng.sample::<f64, _>(Exp1) / eta(&row).exp();
            let c = if censor_rate > 0.0 {
                rng.sample::<f64, _>(Exp1) / censor_rate
            } else {
                f64::INFINITY
            };
            let day = (t.min(c) * 10.0).ceil().max(1.0) as u32;
            if t <= c {
                SurvivalOutcome::event(day)
            } else {
                SurvivalOutcome::censored(day)
            }
        })
        .collect();
    (x, outcomes)
}

/// Rounds every feature to a coarse grid so trees see ordinal-like columns.
pub fn discretise(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| (v * 2.0).round() / 2.0);
}

pub fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}
