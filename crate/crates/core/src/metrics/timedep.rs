use crate::cohort::SurvivalOutcome;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::survcore::StepFunction;

fn weight_at<F: Real>(g: F, time: F) -> Result<F> {
    if g > F::zero() {
        Ok(F::one() / g)
    } else {
        Err(Error::ZeroCensoringWeight {
            time: time.as_f64(),
            tau: None,
        })
    }
}

/// Cumulative/dynamic AUC at `t`: cases died by `t` (weighted by
/// `1/Ĝ(t_i-)`), controls are still at risk after `t`.
pub fn dynamic_auc<F: Real>(
    t: F,
    risk_scores: &[F],
    test_outcomes: &[SurvivalOutcome],
    censor_km: &StepFunction<F>,
) -> Result<F> {
    if risk_scores.len() != test_outcomes.len() {
        return Err(Error::invalid("scores and outcomes differ in length"));
    }
    let mut cases = Vec::new();
    let mut controls = Vec::new();
    for (o, &s) in test_outcomes.iter().zip(risk_scores) {
        let ti = F::from_days(o.time_days);
        if o.event && ti <= t {
            cases.push((s, weight_at(censor_km.eval_left(ti), ti)?));
        } else if ti > t {
            controls.push(s);
        }
    }
    if cases.is_empty() {
        return Err(Error::undefined("dynamic_auc", "no cases by the horizon"));
    }
    if controls.is_empty() {
        return Err(Error::undefined("dynamic_auc", "no controls past the horizon"));
    }
    controls.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let n_controls = F::from_count(controls.len());
    let mut num = F::zero();
    let mut den = F::zero();
    for (s, w) in cases {
        let below = controls.partition_point(|&c| c < s);
        let not_above = controls.partition_point(|&c| c <= s);
        let credit = F::from_count(below) + F::lit(0.5) * F::from_count(not_above - below);
        num += w * credit;
        den += w * n_controls;
    }
    Ok(num / den)
}

/// Inverse-probability-of-censoring weighted Brier score at `t`.
pub fn brier_score<F: Real>(
    t: F,
    predicted_survival_at_t: &[F],
    test_outcomes: &[SurvivalOutcome],
    censor_km: &StepFunction<F>,
) -> Result<F> {
    if predicted_survival_at_t.len() != test_outcomes.len() {
        return Err(Error::invalid("predictions and outcomes differ in length"));
    }
    if test_outcomes.is_empty() {
        return Err(Error::undefined("brier_score", "empty test set"));
    }
    if predicted_survival_at_t
        .iter()
        .any(|&s| !(s >= F::zero() && s <= F::one()))
    {
        return Err(Error::invalid("predicted survival outside [0, 1]"));
    }
    let mut g_t = None;
    let mut total = F::zero();
    for (o, &s) in test_outcomes.iter().zip(predicted_survival_at_t) {
        let ti = F::from_days(o.time_days);
        if o.event && ti <= t {
            total += s * s * weight_at(censor_km.eval_left(ti), ti)?;
        } else if ti > t {
            let w = match g_t {
                Some(w) => w,
                None => {
                    let w = weight_at(censor_km.eval(t), t)?;
                    g_t = Some(w);
                    w
                }
            };
            total += (F::one() - s) * (F::one() - s) * w;
        }
    }
    Ok(total / F::from_count(test_outcomes.len()))
}

/// Trapezoidal integral of the Brier score over `t_grid`, divided by the
/// grid span. `curves[i][k]` is subject `i`'s predicted survival at
/// `t_grid[k]`.
pub fn integrated_brier<F: Real>(
    t_grid: &[F],
    curves: &[Vec<F>],
    outcomes: &[SurvivalOutcome],
    censor_km: &StepFunction<F>,
) -> Result<F> {
    if t_grid.len() < 2 || t_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("time grid needs at least two ascending points"));
    }
    if curves.iter().any(|c| c.len() != t_grid.len()) {
        return Err(Error::invalid("curve length does not match the time grid"));
    }
    let scores = t_grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let preds: Vec<F> = curves.iter().map(|c| c[k]).collect();
            brier_score(t, &preds, outcomes, censor_km)
        })
        .collect::<Result<Vec<F>>>()?;
    Ok(trapezoid_mean(t_grid, &scores))
}

pub(crate) fn trapezoid_mean<F: Real>(grid: &[F], values: &[F]) -> F {
    let mut area = F::zero();
    for k in 1..grid.len() {
        area += (grid[k] - grid[k - 1]) * (values[k] + values[k - 1]) * F::lit(0.5);
    }
    area / (grid[grid.len() - 1] - grid[0])
}
