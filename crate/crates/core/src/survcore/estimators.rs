use serde::{Deserialize, Serialize};

use super::step::StepFunction;
use crate::cohort::SurvivalOutcome;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const SCORE_CLIP: f64 = 30.0;

/// Distinct observed time with its event and censoring counts and the size
/// of the risk set just before it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RiskRow {
    pub time: u32,
    pub events: usize,
    pub censored: usize,
    pub at_risk: usize,
}

pub fn risk_table(outcomes: &[SurvivalOutcome]) -> Vec<RiskRow> {
    let mut order: Vec<&SurvivalOutcome> = outcomes.iter().collect();
    order.sort_by_key(|o| o.time_days);
    let mut rows = Vec::new();
    let mut remaining = outcomes.len();
    let mut i = 0;
    while i < order.len() {
        let t = order[i].time_days;
        let mut row = RiskRow {
            time: t,
            events: 0,
            censored: 0,
            at_risk: remaining,
        };
        while i < order.len() && order[i].time_days == t {
            if order[i].event {
                row.events += 1;
            } else {
                row.censored += 1;
            }
            i += 1;
        }
        remaining -= row.events + row.censored;
        rows.push(row);
    }
    rows
}

fn product_limit<F: Real>(rows: impl Iterator<Item = (u32, usize, usize)>) -> StepFunction<F> {
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut s = F::one();
    for (t, d, n) in rows {
        if d == 0 {
            continue;
        }
        s *= F::one() - F::from_count(d) / F::from_count(n);
        knots.push(F::from_days(t));
        values.push(s);
    }
    StepFunction::new(knots, values, F::one()).expect("ascending distinct times")
}

/// Product-limit estimate of the survival function.
pub fn kaplan_meier<F: Real>(outcomes: &[SurvivalOutcome]) -> StepFunction<F> {
    product_limit(
        risk_table(outcomes)
            .into_iter()
            .map(|r| (r.time, r.events, r.at_risk)),
    )
}

/// Kaplan-Meier estimate of the censoring survival G(t) = P(C > t), with
/// censorings as the events. Events at the same day are treated as
/// preceding the censorings, so they stay in the censoring risk set.
pub fn censoring_km<F: Real>(outcomes: &[SurvivalOutcome]) -> StepFunction<F> {
    product_limit(
        risk_table(outcomes)
            .into_iter()
            .map(|r| (r.time, r.censored, r.at_risk - r.events)),
    )
}

/// Nelson-Aalen cumulative hazard.
pub fn nelson_aalen<F: Real>(outcomes: &[SurvivalOutcome]) -> StepFunction<F> {
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut h = F::zero();
    for r in risk_table(outcomes) {
        if r.events == 0 {
            continue;
        }
        h += F::from_count(r.events) / F::from_count(r.at_risk);
        knots.push(F::from_days(r.time));
        values.push(h);
    }
    StepFunction::new(knots, values, F::zero()).expect("ascending distinct times")
}

/// Breslow estimate of the baseline cumulative hazard together with the
/// number of scores clipped to `±SCORE_CLIP`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreslowBaseline<F> {
    pub cumulative_hazard: StepFunction<F>,
    pub clipped: usize,
}

pub(crate) fn clip_score<F: Real>(s: F, clipped: &mut usize) -> F {
    let c = F::lit(SCORE_CLIP);
    if s > c {
        *clipped += 1;
        c
    } else if s < -c {
        *clipped += 1;
        -c
    } else {
        s
    }
}

pub fn breslow_baseline<F: Real>(
    outcomes: &[SurvivalOutcome],
    risk_scores: &[F],
) -> Result<BreslowBaseline<F>> {
    if outcomes.len() != risk_scores.len() {
        return Err(Error::invalid("risk scores and outcomes differ in length"));
    }
    if risk_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite risk score"));
    }
    let mut clipped = 0;
    let weights: Vec<F> = risk_scores
        .iter()
        .map(|&s| clip_score(s, &mut clipped).exp())
        .collect();
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by_key(|&i| outcomes[i].time_days);

    // risk-set sums, accumulated from the latest time backwards
    let mut groups: Vec<(u32, usize, F)> = Vec::new();
    let mut sum = F::zero();
    let mut k = order.len();
    while k > 0 {
        let t = outcomes[order[k - 1]].time_days;
        let mut deaths = 0;
        while k > 0 && outcomes[order[k - 1]].time_days == t {
            let i = order[k - 1];
            sum += weights[i];
            if outcomes[i].event {
                deaths += 1;
            }
            k -= 1;
        }
        groups.push((t, deaths, sum));
    }
    groups.reverse();

    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut h = F::zero();
    for (t, d, s) in groups {
        if d == 0 {
            continue;
        }
        h += F::from_count(d) / s;
        knots.push(F::from_days(t));
        values.push(h);
    }
    Ok(BreslowBaseline {
        cumulative_hazard: StepFunction::new(knots, values, F::zero())?,
        clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o(t: u32, e: bool) -> SurvivalOutcome {
        if e {
            SurvivalOutcome::event(t)
        } else {
            SurvivalOutcome::censored(t)
        }
    }

    #[test]
    fn km_hand_example() {
        let km: StepFunction<f64> = kaplan_meier(&[o(1, true), o(2, false), o(3, true)]);
        assert!((km.eval(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.eval(2.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.eval(3.0), 0.0);
        assert_eq!(km.eval(0.5), 1.0);
    }

    #[test]
    fn km_all_censored_is_one() {
        let km: StepFunction<f32> = kaplan_meier(&[o(4, false), o(9, false)]);
        assert_eq!(km.eval(100.0), 1.0);
    }

    #[test]
    fn censoring_km_mirrors_roles() {
        let g: StepFunction<f64> = censoring_km(&[o(1, true), o(2, false), o(3, true)]);
        // risk set for the censoring at day 2 holds two subjects
        assert_eq!(g.eval(1.0), 1.0);
        assert!((g.eval(2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_death_breslow() {
        let b = breslow_baseline(&[o(5, true)], &[0.7f64]).unwrap();
        assert!((b.cumulative_hazard.eval(5.0) - (-0.7f64).exp()).abs() < 1e-15);
        let b = breslow_baseline(&[o(5, true)], &[0.0f64]).unwrap();
        assert_eq!(b.cumulative_hazard.eval(5.0), 1.0);
    }

    #[test]
    fn clipping_is_counted() {
        let b = breslow_baseline(&[o(1, true), o(2, true), o(3, false)], &[40.0f64, -31.0, 0.0]).unwrap();
        assert_eq!(b.clipped, 2);
        assert!(b.cumulative_hazard.is_non_decreasing());
    }

    #[test]
    fn risk_table_counts() {
        let rows = risk_table(&[o(2, true), o(2, false), o(1, true), o(5, true)]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1], RiskRow { time: 2, events: 1, censored: 1, at_risk: 3 });
    }
}
