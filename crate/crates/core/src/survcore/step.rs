use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Right-continuous step function: `initial` before the first knot, then
/// `values[k]` on `[knots[k], knots[k + 1])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFunction<F> {
    knots: Vec<F>,
    values: Vec<F>,
    initial: F,
}

impl<F: Real> StepFunction<F> {
    pub fn new(knots: Vec<F>, values: Vec<F>, initial: F) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::invalid("knots and values differ in length"));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("knots must be strictly ascending"));
        }
        if knots.iter().chain(&values).any(|v| !v.is_finite()) || !initial.is_finite() {
            return Err(Error::invalid("step function contains non-finite entries"));
        }
        Ok(StepFunction {
            knots,
            values,
            initial,
        })
    }

    pub fn constant(value: F) -> Self {
        StepFunction {
            knots: Vec::new(),
            values: Vec::new(),
            initial: value,
        }
    }

    pub fn knots(&self) -> &[F] {
        &self.knots
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn initial(&self) -> F {
        self.initial
    }

    pub fn eval(&self, t: F) -> F {
        let k = self.knots.partition_point(|&x| x <= t);
        if k == 0 {
            self.initial
        } else {
            self.values[k - 1]
        }
    }

    /// Left limit at `t`.
    pub fn eval_left(&self, t: F) -> F {
        let k = self.knots.partition_point(|&x| x < t);
        if k == 0 {
            self.initial
        } else {
            self.values[k - 1]
        }
    }

    pub fn eval_many(&self, times: &[F]) -> Vec<F> {
        times.iter().map(|&t| self.eval(t)).collect()
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> StepFunction<F> {
        StepFunction {
            knots: self.knots.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            initial: f(self.initial),
        }
    }

    pub fn is_non_increasing(&self) -> bool {
        std::iter::once(&self.initial)
            .chain(&self.values)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| *w[1] <= *w[0])
    }

    pub fn is_non_decreasing(&self) -> bool {
        std::iter::once(&self.initial)
            .chain(&self.values)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| *w[1] >= *w[0])
    }

    /// Pointwise average of step functions over the union of their knots.
    pub fn mean(functions: &[StepFunction<F>]) -> Option<StepFunction<F>> {
        if functions.is_empty() {
            return None;
        }
        let mut knots: Vec<F> = functions.iter().flat_map(|f| f.knots.iter().copied()).collect();
        knots.sort_by(|a, b| a.partial_cmp(b).expect("finite knots"));
        knots.dedup();
        let n = F::from_count(functions.len());
        let values = knots
            .iter()
            .map(|&t| functions.iter().map(|f| f.eval(t)).sum::<F>() / n)
            .collect();
        let initial = functions.iter().map(|f| f.initial).sum::<F>() / n;
        Some(StepFunction {
            knots,
            values,
            initial,
        })
    }

    /// Largest absolute difference over every knot of both functions.
    pub fn sup_distance(&self, other: &StepFunction<F>) -> F {
        let mut d = (self.initial - other.initial).abs();
        for &t in self.knots.iter().chain(&other.knots) {
            d = d.max((self.eval(t) - other.eval(t)).abs());
        }
        d
    }
}

/// A survival curve sampled on a time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve<F> {
    pub times: Vec<F>,
    pub survival: Vec<F>,
}

impl<F: Real> SurvivalCurve<F> {
    pub fn is_valid(&self) -> bool {
        self.times.len() == self.survival.len()
            && self.survival.iter().all(|&s| s >= F::zero() && s <= F::one())
            && self.survival.windows(2).all(|w| w[1] <= w[0])
    }
}
