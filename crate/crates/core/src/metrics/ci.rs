use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Mean across repeats with a normal-approximation 95% interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue<F> {
    pub name: String,
    pub point: F,
    pub low: F,
    pub high: F,
    pub n_repeats: usize,
}

/// `mean ± 1.96 sd/√n` with the sample standard deviation; a single value
/// gives a zero-width interval. Returns `None` for no values.
pub fn aggregate_ci<F: Real>(name: &str, values: &[F]) -> Option<MetricValue<F>> {
    if values.is_empty() {
        return None;
    }
    if values.iter().all(|&v| v == values[0]) {
        return Some(MetricValue {
            name: name.to_string(),
            point: values[0],
            low: values[0],
            high: values[0],
            n_repeats: values.len(),
        });
    }
    let n = F::from_count(values.len());
    let mean = values.iter().copied().sum::<F>() / n;
    let half = if values.len() > 1 {
        let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / (n - F::one());
        F::lit(1.96) * var.sqrt() / n.sqrt()
    } else {
        F::zero()
    };
    Some(MetricValue {
        name: name.to_string(),
        point: mean,
        low: mean - half,
        high: mean + half,
        n_repeats: values.len(),
    })
}

impl<F: Real> MetricValue<F> {
    /// Table cell such as `0.714 (0.711-0.717)`.
    pub fn cell(&self) -> String {
        format!(
            "{:.3} ({:.3}-{:.3})",
            self.point.as_f64(),
            self.low.as_f64(),
            self.high.as_f64()
        )
    }

    pub fn overlaps(&self, other: &MetricValue<F>) -> bool {
        self.low <= other.high && other.low <= self.high
    }
}
