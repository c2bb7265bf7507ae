//! Horizon labels, Platt scaling of risk margins and calibration-curve data.

use serde::{Deserialize, Serialize};

use crate::cohort::SurvivalOutcome;
use crate::ensemble::{predict_survival_any, FittedModel};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Horizons in days standing for 1, 3, 6 and 12 months.
pub const HORIZON_PRESETS: [u32; 4] = [30, 91, 182, 365];

/// Survival labels at a horizon. `included[i]` is false for residents
/// censored on or before the horizon; their `labels[i]` is meaningless.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonLabels {
    pub horizon_days: u32,
    pub labels: Vec<bool>,
    pub included: Vec<bool>,
}

impl HorizonLabels {
    pub fn n_included(&self) -> usize {
        self.included.iter().filter(|&&m| m).count()
    }

    /// Selects the included entries of `values`.
    pub fn select<T: Copy>(&self, values: &[T]) -> Vec<T> {
        values
            .iter()
            .zip(&self.included)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect()
    }

    pub fn included_labels(&self) -> Vec<bool> {
        self.select(&self.labels)
    }
}

/// Label 1 when the resident is known to survive past the horizon, 0 when
/// they died on or before it.
pub fn binarize_at_horizon(outcomes: &[SurvivalOutcome], horizon_days: u32) -> Result<HorizonLabels> {
    if horizon_days == 0 {
        return Err(Error::invalid("horizon must be positive"));
    }
    let mut labels = Vec::with_capacity(outcomes.len());
    let mut included = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        if o.time_days > horizon_days {
            labels.push(true);
            included.push(true);
        } else if o.event {
            labels.push(false);
            included.push(true);
        } else {
            labels.push(false);
            included.push(false);
        }
    }
    if !included.iter().any(|&m| m) {
        return Err(Error::AllRowsExcluded(horizon_days));
    }
    Ok(HorizonLabels {
        horizon_days,
        labels,
        included,
    })
}

/// Logistic map `p(s) = 1 / (1 + exp(a s + b))` from a risk margin to a
/// survival probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattScaler<F> {
    pub a: F,
    pub b: F,
    pub horizon_days: u32,
    pub n_train: usize,
    pub n_excluded: usize,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: Vec<String>,
}

impl<F: Real> PlattScaler<F> {
    pub fn predict(&self, score: F) -> F {
        let z = self.a * score + self.b;
        // evaluate on the side that cannot overflow
        if z >= F::zero() {
            let e = (-z).exp();
            e / (F::one() + e)
        } else {
            F::one() / (F::one() + z.exp())
        }
    }

    pub fn predict_many(&self, scores: &[F]) -> Vec<F> {
        scores.iter().map(|&s| self.predict(s)).collect()
    }
}

/// Maximum-likelihood Platt fit of survival labels on risk margins.
pub fn fit_platt<F: Real>(risk_scores: &[F], labels: &[bool]) -> Result<PlattScaler<F>> {
    if risk_scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass);
    }
    if risk_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    let n = F::from_count(risk_scores.len());
    let mean = risk_scores.iter().copied().sum::<F>() / n;
    let var = risk_scores.iter().map(|&s| (s - mean) * (s - mean)).sum::<F>() / n;
    let sd = if var > F::zero() { var.sqrt() } else { F::one() };
    let z: Vec<F> = risk_scores.iter().map(|&s| (s - mean) / sd).collect();
    let y: Vec<F> = labels.iter().map(|&l| if l { F::one() } else { F::zero() }).collect();

    let loglik = |a: F, b: F| -> F {
        z.iter()
            .zip(&y)
            .map(|(&zi, &yi)| {
                let t = a * zi + b;
                // log p = -log(1 + e^t), log(1 - p) = t - log(1 + e^t)
                let softplus = if t > F::zero() {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                };
                yi * (-softplus) + (F::one() - yi) * (t - softplus)
            })
            .sum()
    };
    let prob = |t: F| -> F {
        if t >= F::zero() {
            let e = (-t).exp();
            e / (F::one() + e)
        } else {
            F::one() / (F::one() + t.exp())
        }
    };

    let prior = F::from_count(pos) / n;
    let (mut a, mut b) = (F::zero(), -(prior / (F::one() - prior)).ln());
    let mut ll = loglik(a, b);
    let mut converged = false;
    let mut iterations = 0;
    let mut diagnostics = Vec::new();
    let tol = F::lit(1e-10).max(F::epsilon() * F::lit(100.0));
    for _ in 0..100 {
        iterations += 1;
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) =
            (F::zero(), F::zero(), F::zero(), F::zero(), F::zero());
        for (&zi, &yi) in z.iter().zip(&y) {
            let p = prob(a * zi + b);
            let r = p - yi;
            let w = p * (F::one() - p);
            ga += r * zi;
            gb += r;
            haa += w * zi * zi;
            hab += w * zi;
            hbb += w;
        }
        if ga.abs().max(gb.abs()) / n < tol {
            converged = true;
            break;
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > F::epsilon() * haa * hbb && det > F::zero() {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga / n, gb / n)
        };
        // the log-likelihood Hessian is -W, so the ascent step is W^{-1} g
        let mut step = F::one();
        let mut moved = false;
        for _ in 0..50 {
            let (na, nb) = (a + step * da, b + step * db);
            let nll = loglik(na, nb);
            if nll.is_finite() && nll >= ll {
                a = na;
                b = nb;
                ll = nll;
                moved = true;
                break;
            }
            step = step * F::lit(0.5);
        }
        if !moved {
            break;
        }
    }
    let extreme = |want: bool, pick_max: bool| {
        risk_scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == want)
            .map(|(&s, _)| s)
            .fold(if pick_max { F::neg_infinity() } else { F::infinity() }, |m, s| {
                if pick_max { m.max(s) } else { m.min(s) }
            })
    };
    let separated = extreme(true, true) < extreme(false, false) || extreme(false, true) < extreme(true, false);
    if separated {
        converged = false;
        diagnostics.push("score separates the classes; parameters stopped at a bound".into());
    } else if !converged {
        diagnostics.push("Newton did not converge within 100 iterations".into());
    }
    // back to the raw score scale: a z + b = (a/sd) s + (b - a mean/sd)
    let a_raw = a / sd;
    let b_raw = b - a * mean / sd;
    if a_raw < F::zero() {
        diagnostics.push("negative slope: higher risk maps to higher survival probability".into());
    }
    Ok(PlattScaler {
        a: a_raw,
        b: b_raw,
        horizon_days: 0,
        n_train: risk_scores.len(),
        n_excluded: 0,
        iterations,
        converged,
        diagnostics,
    })
}

/// Binarises at the horizon, drops residents censored before it and fits
/// Platt scaling on the rest.
pub fn fit_platt_at_horizon<F: Real>(
    risk_scores: &[F],
    outcomes: &[SurvivalOutcome],
    horizon_days: u32,
) -> Result<PlattScaler<F>> {
    if risk_scores.len() != outcomes.len() {
        return Err(Error::invalid("scores and outcomes differ in length"));
    }
    let h = binarize_at_horizon(outcomes, horizon_days)?;
    let mut scaler = fit_platt(&h.select(risk_scores), &h.included_labels())?;
    scaler.horizon_days = horizon_days;
    scaler.n_excluded = outcomes.len() - h.n_included();
    Ok(scaler)
}

/// Logistic regression of labels on `logit(p)`; returns (intercept, slope).
/// A calibrated predictor has intercept 0 and slope 1.
pub fn logistic_recalibration<F: Real>(probs: &[F], labels: &[bool]) -> Result<(F, F)> {
    let eps = F::lit(1e-12);
    let logits: Vec<F> = probs
        .iter()
        .map(|&p| {
            let p = p.max(eps).min(F::one() - eps);
            (p / (F::one() - p)).ln()
        })
        .collect();
    let s = fit_platt(&logits, labels)?;
    Ok((-s.b, -s.a))
}

/// Reliability-diagram data over equal-width probability bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve<F> {
    pub bin_edges: Vec<F>,
    /// `None` marks an empty bin.
    pub mean_predicted: Vec<Option<F>>,
    pub observed_fraction: Vec<Option<F>>,
    /// Number of predictions per bin; doubles as the prediction histogram.
    pub counts: Vec<usize>,
}

pub fn calibration_curve<F: Real>(probs: &[F], labels: &[bool], n_bins: usize) -> Result<CalibrationCurve<F>> {
    if n_bins < 2 {
        return Err(Error::invalid("need at least two bins"));
    }
    if probs.len() != labels.len() {
        return Err(Error::invalid("probabilities and labels differ in length"));
    }
    if probs.iter().any(|&p| !(p >= F::zero() && p <= F::one())) {
        return Err(Error::invalid("probability outside [0, 1]"));
    }
    let nb = F::from_count(n_bins);
    let mut sums = vec![F::zero(); n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&p, &y) in probs.iter().zip(labels) {
        let k = (p * nb).floor().to_usize().unwrap_or(0).min(n_bins - 1);
        sums[k] += p;
        counts[k] += 1;
        if y {
            hits[k] += 1;
        }
    }
    let bin_edges = (0..=n_bins).map(|k| F::from_count(k) / nb).collect();
    let mean_predicted = (0..n_bins)
        .map(|k| (counts[k] > 0).then(|| sums[k] / F::from_count(counts[k])))
        .collect();
    let observed_fraction = (0..n_bins)
        .map(|k| (counts[k] > 0).then(|| F::from_count(hits[k]) / F::from_count(counts[k])))
        .collect();
    Ok(CalibrationCurve {
        bin_edges,
        mean_predicted,
        observed_fraction,
        counts,
    })
}

impl<F: Real> CalibrationCurve<F> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count,mean_predicted,observed_fraction\n");
        for k in 0..self.counts.len() {
            let fmt = |v: Option<F>| v.map(|x| format!("{}", x.as_f64())).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.bin_edges[k].as_f64(),
                self.bin_edges[k + 1].as_f64(),
                self.counts[k],
                fmt(self.mean_predicted[k]),
                fmt(self.observed_fraction[k]),
            ));
        }
        out
    }

    /// Largest |observed - predicted| over populated bins.
    pub fn max_gap(&self) -> F {
        self.mean_predicted
            .iter()
            .zip(&self.observed_fraction)
            .filter_map(|(p, o)| Some((p.as_ref()?.clone() - o.as_ref()?.clone()).abs()))
            .fold(F::zero(), F::max)
    }
}

/// Calibrated survival probability at a horizon with the model's own
/// `S(horizon|x)` alongside for display.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPrediction {
    pub horizon_days: u32,
    pub probability: f64,
    pub uncalibrated: f64,
    pub margin: f64,
}

pub fn calibrated_predict(
    model: &FittedModel,
    scaler: &PlattScaler<f64>,
    x: &[f64],
    horizon_days: u32,
) -> Result<CalibratedPrediction> {
    if scaler.horizon_days != horizon_days {
        return Err(Error::HorizonMismatch {
            scaler: scaler.horizon_days,
            requested: horizon_days,
        });
    }
    let margin = model.risk_score(x)?;
    let curve = predict_survival_any(model, x, &[f64::from(horizon_days)])?;
    Ok(CalibratedPrediction {
        horizon_days,
        probability: scaler.predict(margin),
        uncalibrated: curve.survival[0],
        margin,
    })
}
