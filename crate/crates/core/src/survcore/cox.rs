use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::estimators::{breslow_baseline, clip_score, BreslowBaseline, SCORE_CLIP};
use super::step::SurvivalCurve;
use crate::cohort::SurvivalOutcome;
use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;
use crate::scalar::Real;

/// Breslow partial log-likelihood with its gradient and Hessian in β.
#[derive(Clone, Debug)]
pub struct PartialLikelihood<F> {
    pub log_likelihood: F,
    pub gradient: Array1<F>,
    pub hessian: Array2<F>,
}

/// Indices sorted by descending time, grouped by equal time.
pub(crate) fn descending_groups(outcomes: &[SurvivalOutcome]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| outcomes[b].time_days.cmp(&outcomes[a].time_days).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if outcomes[g[0]].time_days == outcomes[i].time_days => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

pub fn partial_likelihood<F: Real>(
    x: ArrayView2<F>,
    outcomes: &[SurvivalOutcome],
    beta: &[F],
) -> PartialLikelihood<F> {
    let (n, p) = x.dim();
    assert_eq!(outcomes.len(), n);
    assert_eq!(beta.len(), p);
    let eta: Vec<F> = (0..n)
        .map(|i| (0..p).map(|j| x[[i, j]] * beta[j]).sum())
        .collect();
    let shift = eta.iter().copied().fold(F::neg_infinity(), F::max);
    let shift = if shift.is_finite() { shift } else { F::zero() };

    let mut s0 = F::zero();
    let mut s1 = Array1::<F>::zeros(p);
    let mut s2 = Array2::<F>::zeros((p, p));
    let mut loglik = F::zero();
    let mut grad = Array1::<F>::zeros(p);
    let mut hess = Array2::<F>::zeros((p, p));
    for group in descending_groups(outcomes) {
        for &i in &group {
            let w = (eta[i] - shift).exp();
            s0 += w;
            for a in 0..p {
                let xa = x[[i, a]] * w;
                s1[a] += xa;
                for b in 0..=a {
                    s2[[a, b]] += xa * x[[i, b]];
                }
            }
        }
        let deaths = group.iter().filter(|&&i| outcomes[i].event).count();
        if deaths == 0 {
            continue;
        }
        let d = F::from_count(deaths);
        let log_s0 = shift + s0.ln();
        for &i in group.iter().filter(|&&i| outcomes[i].event) {
            loglik += eta[i] - log_s0;
            for a in 0..p {
                grad[a] += x[[i, a]];
            }
        }
        for a in 0..p {
            let ma = s1[a] / s0;
            grad[a] -= d * ma;
            for b in 0..=a {
                let v = d * (s2[[a, b]] / s0 - ma * (s1[b] / s0));
                hess[[a, b]] -= v;
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            hess[[b, a]] = hess[[a, b]];
        }
    }
    PartialLikelihood {
        log_likelihood: loglik,
        gradient: grad,
        hessian: hess,
    }
}

/// Breslow partial log-likelihood of arbitrary margins.
pub fn partial_log_likelihood_of_margins<F: Real>(margins: &[F], outcomes: &[SurvivalOutcome]) -> F {
    log_likelihood_grouped(margins, outcomes, &descending_groups(outcomes))
}

pub(crate) fn log_likelihood_grouped<F: Real>(
    margins: &[F],
    outcomes: &[SurvivalOutcome],
    groups: &[Vec<usize>],
) -> F {
    let shift = margins.iter().copied().fold(F::neg_infinity(), F::max);
    let shift = if shift.is_finite() { shift } else { F::zero() };
    let mut s0 = F::zero();
    let mut ll = F::zero();
    for group in groups {
        for &i in group {
            s0 += (margins[i] - shift).exp();
        }
        let log_s0 = shift + s0.ln();
        for &i in group.iter().filter(|&&i| outcomes[i].event) {
            ll += margins[i] - log_s0;
        }
    }
    ll
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport<F> {
    pub iterations: usize,
    /// Max-norm of the (penalised) gradient at the returned coefficients.
    pub gradient_norm: F,
    pub log_likelihood: F,
    pub converged: bool,
    /// Partial log-likelihood after each accepted iteration, starting at β = 0.
    pub log_likelihood_trace: Vec<F>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Penalty<F> {
    pub alpha: F,
    pub l1_ratio: F,
    pub standardize: bool,
}

/// Fitted proportional-hazards model.
///
/// The risk score is `r(x) = Σ β_j (x_j - mean_j) / scale_j`; `scale_j` is 1
/// unless the fit standardised the columns. Centring only moves the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoxModel<F> {
    pub feature_names: Vec<String>,
    /// Coefficients on the fitting scale (standardised when `scales` ≠ 1).
    pub coefficients: Vec<F>,
    /// Coefficients per unit of the raw feature.
    pub original_coefficients: Vec<F>,
    pub means: Vec<F>,
    pub scales: Vec<F>,
    pub baseline: BreslowBaseline<F>,
    pub convergence: ConvergenceReport<F>,
    pub penalty: Option<Penalty<F>>,
}

impl<F: Real> CoxModel<F> {
    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    pub fn risk_score(&self, x: &[F]) -> Result<F> {
        if x.len() != self.n_features() {
            return Err(Error::FeatureCountMismatch {
                expected: self.n_features(),
                found: x.len(),
            });
        }
        Ok((0..x.len())
            .map(|j| self.coefficients[j] * (x[j] - self.means[j]) / self.scales[j])
            .sum())
    }

    pub fn risk_scores(&self, x: ArrayView2<F>) -> Result<Vec<F>> {
        x.rows()
            .into_iter()
            .map(|r| self.risk_score(&r.to_vec()))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions<F> {
    pub tolerance: F,
    pub max_iterations: usize,
}

impl<F: Real> Default for NewtonOptions<F> {
    fn default() -> Self {
        NewtonOptions {
            tolerance: F::lit(1e-6),
            max_iterations: 100,
        }
    }
}

struct Prepared<F> {
    x: Array2<F>,
    means: Vec<F>,
    scales: Vec<F>,
    sds: Vec<F>,
}

fn prepare<F: Real>(
    x: ArrayView2<F>,
    outcomes: &[SurvivalOutcome],
    names: &[String],
    standardize: bool,
) -> Result<Prepared<F>> {
    let (n, p) = x.dim();
    if outcomes.len() != n {
        return Err(Error::invalid(format!("{n} rows but {} outcomes", outcomes.len())));
    }
    if names.len() != p {
        return Err(Error::FeatureCountMismatch {
            expected: p,
            found: names.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("design matrix contains missing or non-finite values"));
    }
    let events = outcomes.iter().filter(|o| o.event).count();
    if events < 2 {
        return Err(Error::TooFewEvents {
            required: 2,
            found: events,
        });
    }
    let nf = F::from_count(n);
    let mut means = Vec::with_capacity(p);
    let mut sds = Vec::with_capacity(p);
    for j in 0..p {
        let col = x.column(j);
        let mean = col.iter().copied().sum::<F>() / nf;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
        let first = col[0];
        if col.iter().all(|&v| v == first) || !(var > F::zero()) {
            return Err(Error::ZeroVariance(names[j].clone()));
        }
        means.push(mean);
        sds.push(var.sqrt());
    }
    let scales = if standardize { sds.clone() } else { vec![F::one(); p] };
    let mut xs = x.to_owned();
    for j in 0..p {
        for i in 0..n {
            xs[[i, j]] = (xs[[i, j]] - means[j]) / scales[j];
        }
    }
    Ok(Prepared {
        x: xs,
        means,
        scales,
        sds,
    })
}

fn max_abs<F: Real>(v: impl IntoIterator<Item = F>) -> F {
    v.into_iter().fold(F::zero(), |m, x| m.max(x.abs()))
}

fn finish<F: Real>(
    prep: Prepared<F>,
    names: &[String],
    outcomes: &[SurvivalOutcome],
    beta: Vec<F>,
    convergence: ConvergenceReport<F>,
    penalty: Option<Penalty<F>>,
) -> Result<CoxModel<F>> {
    let scores: Vec<F> = prep
        .x
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(&beta).map(|(&a, &b)| a * b).sum())
        .collect();
    let baseline = breslow_baseline(outcomes, &scores)?;
    let original = beta.iter().zip(&prep.scales).map(|(&b, &s)| b / s).collect();
    Ok(CoxModel {
        feature_names: names.to_vec(),
        coefficients: beta,
        original_coefficients: original,
        means: prep.means,
        scales: prep.scales,
        baseline,
        convergence,
        penalty,
    })
}

/// Unpenalised Cox regression by Newton-Raphson with step-halving.
pub fn fit_coxph<F: Real>(
    x: ArrayView2<F>,
    outcomes: &[SurvivalOutcome],
    names: &[String],
) -> Result<CoxModel<F>> {
    fit_coxph_with(x, outcomes, names, &NewtonOptions::default())
}

pub fn fit_coxph_with<F: Real>(
    x: ArrayView2<F>,
    outcomes: &[SurvivalOutcome],
    names: &[String],
    options: &NewtonOptions<F>,
) -> Result<CoxModel<F>> {
    let prep = prepare(x, outcomes, names, false)?;
    let p = prep.x.ncols();
    let mut beta = vec![F::zero(); p];
    let mut pl = partial_likelihood(prep.x.view(), outcomes, &beta);
    let mut trace = vec![pl.log_likelihood];
    let mut iterations = 0;
    let slack = F::epsilon() * F::lit(64.0);
    loop {
        let gnorm = max_abs(pl.gradient.iter().copied());
        if !gnorm.is_finite() {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm: gnorm.as_f64(),
                last_iterate: beta.iter().map(|b| b.as_f64()).collect(),
                diagnostic: "non-finite gradient".into(),
            });
        }
        if gnorm < options.tolerance {
            break;
        }
        let diverging = beta
            .iter()
            .zip(&prep.sds)
            .any(|(&b, &s)| (b * s).abs() > F::lit(25.0));
        if iterations >= options.max_iterations || diverging {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm: gnorm.as_f64(),
                last_iterate: beta.iter().map(|b| b.as_f64()).collect(),
                diagnostic: if diverging {
                    "coefficients diverging; likely monotone likelihood (separation)".into()
                } else {
                    "iteration limit reached".into()
                },
            });
        }
        iterations += 1;
        let info = pl.hessian.mapv(|v| -v);
        let step = newton_direction(&info, &pl.gradient);
        let mut scale = F::one();
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<F> = beta
                .iter()
                .zip(step.iter())
                .map(|(&b, &d)| b + scale * d)
                .collect();
            let next = partial_likelihood(prep.x.view(), outcomes, &cand);
            let floor = pl.log_likelihood - slack * F::one().max(pl.log_likelihood.abs());
            if next.log_likelihood.is_finite() && next.log_likelihood >= floor {
                accepted = Some((cand, next));
                break;
            }
            scale = scale * F::lit(0.5);
        }
        match accepted {
            Some((b, next)) => {
                beta = b;
                pl = next;
                trace.push(pl.log_likelihood);
            }
            None => {
                return Err(Error::NonConvergence {
                    iterations,
                    gradient_norm: gnorm.as_f64(),
                    last_iterate: beta.iter().map(|b| b.as_f64()).collect(),
                    diagnostic: "step-halving failed to increase the likelihood".into(),
                })
            }
        }
    }
    // Under monotone likelihood Newton "converges" because the gradient
    // decays as a coefficient runs off; doubling it then costs nothing.
    for j in 0..p {
        if (beta[j] * prep.sds[j]).abs() > F::lit(3.0) {
            let mut doubled = beta.clone();
            doubled[j] = doubled[j] * F::lit(2.0);
            let ll = partial_likelihood(prep.x.view(), outcomes, &doubled).log_likelihood;
            if pl.log_likelihood - ll < F::lit(1e-3) {
                return Err(Error::NonConvergence {
                    iterations,
                    gradient_norm: max_abs(pl.gradient.iter().copied()).as_f64(),
                    last_iterate: beta.iter().map(|b| b.as_f64()).collect(),
                    diagnostic: format!(
                        "monotone likelihood in `{}` (separation); coefficient is unbounded",
                        names[j]
                    ),
                });
            }
        }
    }
    let report = ConvergenceReport {
        iterations,
        gradient_norm: max_abs(pl.gradient.iter().copied()),
        log_likelihood: pl.log_likelihood,
        converged: true,
        log_likelihood_trace: trace,
    };
    finish(prep, names, outcomes, beta, report, None)
}

fn newton_direction<F: Real>(info: &Array2<F>, grad: &Array1<F>) -> Array1<F> {
    if let Some(d) = cholesky_solve(info, grad) {
        return d;
    }
    let trace = (0..info.nrows()).map(|i| info[[i, i]].abs()).sum::<F>();
    let mut ridge = F::lit(1e-10) * F::one().max(trace);
    for _ in 0..30 {
        let mut m = info.clone();
        for i in 0..m.nrows() {
            m[[i, i]] += ridge;
        }
        if let Some(d) = cholesky_solve(&m, grad) {
            return d;
        }
        ridge = ridge * F::lit(10.0);
    }
    grad.clone()
}

/// Per-sample first and second derivatives of the Breslow partial
/// log-likelihood in the margins: `grad_i = δ_i - e^{f_i} Σ d_j/S0_j` and
/// `hess_i = -(e^{f_i} Σ d_j/S0_j - e^{2 f_i} Σ d_j/S0_j²)` over event times
/// `t_j ≤ t_i`.
pub fn margin_derivatives<F: Real>(margins: &[F], outcomes: &[SurvivalOutcome]) -> (Vec<F>, Vec<F>) {
    margin_derivatives_grouped(margins, outcomes, &descending_groups(outcomes))
}

pub(crate) fn margin_derivatives_grouped<F: Real>(
    margins: &[F],
    outcomes: &[SurvivalOutcome],
    groups: &[Vec<usize>],
) -> (Vec<F>, Vec<F>) {
    let n = margins.len();
    let shift = margins.iter().copied().fold(F::neg_infinity(), F::max);
    let shift = if shift.is_finite() { shift } else { F::zero() };
    let w: Vec<F> = margins.iter().map(|&m| (m - shift).exp()).collect();
    // risk-set sums per group (descending time order)
    let mut s0s = Vec::with_capacity(groups.len());
    let mut s0 = F::zero();
    for g in groups {
        for &i in g {
            s0 += w[i];
        }
        s0s.push(s0);
    }
    let mut grad = vec![F::zero(); n];
    let mut hess = vec![F::zero(); n];
    let mut a = F::zero(); // Σ d/S0 over event times ≤ t
    let mut b = F::zero(); // Σ d/S0²
    for (g, &s0) in groups.iter().zip(&s0s).rev() {
        let d = F::from_count(g.iter().filter(|&&i| outcomes[i].event).count());
        if d > F::zero() {
            a += d / s0;
            b += d / (s0 * s0);
        }
        for &i in g {
            let delta = if outcomes[i].event { F::one() } else { F::zero() };
            grad[i] = delta - w[i] * a;
            hess[i] = -(w[i] * a - w[i] * w[i] * b);
        }
    }
    (grad, hess)
}

/// Elastic-net penalised Cox regression by cyclic coordinate descent on
/// iteratively reweighted quadratic approximations. Minimises
/// `-loglik/n + alpha (l1_ratio |β|_1 + (1 - l1_ratio) |β|²/2)`.
pub fn fit_penalized_cox<F: Real>(
    x: ArrayView2<F>,
    outcomes: &[SurvivalOutcome],
    names: &[String],
    penalty: Penalty<F>,
) -> Result<CoxModel<F>> {
    if !(penalty.alpha >= F::zero()) || !penalty.alpha.is_finite() {
        return Err(Error::invalid("alpha must be a non-negative number"));
    }
    if !(penalty.l1_ratio >= F::zero() && penalty.l1_ratio <= F::one()) {
        return Err(Error::invalid("l1_ratio must lie in [0, 1]"));
    }
    let prep = prepare(x, outcomes, names, penalty.standardize)?;
    let xs = &prep.x;
    let (n, p) = xs.dim();
    let nf = F::from_count(n);
    let l1 = penalty.alpha * penalty.l1_ratio;
    let l2 = penalty.alpha * (F::one() - penalty.l1_ratio);

    let objective = |beta: &[F], eta: &[F]| -> F {
        let ll = partial_log_likelihood_of_margins(eta, outcomes);
        let pen: F = beta
            .iter()
            .map(|&b| l1 * b.abs() + F::lit(0.5) * l2 * b * b)
            .sum();
        -ll / nf + pen
    };
    let margins = |beta: &[F]| -> Vec<F> {
        (0..n)
            .map(|i| (0..p).map(|j| xs[[i, j]] * beta[j]).sum())
            .collect()
    };

    let mut beta = vec![F::zero(); p];
    let mut eta = vec![F::zero(); n];
    let mut obj = objective(&beta, &eta);
    let mut trace = vec![partial_log_likelihood_of_margins(&eta, outcomes)];
    let tiny = F::lit(1e-12);
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..500 {
        iterations += 1;
        let (g, h) = margin_derivatives(&eta, outcomes);
        let w: Vec<F> = h.iter().map(|&v| (-v).max(tiny)).collect();
        let mut resid: Vec<F> = g.iter().zip(&w).map(|(&g, &w)| g / w).collect();
        let prev = beta.clone();
        let curv: Vec<F> = (0..p)
            .map(|j| (0..n).map(|i| w[i] * xs[[i, j]] * xs[[i, j]]).sum::<F>() / nf)
            .collect();
        for _ in 0..200 {
            let mut max_delta = F::zero();
            for j in 0..p {
                let rho = (0..n).map(|i| w[i] * xs[[i, j]] * resid[i]).sum::<F>() / nf
                    + curv[j] * beta[j];
                let new = soft_threshold(rho, l1) / (curv[j] + l2);
                let d = new - beta[j];
                if d != F::zero() {
                    for i in 0..n {
                        resid[i] -= d * xs[[i, j]];
                    }
                    beta[j] = new;
                    max_delta = max_delta.max(d.abs());
                }
            }
            if max_delta < F::lit(1e-12) {
                break;
            }
        }
        // guard against overshooting the true objective
        let mut cand_eta = margins(&beta);
        let mut cand_obj = objective(&beta, &cand_eta);
        let mut halvings = 0;
        while !(cand_obj <= obj + F::epsilon() * F::lit(64.0) * F::one().max(obj.abs())) && halvings < 40 {
            for j in 0..p {
                beta[j] = F::lit(0.5) * (beta[j] + prev[j]);
            }
            cand_eta = margins(&beta);
            cand_obj = objective(&beta, &cand_eta);
            halvings += 1;
        }
        eta = cand_eta;
        obj = cand_obj;
        trace.push(partial_log_likelihood_of_margins(&eta, outcomes));
        let change = max_abs(beta.iter().zip(&prev).map(|(&a, &b)| a - b));
        if change < F::lit(1e-10) {
            converged = true;
            break;
        }
    }
    let (g, _) = margin_derivatives(&eta, outcomes);
    let kkt = (0..p)
        .map(|j| {
            let grad = (0..n).map(|i| xs[[i, j]] * g[i]).sum::<F>() / nf - l2 * beta[j];
            if beta[j] != F::zero() {
                (grad - l1 * beta[j].signum()).abs()
            } else {
                (grad.abs() - l1).max(F::zero())
            }
        })
        .fold(F::zero(), F::max);
    let report = ConvergenceReport {
        iterations,
        gradient_norm: kkt,
        log_likelihood: partial_log_likelihood_of_margins(&eta, outcomes),
        converged,
        log_likelihood_trace: trace,
    };
    finish(prep, names, outcomes, beta, report, Some(penalty))
}

fn soft_threshold<F: Real>(z: F, gamma: F) -> F {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        F::zero()
    }
}

/// Smallest alpha at which every coefficient of an `l1_ratio` fit is zero.
pub fn alpha_max<F: Real>(
    x: ArrayView2<F>,
    outcomes: &[SurvivalOutcome],
    names: &[String],
    l1_ratio: F,
    standardize: bool,
) -> Result<F> {
    let prep = prepare(x, outcomes, names, standardize)?;
    let n = prep.x.nrows();
    let pl = partial_likelihood(prep.x.view(), outcomes, &vec![F::zero(); prep.x.ncols()]);
    Ok(max_abs(pl.gradient.iter().copied()) / (F::from_count(n) * l1_ratio.max(F::epsilon())))
}

/// Named configurations of the linear models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoxPreset {
    Coxph,
    Ridge,
    Lasso,
    Elastic,
}

impl CoxPreset {
    pub const LASSO_L1_RATIO: f64 = 0.9;
    pub const LASSO_ALPHA_MIN_RATIO: f64 = 0.01;

    pub fn name(self) -> &'static str {
        match self {
            CoxPreset::Coxph => "coxph",
            CoxPreset::Ridge => "ridge",
            CoxPreset::Lasso => "lasso",
            CoxPreset::Elastic => "elastic",
        }
    }

    pub fn fit<F: Real>(
        self,
        x: ArrayView2<F>,
        outcomes: &[SurvivalOutcome],
        names: &[String],
    ) -> Result<CoxModel<F>> {
        let penalty = match self {
            CoxPreset::Coxph => return fit_coxph(x, outcomes, names),
            CoxPreset::Ridge => Penalty {
                alpha: F::lit(2.24e-6),
                l1_ratio: F::lit(1e-100),
                standardize: true,
            },
            CoxPreset::Elastic => Penalty {
                alpha: F::lit(0.00034),
                l1_ratio: F::one(),
                standardize: true,
            },
            CoxPreset::Lasso => {
                let l1_ratio = F::lit(Self::LASSO_L1_RATIO);
                let amax = alpha_max(x, outcomes, names, l1_ratio, true)?;
                Penalty {
                    alpha: amax * F::lit(Self::LASSO_ALPHA_MIN_RATIO),
                    l1_ratio,
                    standardize: true,
                }
            }
        };
        fit_penalized_cox(x, outcomes, names, penalty)
    }
}

/// `S(t|x) = exp(-H0(t) exp(r(x)))` on the given times.
pub fn predict_survival<F: Real>(model: &CoxModel<F>, x: &[F], times: &[F]) -> Result<SurvivalCurve<F>> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("times must be ascending"));
    }
    let mut clipped = 0;
    let r = clip_score(model.risk_score(x)?, &mut clipped);
    Ok(curve_from_hazard(&model.baseline, r, times))
}

pub(crate) fn curve_from_hazard<F: Real>(baseline: &BreslowBaseline<F>, margin: F, times: &[F]) -> SurvivalCurve<F> {
    let c = F::lit(SCORE_CLIP);
    let rel = margin.max(-c).min(c).exp();
    SurvivalCurve {
        times: times.to_vec(),
        survival: times
            .iter()
            .map(|&t| (-baseline.cumulative_hazard.eval(t) * rel).exp())
            .collect(),
    }
}
