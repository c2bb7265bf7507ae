//! Nonparametric survival estimators and Cox proportional-hazards fitting.
//!
//! Ties use the Breslow convention everywhere. Times are days.

mod cox;
mod estimators;
mod step;

pub use cox::{
    alpha_max, fit_coxph, fit_coxph_with, fit_penalized_cox, margin_derivatives, partial_likelihood,
    partial_log_likelihood_of_margins, predict_survival, ConvergenceReport, CoxModel, CoxPreset,
    NewtonOptions, PartialLikelihood, Penalty,
};
pub(crate) use cox::{
    curve_from_hazard, descending_groups, log_likelihood_grouped, margin_derivatives_grouped,
};
pub use estimators::{
    breslow_baseline, censoring_km, kaplan_meier, nelson_aalen, risk_table, BreslowBaseline, RiskRow,
    SCORE_CLIP,
};
pub use step::{StepFunction, SurvivalCurve};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::SurvivalOutcome;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1, StandardNormal};

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{j}")).collect()
    }

    fn random_data(rng: &mut ChaCha8Rng, n: usize, p: usize, max_time: u32) -> (Array2<f64>, Vec<SurvivalOutcome>) {
        let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let outcomes = (0..n)
            .map(|_| {
                let t = rng.random_range(1..=max_time);
                if rng.random::<f64>() < 0.6 {
                    SurvivalOutcome::event(t)
                } else {
                    SurvivalOutcome::censored(t)
                }
            })
            .collect();
        (x, outcomes)
    }

    /// Exponential event times under `beta`, with independent exponential
    /// censoring at `censor_rate`.
    fn cox_data(
        rng: &mut ChaCha8Rng,
        n: usize,
        beta: &[f64],
        censor_rate: f64,
    ) -> (Array2<f64>, Vec<SurvivalOutcome>) {
        let p = beta.len();
        let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let outcomes = (0..n)
            .map(|i| {
                let eta: f64 = (0..p).map(|j| beta[j] * x[[i, j]]).sum();
                let t = 200.0 * rng.sample::<f64, _>(Exp1) / eta.exp();
                let c = if censor_rate > 0.0 {
                    rng.sample::<f64, _>(Exp1) / censor_rate
                } else {
                    f64::INFINITY
                };
                // fine time resolution keeps ties rare
                let obs = t.min(c);
                let day = (obs * 10.0).ceil().max(1.0) as u32;
                if t <= c {
                    SurvivalOutcome::event(day)
                } else {
                    SurvivalOutcome::censored(day)
                }
            })
            .collect();
        (x, outcomes)
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let (x, o) = random_data(&mut rng, 80, 3, 30);
            let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-0.8..0.8)).collect();
            let pl = partial_likelihood(x.view(), &o, &beta);
            let h = 1e-5;
            for a in 0..3 {
                let mut bp = beta.clone();
                let mut bm = beta.clone();
                bp[a] += h;
                bm[a] -= h;
                let lp = partial_likelihood(x.view(), &o, &bp);
                let lm = partial_likelihood(x.view(), &o, &bm);
                let fd = (lp.log_likelihood - lm.log_likelihood) / (2.0 * h);
                assert!((fd - pl.gradient[a]).abs() <= 1e-5 * fd.abs().max(1.0));
                for b in 0..3 {
                    let fd = (lp.gradient[b] - lm.gradient[b]) / (2.0 * h);
                    assert!((fd - pl.hessian[[a, b]]).abs() <= 1e-5 * fd.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn margin_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, o) = random_data(&mut rng, 60, 1, 15);
        let f: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (g, h) = margin_derivatives(&f, &o);
        let eps = 1e-5;
        for i in 0..60 {
            let mut fp = f.clone();
            let mut fm = f.clone();
            fp[i] += eps;
            fm[i] -= eps;
            let lp = partial_log_likelihood_of_margins(&fp, &o);
            let lm = partial_log_likelihood_of_margins(&fm, &o);
            let fd = (lp - lm) / (2.0 * eps);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "grad {i}");
            // diagonal second derivative from the analytic gradient
            let fd2 = (margin_derivatives(&fp, &o).0[i] - margin_derivatives(&fm, &o).0[i]) / (2.0 * eps);
            assert!((fd2 - h[i]).abs() <= 1e-3 * fd2.abs().max(1e-2), "hess {i}: {fd2} vs {}", h[i]);
        }
    }

    #[test]
    fn single_binary_covariate_matches_golden_section() {
        let x = Array2::from_shape_vec(
            (12, 1),
            vec![1., 0., 1., 1., 0., 0., 1., 0., 1., 0., 0., 1.],
        )
        .unwrap();
        let times = [3, 5, 2, 8, 9, 4, 1, 12, 6, 7, 10, 5];
        let events = [1, 1, 1, 0, 1, 0, 1, 1, 1, 0, 1, 1];
        let o: Vec<SurvivalOutcome> = times
            .iter()
            .zip(events)
            .map(|(&t, e)| if e == 1 { SurvivalOutcome::event(t) } else { SurvivalOutcome::censored(t) })
            .collect();
        let model = fit_coxph(x.view(), &o, &names(1)).unwrap();
        let ll = |b: f64| partial_likelihood(x.view(), &o, &[b]).log_likelihood;
        let (mut lo, mut hi) = (-10.0f64, 10.0f64);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if ll(a) > ll(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let golden = 0.5 * (lo + hi);
        assert!((model.original_coefficients[0] - golden).abs() < 1e-4);
        assert!(model.convergence.gradient_norm < 1e-6);
    }

    #[test]
    fn newton_never_decreases_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, o) = cox_data(&mut rng, 400, &[1.5, -1.0, 0.5], 0.002);
        let m = fit_coxph(x.view(), &o, &names(3)).unwrap();
        let t = &m.convergence.log_likelihood_trace;
        assert!(t.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
    }

    #[test]
    fn permuted_labels_give_small_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, o) = cox_data(&mut rng, 2000, &[0.0], 0.002);
        let m = fit_coxph(x.view(), &o, &names(1)).unwrap();
        assert!(m.coefficients[0].abs() < 0.1);
    }

    #[test]
    fn zero_variance_is_named() {
        let x = Array2::from_shape_vec((3, 2), vec![1., 2., 1., 3., 1., 4.]).unwrap();
        let o = vec![SurvivalOutcome::event(1), SurvivalOutcome::event(2), SurvivalOutcome::censored(3)];
        match fit_coxph(x.view(), &o, &["a".into(), "b".into()]) {
            Err(crate::Error::ZeroVariance(name)) => assert_eq!(name, "a"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn separation_reports_last_iterate() {
        // covariate 1 dies first, always
        let x = Array2::from_shape_vec((6, 1), vec![1., 1., 1., 0., 0., 0.]).unwrap();
        let o: Vec<_> = (1..=6).map(SurvivalOutcome::event).collect();
        match fit_coxph(x.view(), &o, &names(1)) {
            Err(crate::Error::NonConvergence { last_iterate, .. }) => assert!(last_iterate[0] > 5.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn penalised_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, o) = cox_data(&mut rng, 600, &[0.8, -0.5, 0.3], 0.002);
        let n = names(3);
        let plain = fit_coxph(x.view(), &o, &n).unwrap();
        for l1 in [0.0, 0.5, 1.0] {
            let pen = Penalty { alpha: 1e-10, l1_ratio: l1, standardize: true };
            let m = fit_penalized_cox(x.view(), &o, &n, pen).unwrap();
            for j in 0..3 {
                assert!((m.original_coefficients[j] - plain.original_coefficients[j]).abs() < 1e-3);
            }
        }
        let m = fit_penalized_cox(x.view(), &o, &n, Penalty { alpha: 1e6, l1_ratio: 1.0, standardize: true }).unwrap();
        assert!(m.coefficients.iter().all(|&b| b == 0.0));
        let norms: Vec<f64> = [0.01, 0.1, 1.0]
            .iter()
            .map(|&a| {
                let m = fit_penalized_cox(x.view(), &o, &n, Penalty { alpha: a, l1_ratio: 0.0, standardize: true }).unwrap();
                m.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt()
            })
            .collect();
        assert!(norms[0] > norms[1] && norms[1] > norms[2]);
    }

    #[test]
    fn presets_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (x, o) = cox_data(&mut rng, 500, &[0.8, -0.5, 0.0, 0.2], 0.002);
        for p in [CoxPreset::Coxph, CoxPreset::Ridge, CoxPreset::Lasso, CoxPreset::Elastic] {
            let m = p.fit(x.view(), &o, &names(4)).unwrap();
            assert!(m.coefficients[0] > 0.0 && m.coefficients[1] < 0.0, "{p:?}");
        }
        let amax = alpha_max(x.view(), &o, &names(4), 0.9, true).unwrap();
        let m = fit_penalized_cox(x.view(), &o, &names(4), Penalty { alpha: amax * 1.0001, l1_ratio: 0.9, standardize: true }).unwrap();
        assert!(m.coefficients.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn breslow_with_zero_scores_is_nelson_aalen() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (_, o) = random_data(&mut rng, 500, 1, 40);
        let b = breslow_baseline(&o, &vec![0.0f64; 500]).unwrap();
        assert_eq!(b.cumulative_hazard, nelson_aalen::<f64>(&o));
    }

    #[test]
    fn breslow_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, o) = random_data(&mut rng, 50, 1, 12);
        let r: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = breslow_baseline(&o, &r).unwrap();
        for t in 0..=13u32 {
            let mut h = 0.0;
            for s in 1..=t {
                let d = o.iter().filter(|x| x.event && x.time_days == s).count();
                if d == 0 {
                    continue;
                }
                let at_risk: f64 = o
                    .iter()
                    .zip(&r)
                    .filter(|(x, _)| x.time_days >= s)
                    .map(|(_, r)| r.exp())
                    .sum();
                h += d as f64 / at_risk;
            }
            assert!((b.cumulative_hazard.eval(t as f64) - h).abs() < 1e-12);
        }
    }

    #[test]
    fn kaplan_meier_converges_to_weibull() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (shape, scale) = (0.7, 900.0);
        let o: Vec<SurvivalOutcome> = (0..10000)
            .map(|_| {
                let e: f64 = rng.sample(Exp1);
                let t: f64 = scale * e.powf(1.0 / shape);
                SurvivalOutcome::event(t.ceil().max(1.0) as u32)
            })
            .collect();
        let km: StepFunction<f64> = kaplan_meier(&o);
        let truth = |t: f64| (-(t / scale).powf(shape)).exp();
        let sup = km
            .knots()
            .iter()
            .map(|&t| (km.eval(t) - truth(t)).abs().max((km.eval_left(t) - truth(t - 1.0)).abs()))
            .fold(0.0, f64::max);
        assert!(sup < 0.02, "{sup}");
        let na = nelson_aalen::<f64>(&o).map(|h| (-h).exp());
        assert!(na.sup_distance(&km) < 0.02);
    }

    #[test]
    fn survival_prediction_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (x, o) = cox_data(&mut rng, 300, &[0.7, -0.4], 0.002);
        let m = fit_coxph(x.view(), &o, &names(2)).unwrap();
        let times: Vec<f64> = (0..50).map(|t| t as f64 * 40.0).collect();
        let first = m.baseline.cumulative_hazard.knots()[0];
        let c = predict_survival(&m, &m.means, &times).unwrap();
        for (t, s) in times.iter().zip(&c.survival) {
            assert!((s - (-m.baseline.cumulative_hazard.eval(*t)).exp()).abs() < 1e-15);
            if *t < first {
                assert_eq!(*s, 1.0);
            }
        }
        let normal = StandardNormal;
        for _ in 0..200 {
            let a: Vec<f64> = (0..2).map(|_| normal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..2).map(|_| normal.sample(&mut rng)).collect();
            let (ra, rb) = (m.risk_score(&a).unwrap(), m.risk_score(&b).unwrap());
            let (ca, cb) = (predict_survival(&m, &a, &times).unwrap(), predict_survival(&m, &b, &times).unwrap());
            let (hi, lo) = if ra >= rb { (&ca, &cb) } else { (&cb, &ca) };
            assert!(hi.survival.iter().zip(&lo.survival).all(|(h, l)| h <= l));
            assert!(ca.is_valid());
        }
    }

    #[test]
    fn generic_over_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (x, o) = cox_data(&mut rng, 300, &[0.7], 0.002);
        let x32 = x.mapv(|v| v as f32);
        let opts = NewtonOptions { tolerance: 1e-2f32, max_iterations: 50 };
        let m32 = fit_coxph_with(x32.view(), &o, &names(1), &opts).unwrap();
        let m64 = fit_coxph(x.view(), &o, &names(1)).unwrap();
        assert!((m32.coefficients[0] as f64 - m64.coefficients[0]).abs() < 1e-3);
    }

    #[test]
    fn recovers_true_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (x, o) = cox_data(&mut rng, 5000, &[1.0, -0.5], 0.0015);
        let m = fit_coxph(x.view(), &o, &names(2)).unwrap();
        assert!((m.coefficients[0] - 1.0).abs() < 0.1);
        assert!((m.coefficients[1] + 0.5).abs() < 0.1);
    }
}
