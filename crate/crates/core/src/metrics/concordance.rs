use crate::cohort::SurvivalOutcome;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::survcore::{censoring_km, StepFunction};

fn pair_credit<F: Real>(si: F, sj: F) -> F {
    if si > sj {
        F::one()
    } else if si == sj {
        F::lit(0.5)
    } else {
        F::zero()
    }
}

fn check_aligned<F>(scores: &[F], outcomes: &[SurvivalOutcome]) -> Result<()> {
    if scores.len() != outcomes.len() {
        return Err(Error::invalid("scores and outcomes differ in length"));
    }
    Ok(())
}

/// Harrell's concordance: over pairs where `i` has the event and `j` is
/// still at risk strictly after `t_i`, the share ranked correctly by score
/// (higher score = higher risk, ties count one half).
pub fn harrell_cindex<F: Real>(scores: &[F], outcomes: &[SurvivalOutcome]) -> Result<F> {
    check_aligned(scores, outcomes)?;
    let mut num = F::zero();
    let mut den = F::zero();
    for (i, oi) in outcomes.iter().enumerate() {
        if !oi.event {
            continue;
        }
        for (j, oj) in outcomes.iter().enumerate() {
            if oj.time_days > oi.time_days {
                num += pair_credit(scores[i], scores[j]);
                den += F::one();
            }
        }
    }
    if den == F::zero() {
        return Err(Error::undefined("harrell_cindex", "no comparable pairs"));
    }
    Ok(num / den)
}

/// Uno's inverse-probability-of-censoring weighted concordance truncated at
/// `tau` (default: the largest test time). The censoring survival `Ĝ` is the
/// Kaplan-Meier estimate on the training outcomes.
pub fn ipcw_cindex<F: Real>(
    train_outcomes: &[SurvivalOutcome],
    test_scores: &[F],
    test_outcomes: &[SurvivalOutcome],
    tau: Option<F>,
) -> Result<F> {
    let g = censoring_km::<F>(train_outcomes);
    ipcw_cindex_with(&g, test_scores, test_outcomes, tau)
}

/// As [`ipcw_cindex`] with a precomputed censoring survival function.
pub fn ipcw_cindex_with<F: Real>(
    censor_km: &StepFunction<F>,
    test_scores: &[F],
    test_outcomes: &[SurvivalOutcome],
    tau: Option<F>,
) -> Result<F> {
    check_aligned(test_scores, test_outcomes)?;
    let tau = match tau {
        Some(t) => t,
        None => match test_outcomes.iter().map(|o| o.time_days).max() {
            Some(t) => F::from_days(t),
            None => return Err(Error::undefined("ipcw_cindex", "empty test set")),
        },
    };
    let mut num = F::zero();
    let mut den = F::zero();
    for (i, oi) in test_outcomes.iter().enumerate() {
        let ti = F::from_days(oi.time_days);
        if !oi.event || !(ti < tau) {
            continue;
        }
        let g = censor_km.eval_left(ti);
        let mut weight = None;
        for (j, oj) in test_outcomes.iter().enumerate() {
            if oj.time_days > oi.time_days {
                let w = match weight {
                    Some(w) => w,
                    None => {
                        if !(g > F::zero()) {
                            return Err(Error::ZeroCensoringWeight {
                                time: ti.as_f64(),
                                tau: Some(tau.as_f64()),
                            });
                        }
                        let w = F::one() / (g * g);
                        weight = Some(w);
                        w
                    }
                };
                num += w * pair_credit(test_scores[i], test_scores[j]);
                den += w;
            }
        }
    }
    if den == F::zero() {
        return Err(Error::undefined("ipcw_cindex", "no comparable pairs before tau"));
    }
    Ok(num / den)
}
