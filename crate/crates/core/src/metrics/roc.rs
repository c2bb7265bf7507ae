use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Confusion-matrix rates at one probability threshold. The positive class
/// is "survived the horizon"; a prediction is positive when the probability
/// is at least `threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint<F> {
    pub threshold: F,
    pub tpr: F,
    pub fpr: F,
    pub tnr: F,
    /// `None` when no prediction is negative.
    pub npv: Option<F>,
    /// `None` when no prediction is positive.
    pub ppv: Option<F>,
}

fn ratio<F: Real>(a: usize, b: usize) -> Option<F> {
    (b > 0).then(|| F::from_count(a) / F::from_count(b))
}

/// Rates at a single threshold.
pub fn confusion_at<F: Real>(probs: &[F], labels: &[bool], threshold: F) -> Result<RocPoint<F>> {
    if probs.len() != labels.len() {
        return Err(Error::invalid("probabilities and labels differ in length"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    if tp + fn_ == 0 || fp + tn == 0 {
        return Err(Error::SingleClass);
    }
    let fpr: F = ratio(fp, fp + tn).expect("negatives present");
    Ok(RocPoint {
        threshold,
        tpr: ratio(tp, tp + fn_).expect("positives present"),
        fpr,
        tnr: ratio(tn, fp + tn).expect("negatives present"),
        npv: ratio(tn, tn + fn_),
        ppv: ratio(tp, tp + fp),
    })
}

/// ROC curve with clinical rates at every distinct probability plus the
/// thresholds 0 and 1, in ascending threshold order.
pub fn roc_with_clinical_metrics<F: Real>(
    survival_probs: &[F],
    binary_survival_labels: &[bool],
) -> Result<Vec<RocPoint<F>>> {
    if survival_probs.len() != binary_survival_labels.len() {
        return Err(Error::invalid("probabilities and labels differ in length"));
    }
    let pos = binary_survival_labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == binary_survival_labels.len() {
        return Err(Error::SingleClass);
    }
    let mut thresholds: Vec<F> = survival_probs.to_vec();
    thresholds.push(F::zero());
    thresholds.push(F::one());
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("finite probabilities"));
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|t| confusion_at(survival_probs, binary_survival_labels, t))
        .collect()
}

/// Area under the ROC curve of `scores` for binary `labels` (Mann-Whitney,
/// ties count one half).
pub fn auroc<F: Real>(scores: &[F], labels: &[bool]) -> Result<F> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let mut neg: Vec<F> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| !y)
        .map(|(&s, _)| s)
        .collect();
    let n_pos = labels.len() - neg.len();
    if n_pos == 0 || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    neg.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let mut credit = F::zero();
    for (&s, _) in scores.iter().zip(labels).filter(|(_, &y)| y) {
        let below = neg.partition_point(|&c| c < s);
        let not_above = neg.partition_point(|&c| c <= s);
        credit += F::from_count(below) + F::lit(0.5) * F::from_count(not_above - below);
    }
    Ok(credit / (F::from_count(n_pos) * F::from_count(neg.len())))
}
