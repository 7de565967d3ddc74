use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 over exact (whitespace-trimmed) entity matches.
pub fn entity_f1<P: AsRef<str>, T: AsRef<str>>(pred: &[P], truth: &[T]) -> Result<Prf, EvalError> {
    let truth: HashSet<&str> = truth.iter().map(|t| t.as_ref().trim()).collect();
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let pred: HashSet<&str> = pred.iter().map(|p| p.as_ref().trim()).collect();
    let hit = pred.intersection(&truth).count() as f64;
    let precision = if pred.is_empty() { 0.0 } else { hit / pred.len() as f64 };
    let recall = hit / truth.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf { precision, recall, f1 })
}

/// Softmax weight of the yes logit against the no logit.
pub fn yes_probability(yes_logit: f64, no_logit: f64) -> Result<f64, EvalError> {
    if !yes_logit.is_finite() {
        return Err(EvalError::NonFinite("yes logit"));
    }
    if !no_logit.is_finite() {
        return Err(EvalError::NonFinite("no logit"));
    }
    let m = yes_logit.max(no_logit);
    let y = (yes_logit - m).exp();
    let n = (no_logit - m).exp();
    Ok(y / (y + n))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Counts are kept as integers until the final division.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NonFinite("score"));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 {
        return Err(EvalError::MissingClass("positive"));
    }
    if neg == 0 {
        return Err(EvalError::MissingClass("negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the Mann-Whitney U
    let mut doubled: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                n += 1;
            }
            j += 1;
        }
        doubled += 2 * p * neg_below + p * n;
        neg_below += n;
        i = j;
    }
    Ok(doubled as f64 / (2 * pos * neg) as f64)
}
