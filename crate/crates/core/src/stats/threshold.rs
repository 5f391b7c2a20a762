use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{check_both_classes, check_inputs, StatsError};

/// The Youden-optimal operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoudenPoint {
    #[serde(with = "super::inf_f64")]
    pub threshold: f64,
    pub j: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Candidate thresholds: -inf, midpoints of adjacent distinct scores, +inf (ascending).
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut out = Vec::with_capacity(distinct.len() + 1);
    out.push(f64::NEG_INFINITY);
    out.extend(distinct.windows(2).map(|w| midpoint(w[0], w[1])));
    out.push(f64::INFINITY);
    out
}

/// Midpoint of `lo < hi`, nudged to `hi` when the two are adjacent floats.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = (lo + hi) / 2.0;
    if m > lo {
        m
    } else {
        hi
    }
}

/// Compares two rules by J, then sensitivity, then prefers the lower threshold.
///
/// `(tp, tn, threshold)`; J is compared exactly as `tp*N + tn*P`.
pub(crate) fn better(a: (usize, usize, f64), b: (usize, usize, f64), p: usize, n: usize) -> bool {
    let ja = a.0 as u128 * n as u128 + a.1 as u128 * p as u128;
    let jb = b.0 as u128 * n as u128 + b.1 as u128 * p as u128;
    match ja.cmp(&jb) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.0.cmp(&b.0) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => a.2 < b.2,
        },
    }
}

/// Maximizes J = sensitivity + specificity - 1 over [`candidate_thresholds`].
pub fn youden_threshold(scores: &[f64], labels: &[bool]) -> Result<YoudenPoint, StatsError> {
    let (p, n) = check_both_classes(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // at -inf everything is positive; raising the threshold past each distinct
    // score moves that group to the negative side
    let (mut tp, mut tn) = (p, 0usize);
    let mut best = (tp, tn, f64::NEG_INFINITY);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp -= 1;
            } else {
                tn += 1;
            }
            k += 1;
        }
        let t = match order.get(k) {
            Some(&next) => midpoint(s, scores[next]),
            None => f64::INFINITY,
        };
        if better((tp, tn, t), best, p, n) {
            best = (tp, tn, t);
        }
    }
    let sensitivity = best.0 as f64 / p as f64;
    let specificity = best.1 as f64 / n as f64;
    Ok(YoudenPoint {
        threshold: best.2,
        j: sensitivity + specificity - 1.0,
        sensitivity,
        specificity,
    })
}

/// The 2x2 table under `score >= threshold` => positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn new(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self, StatsError> {
        check_inputs(scores, labels)?;
        let mut c = Confusion { tp: 0, fp: 0, tn: 0, fn_: 0 };
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / (self.positives() + self.negatives()) as f64
    }

    pub fn sensitivity(&self) -> Result<f64, StatsError> {
        if self.positives() == 0 {
            return Err(StatsError::SingleClass { positives: 0, negatives: self.negatives() });
        }
        Ok(self.tp as f64 / self.positives() as f64)
    }

    pub fn specificity(&self) -> Result<f64, StatsError> {
        if self.negatives() == 0 {
            return Err(StatsError::SingleClass { positives: self.positives(), negatives: 0 });
        }
        Ok(self.tn as f64 / self.negatives() as f64)
    }
}

/// (accuracy, sensitivity, specificity) at `threshold`.
pub fn confusion_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(f64, f64, f64), StatsError> {
    let c = Confusion::new(scores, labels, threshold)?;
    Ok((c.accuracy(), c.sensitivity()?, c.specificity()?))
}
