use serde::{Deserialize, Serialize};

use super::{check_both_classes, check_inputs, midranks, StatsError};

/// ROC points from the strictest threshold down; `thresholds[i]` yields `points[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (false-positive rate, true-positive rate)
    pub points: Vec<(f64, f64)>,
    #[serde(with = "super::inf_f64::vec")]
    pub thresholds: Vec<f64>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

/// Precision/recall at each distinct threshold, strictest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// (recall, precision)
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
    pub average_precision: f64,
}

/// Mann–Whitney AUC from midranks; ties count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, StatsError> {
    let (p, n) = check_both_classes(scores, labels)?;
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l).map(|(r, _)| r).sum();
    let (p, n) = (p as f64, n as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Distinct scores in descending order with cumulative (tp, fp) at each.
fn sweep(scores: &[f64], labels: &[bool]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, StatsError> {
    let (p, n) = check_both_classes(scores, labels)?;
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    for (t, tp, fp) in sweep(scores, labels) {
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
        thresholds.push(t);
    }
    Ok(RocCurve { points, thresholds })
}

/// PR curve with step-interpolated average precision `sum (R_i - R_{i-1}) * P_i`.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve, StatsError> {
    let (p, _) = check_inputs(scores, labels)?;
    if p == 0 {
        return Err(StatsError::NoPositives);
    }
    let mut points = Vec::new();
    let mut thresholds = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (t, tp, fp) in sweep(scores, labels) {
        let recall = tp as f64 / p as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push((recall, precision));
        thresholds.push(t);
    }
    Ok(PrCurve {
        points,
        thresholds,
        average_precision: ap,
    })
}
