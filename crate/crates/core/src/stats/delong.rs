use serde::{Deserialize, Serialize};

use super::{check_both_classes, midranks, two_sided_p, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelongMode {
    Paired,
    Unpaired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub variance_a: f64,
    pub variance_b: f64,
    pub covariance: f64,
    pub z: f64,
    pub p_two_sided: f64,
    pub mode: DelongMode,
}

/// Structural components of one classifier: positive and negative placements.
#[derive(Debug, Clone)]
pub(crate) struct Components {
    pub auc: f64,
    /// For each positive, the fraction of negatives it outranks (ties 1/2).
    pub v10: Vec<f64>,
    /// For each negative, the fraction of positives that outrank it.
    pub v01: Vec<f64>,
}

/// Placements from midranks: O(N log N).
pub(crate) fn components(scores: &[f64], labels: &[bool]) -> Components {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| !**l).map(|(s, _)| *s).collect();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let tz = midranks(&all);
    let tx = midranks(&pos);
    let ty = midranks(&neg);
    let v10: Vec<f64> = (0..pos.len()).map(|i| (tz[i] - tx[i]) / n).collect();
    let v01: Vec<f64> = (0..neg.len())
        .map(|j| 1.0 - (tz[pos.len() + j] - ty[j]) / m)
        .collect();
    let auc = v10.iter().sum::<f64>() / m;
    Components { auc, v10, v01 }
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let k = a.len() as f64;
    if a.len() < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / k;
    let mb = b.iter().sum::<f64>() / k;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (k - 1.0)
}

impl Components {
    pub fn variance(&self) -> f64 {
        covariance(&self.v10, &self.v10) / self.v10.len() as f64 + covariance(&self.v01, &self.v01) / self.v01.len() as f64
    }
}

fn z_and_p(diff: f64, var: f64) -> Result<(f64, f64), StatsError> {
    if diff == 0.0 {
        return Ok((0.0, 1.0));
    }
    if var <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let z = diff / var.sqrt();
    Ok((z, two_sided_p(z)))
}

/// DeLong test for two classifiers scored on the same cases.
pub fn delong_paired(scores_a: &[f64], scores_b: &[f64], labels: &[bool]) -> Result<DelongResult, StatsError> {
    if scores_a.len() != scores_b.len() {
        return Err(StatsError::LengthMismatch(scores_a.len(), scores_b.len()));
    }
    let (m, n) = check_both_classes(scores_a, labels)?;
    check_both_classes(scores_b, labels)?;
    let a = components(scores_a, labels);
    let b = components(scores_b, labels);
    let (m, n) = (m as f64, n as f64);
    let variance_a = a.variance();
    let variance_b = b.variance();
    let covariance = covariance(&a.v10, &b.v10) / m + covariance(&a.v01, &b.v01) / n;
    let identical = scores_a == scores_b;
    let var = if identical { 0.0 } else { variance_a + variance_b - 2.0 * covariance };
    let diff = if identical { 0.0 } else { a.auc - b.auc };
    let (z, p) = z_and_p(diff, var)?;
    Ok(DelongResult {
        auc_a: a.auc,
        auc_b: b.auc,
        variance_a,
        variance_b,
        covariance,
        z,
        p_two_sided: p,
        mode: DelongMode::Paired,
    })
}

/// Independent-samples z-test on two AUCs with DeLong variances.
pub fn delong_unpaired(
    scores_1: &[f64],
    labels_1: &[bool],
    scores_2: &[f64],
    labels_2: &[bool],
) -> Result<DelongResult, StatsError> {
    check_both_classes(scores_1, labels_1)?;
    check_both_classes(scores_2, labels_2)?;
    let a = components(scores_1, labels_1);
    let b = components(scores_2, labels_2);
    let variance_a = a.variance();
    let variance_b = b.variance();
    let (z, p) = z_and_p(a.auc - b.auc, variance_a + variance_b)?;
    Ok(DelongResult {
        auc_a: a.auc,
        auc_b: b.auc,
        variance_a,
        variance_b,
        covariance: 0.0,
        z,
        p_two_sided: p,
        mode: DelongMode::Unpaired,
    })
}

/// DeLong variance of a single AUC.
pub fn auc_variance(scores: &[f64], labels: &[bool]) -> Result<f64, StatsError> {
    check_both_classes(scores, labels)?;
    Ok(components(scores, labels).variance())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|x| *x == 1).collect()
    }

    #[test]
    fn identical_scores_give_p_one() {
        let s = [0.1, 0.7, 0.3, 0.9, 0.5, 0.5];
        let l = b(&[0, 1, 0, 1, 1, 0]);
        let r = delong_paired(&s, &s, &l).unwrap();
        assert_eq!((r.z, r.p_two_sided), (0.0, 1.0));
        let r = delong_unpaired(&s, &l, &s, &l).unwrap();
        assert_eq!((r.z, r.p_two_sided), (0.0, 1.0));
    }

    #[test]
    fn shifted_sample_has_equal_auc() {
        let s = [0.1, 0.7, 0.3, 0.9, 0.5, 0.45];
        let l = b(&[0, 1, 0, 1, 1, 0]);
        let shifted: Vec<f64> = s.iter().map(|x| x + 0.01).collect();
        let r = delong_unpaired(&s, &l, &shifted, &l).unwrap();
        assert_eq!(r.auc_a, r.auc_b);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn placements_are_mann_whitney() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = b(&[0, 0, 1, 1]);
        let c = components(&s, &l);
        assert_eq!(c.auc, 0.75);
        assert_eq!(c.v10, vec![0.5, 1.0]);
        assert_eq!(c.v01, vec![1.0, 0.5]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            delong_paired(&[0.1, 0.2], &[0.1], &b(&[1, 0])),
            Err(StatsError::LengthMismatch(2, 1))
        ));
        assert!(matches!(
            delong_paired(&[0.1, 0.2], &[0.3, 0.1], &b(&[1, 1])),
            Err(StatsError::SingleClass { .. })
        ));
        // perfect vs. reversed: no variance but different AUCs
        assert!(matches!(
            delong_paired(&[0.9, 0.1], &[0.1, 0.9], &b(&[1, 0])),
            Err(StatsError::ZeroVariance)
        ));
    }
}
