//! ROC analysis, thresholds, DeLong tests, bootstrap intervals and FDR control.
//!
//! Binary classification everywhere uses the rule `score >= threshold` => positive.

pub mod bootstrap;
pub mod delong;
pub mod eval;
pub mod fdr;
pub mod macro_avg;
pub mod roc;
pub mod threshold;

use thiserror::Error;

pub use bootstrap::{bootstrap_ci, bootstrap_ci_with, BootstrapConfig, ConfidenceInterval, Metric};
pub use delong::{delong_paired, delong_unpaired, DelongMode, DelongResult};
pub use fdr::benjamini_hochberg;
pub use macro_avg::{macro_auc, MacroAuc};
pub use roc::{auc, pr_curve, roc_curve, PrCurve, RocCurve};
pub use threshold::{confusion_metrics, youden_threshold, Confusion, YoudenPoint};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    Empty,
    #[error("only one class present ({positives} positives, {negatives} negatives)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("no positive cases")]
    NoPositives,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("standard error of the AUC difference is zero while the AUCs differ")]
    ZeroVariance,
    #[error("replicate {replicate} kept collapsing to one class after {redraws} redraws")]
    DegenerateData { replicate: usize, redraws: usize },
    #[error("no label meets the minimum-positives filter")]
    NoEligibleLabels,
    #[error("confidence level {0} outside (0, 1)")]
    BadLevel(f64),
    #[error("{0}")]
    Invalid(String),
}

pub(crate) fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), StatsError> {
    if scores.len() != labels.len() {
        return Err(StatsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(StatsError::Empty);
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(StatsError::NonFinite(*s));
    }
    let positives = labels.iter().filter(|l| **l).count();
    Ok((positives, labels.len() - positives))
}

pub(crate) fn check_both_classes(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), StatsError> {
    let (p, n) = check_inputs(scores, labels)?;
    if p == 0 || n == 0 {
        return Err(StatsError::SingleClass { positives: p, negatives: n });
    }
    Ok((p, n))
}

/// 1-based midranks of `values` (ties share the mean of their ranks).
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided normal p-value; exactly 1 at z = 0.
pub fn two_sided_p(z: f64) -> f64 {
    if z == 0.0 {
        return 1.0;
    }
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}


/// Serde for thresholds that may be infinite: stored as `"Infinity"` / `"-Infinity"`.
pub mod inf_f64 {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v == f64::INFINITY {
            Repr::Text("Infinity".into())
        } else if v == f64::NEG_INFINITY {
            Repr::Text("-Infinity".into())
        } else {
            Repr::Num(v)
        }
    }

    fn from_repr<E: de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "Infinity" | "inf" => Ok(f64::INFINITY),
                "-Infinity" | "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("bad threshold {other:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|x| to_repr(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.map(to_repr).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(from_repr).transpose()
        }
    }
}
