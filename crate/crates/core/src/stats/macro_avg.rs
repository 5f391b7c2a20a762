use serde::{Deserialize, Serialize};

use super::eval::LabelEvalRow;
use super::StatsError;

pub const DEFAULT_MIN_POSITIVES: usize = 10;

/// Unweighted mean AUC over eligible labels, with the min-max range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAuc {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub included: Vec<String>,
    pub min_positives: usize,
}

/// Whether `row` has at least `min_positives` positives in every required set and a defined AUC.
pub fn eligible(row: &LabelEvalRow, min_positives: usize) -> bool {
    row.auc.is_some() && !row.set_positives.is_empty() && row.set_positives.values().all(|&p| p >= min_positives)
}

pub fn macro_auc(rows: &[LabelEvalRow], min_positives: usize) -> Result<MacroAuc, StatsError> {
    let included: Vec<(&str, f64)> = rows
        .iter()
        .filter(|r| eligible(r, min_positives))
        .filter_map(|r| r.auc.map(|a| (r.label.as_str(), a)))
        .collect();
    if included.is_empty() {
        return Err(StatsError::NoEligibleLabels);
    }
    let aucs: Vec<f64> = included.iter().map(|(_, a)| *a).collect();
    Ok(MacroAuc {
        mean: aucs.iter().sum::<f64>() / aucs.len() as f64,
        min: aucs.iter().copied().fold(f64::INFINITY, f64::min),
        max: aucs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        included: included.iter().map(|(l, _)| l.to_string()).collect(),
        min_positives,
    })
}
