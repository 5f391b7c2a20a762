//! Extraction quality against adjudicated truth.

use std::collections::{BTreeSet, HashMap};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LabelSheet, LabelState};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum QualityError {
    #[error("report ids differ: missing from extraction {missing:?}, not in truth {extra:?}")]
    IdMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("report {report_id}: regions differ ({extracted} vs {truth})")]
    RegionMismatch { report_id: String, extracted: String, truth: String },
    #[error("report {report_id}: label {label:?} missing from one side")]
    LabelMismatch { report_id: String, label: String },
    #[error("truth sheet {0} contains Uncertain; use three-state mode")]
    TruthNotTestGrade(String),
}

/// How truth is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMode {
    /// Truth is binary; any extracted Uncertain is an error.
    #[default]
    TestGrade,
    /// Truth may contain Uncertain, matched only by an extracted Uncertain.
    ThreeState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionQuality {
    pub labels_total: usize,
    pub labels_correct: usize,
    pub reports_total: usize,
    pub reports_all_correct: usize,
    pub uncertainty_present_reports: usize,
    pub uncertainty_detected_reports: usize,
    pub uncertainty_overlap_reports: usize,
    pub label_accuracy: f64,
    pub report_accuracy: f64,
    /// Wrong cells per label, in template order.
    pub errors_by_label: IndexMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UncertaintyDetection {
    pub present: usize,
    pub detected: usize,
    pub overlap: usize,
}

fn pair_up<'a>(
    extracted: &'a [LabelSheet],
    truth: &'a [LabelSheet],
) -> Result<Vec<(&'a LabelSheet, &'a LabelSheet)>, QualityError> {
    let by_id: HashMap<&str, &LabelSheet> = truth.iter().map(|s| (s.report_id.as_str(), s)).collect();
    let ext_ids: BTreeSet<&str> = extracted.iter().map(|s| s.report_id.as_str()).collect();
    let truth_ids: BTreeSet<&str> = by_id.keys().copied().collect();
    if ext_ids != truth_ids || ext_ids.len() != extracted.len() || truth_ids.len() != truth.len() {
        return Err(QualityError::IdMismatch {
            missing: truth_ids.difference(&ext_ids).map(|s| s.to_string()).collect(),
            extra: ext_ids.difference(&truth_ids).map(|s| s.to_string()).collect(),
        });
    }
    extracted
        .iter()
        .map(|e| {
            let t = by_id[e.report_id.as_str()];
            if e.region != t.region {
                return Err(QualityError::RegionMismatch {
                    report_id: e.report_id.clone(),
                    extracted: e.region.to_string(),
                    truth: t.region.to_string(),
                });
            }
            if e.labels.len() != t.labels.len() {
                let label = e
                    .labels
                    .keys()
                    .chain(t.labels.keys())
                    .find(|l| !(e.labels.contains_key(*l) && t.labels.contains_key(*l)))
                    .cloned()
                    .unwrap_or_default();
                return Err(QualityError::LabelMismatch { report_id: e.report_id.clone(), label });
            }
            Ok((e, t))
        })
        .collect()
}

fn has_uncertain(s: &LabelSheet) -> bool {
    s.labels.values().any(|v| *v == LabelState::Uncertain)
}

/// Counts label- and report-level agreement plus uncertainty detection.
pub fn assess(extracted: &[LabelSheet], truth: &[LabelSheet], mode: TruthMode) -> Result<ExtractionQuality, QualityError> {
    let pairs = pair_up(extracted, truth)?;
    let mut q = ExtractionQuality::default();
    for (e, t) in pairs {
        if mode == TruthMode::TestGrade && has_uncertain(t) {
            return Err(QualityError::TruthNotTestGrade(t.report_id.clone()));
        }
        let mut wrong = 0;
        for (label, truth_state) in &t.labels {
            let Some(got) = e.labels.get(label) else {
                return Err(QualityError::LabelMismatch { report_id: e.report_id.clone(), label: label.clone() });
            };
            let errors = q.errors_by_label.entry(label.clone()).or_default();
            if got != truth_state {
                wrong += 1;
                *errors += 1;
            }
        }
        q.labels_total += t.labels.len();
        q.labels_correct += t.labels.len() - wrong;
        q.reports_total += 1;
        q.reports_all_correct += usize::from(wrong == 0);
        let present = has_uncertain(t);
        let detected = has_uncertain(e);
        q.uncertainty_present_reports += usize::from(present);
        q.uncertainty_detected_reports += usize::from(detected);
        q.uncertainty_overlap_reports += usize::from(present && detected);
    }
    q.label_accuracy = ratio(q.labels_correct, q.labels_total);
    q.report_accuracy = ratio(q.reports_all_correct, q.reports_total);
    Ok(q)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn label_accuracy(extracted: &[LabelSheet], truth: &[LabelSheet], mode: TruthMode) -> Result<f64, QualityError> {
    Ok(assess(extracted, truth, mode)?.label_accuracy)
}

pub fn report_accuracy(extracted: &[LabelSheet], truth: &[LabelSheet], mode: TruthMode) -> Result<f64, QualityError> {
    Ok(assess(extracted, truth, mode)?.report_accuracy)
}

/// Report-level uncertainty counts against pre-adjudication three-state truth.
pub fn uncertainty_detection(extracted: &[LabelSheet], truth: &[LabelSheet]) -> Result<UncertaintyDetection, QualityError> {
    let q = assess(extracted, truth, TruthMode::ThreeState)?;
    Ok(UncertaintyDetection {
        present: q.uncertainty_present_reports,
        detected: q.uncertainty_detected_reports,
        overlap: q.uncertainty_overlap_reports,
    })
}
