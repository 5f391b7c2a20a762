//! Per-label evaluation of score matrices against binary truth.
//!
//! Thresholds come from the validation set only and are then frozen for every
//! test set. Classification uses `score >= threshold`.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bootstrap::{bootstrap_ci, BootstrapConfig, ConfidenceInterval, Metric};
use super::delong::{delong_paired, delong_unpaired, DelongMode, DelongResult};
use super::fdr::benjamini_hochberg;
use super::macro_avg::{eligible, macro_auc, MacroAuc, DEFAULT_MIN_POSITIVES};
use super::roc::{auc, pr_curve, roc_curve, PrCurve, RocCurve};
use super::threshold::{youden_threshold, Confusion, YoudenPoint};
use super::StatsError;

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("set {set:?} has labels {found:?}, expected {expected:?}")]
    LabelMismatch { set: String, expected: Vec<String>, found: Vec<String> },
    #[error("sets {a:?} and {b:?} do not cover the same reports in the same order")]
    CaseMismatch { a: String, b: String },
    #[error("set {set:?}: {detail}")]
    Malformed { set: String, detail: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Scores and binary truth for one set, stored column-wise per label.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub name: String,
    pub labels: Vec<String>,
    pub report_ids: Vec<String>,
    /// `scores[k][i]`: score of label `k` on report `i`.
    pub scores: Vec<Vec<f64>>,
    pub truth: Vec<Vec<bool>>,
}

impl ScoredSet {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |detail: String| EvalError::Malformed { set: self.name.clone(), detail };
        if self.scores.len() != self.labels.len() || self.truth.len() != self.labels.len() {
            return Err(bad("column count differs from label count".into()));
        }
        let n = self.report_ids.len();
        for (k, label) in self.labels.iter().enumerate() {
            if self.scores[k].len() != n || self.truth[k].len() != n {
                return Err(bad(format!("column {label:?} has the wrong length")));
            }
        }
        Ok(())
    }

    pub fn column(&self, label: &str) -> Option<(&[f64], &[bool])> {
        let k = self.labels.iter().position(|l| l == label)?;
        Some((&self.scores[k], &self.truth[k]))
    }

    pub fn positives(&self, k: usize) -> usize {
        self.truth[k].iter().filter(|t| **t).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub min_positives: usize,
    pub bootstrap: BootstrapConfig,
    pub alpha: f64,
    /// Include full ROC/PR curves in each row.
    pub curves: bool,
}

impl EvalConfig {
    pub fn new(seed: u64) -> Self {
        EvalConfig {
            min_positives: DEFAULT_MIN_POSITIVES,
            bootstrap: BootstrapConfig::new(seed),
            alpha: DEFAULT_ALPHA,
            curves: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEvalRow {
    pub label: String,
    pub n_positive: usize,
    pub n_negative: usize,
    /// Positives per required test set, used by the macro filter.
    pub set_positives: IndexMap<String, usize>,
    pub auc: Option<f64>,
    pub auc_ci: Option<ConfidenceInterval>,
    pub average_precision: Option<f64>,
    /// Youden operating point found on the validation set.
    pub validation_point: Option<YoudenPoint>,
    #[serde(with = "super::inf_f64::option")]
    pub threshold: Option<f64>,
    pub accuracy: Option<f64>,
    pub accuracy_ci: Option<ConfidenceInterval>,
    pub sensitivity: Option<f64>,
    pub sensitivity_ci: Option<ConfidenceInterval>,
    pub specificity: Option<f64>,
    pub specificity_ci: Option<ConfidenceInterval>,
    pub included_in_macro: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub roc: Option<RocCurve>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pr: Option<PrCurve>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl LabelEvalRow {
    pub fn empty(label: impl Into<String>) -> Self {
        LabelEvalRow {
            label: label.into(),
            n_positive: 0,
            n_negative: 0,
            set_positives: IndexMap::new(),
            auc: None,
            auc_ci: None,
            average_precision: None,
            validation_point: None,
            threshold: None,
            accuracy: None,
            accuracy_ci: None,
            sensitivity: None,
            sensitivity_ci: None,
            specificity: None,
            specificity_ci: None,
            included_in_macro: false,
            roc: None,
            pr: None,
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub name: String,
    pub n_reports: usize,
    pub rows: Vec<LabelEvalRow>,
    pub macro_auc: Option<MacroAuc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub result: Option<DelongResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonBlock {
    pub name: String,
    pub mode: DelongMode,
    pub set_a: String,
    pub set_b: String,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueEntry {
    pub comparison: String,
    pub label: String,
    pub raw: f64,
    pub adjusted: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub validation_set: String,
    pub sets: Vec<SetReport>,
    pub comparisons: Vec<ComparisonBlock>,
    pub p_values: Vec<PValueEntry>,
}

impl EvalReport {
    pub fn set(&self, name: &str) -> Option<&SetReport> {
        self.sets.iter().find(|s| s.name == name)
    }

    /// Appends comparison blocks and recomputes the BH-adjusted p-value table over all of them.
    pub fn add_comparisons(&mut self, blocks: impl IntoIterator<Item = ComparisonBlock>) -> Result<(), EvalError> {
        self.comparisons.extend(blocks);
        self.p_values = p_value_table(&self.comparisons, self.config.alpha)?;
        Ok(())
    }
}

/// Raw and BH-adjusted p-values for every defined comparison row.
pub fn p_value_table(blocks: &[ComparisonBlock], alpha: f64) -> Result<Vec<PValueEntry>, EvalError> {
    let mut entries: Vec<PValueEntry> = blocks
        .iter()
        .flat_map(|b| {
            b.rows.iter().filter_map(move |r| {
                r.result.map(|res| PValueEntry {
                    comparison: b.name.clone(),
                    label: r.label.clone(),
                    raw: res.p_two_sided,
                    adjusted: f64::NAN,
                    significant: false,
                })
            })
        })
        .collect();
    let raw: Vec<f64> = entries.iter().map(|e| e.raw).collect();
    for (e, q) in entries.iter_mut().zip(benjamini_hochberg(&raw)?) {
        e.adjusted = q;
        e.significant = q < alpha;
    }
    Ok(entries)
}

fn check_labels(reference: &ScoredSet, other: &ScoredSet) -> Result<(), EvalError> {
    if reference.labels != other.labels {
        return Err(EvalError::LabelMismatch {
            set: other.name.clone(),
            expected: reference.labels.clone(),
            found: other.labels.clone(),
        });
    }
    Ok(())
}

/// CI or a note explaining why it is absent.
fn ci_or_note(
    metric: Metric,
    scores: &[f64],
    labels: &[bool],
    config: &BootstrapConfig,
    what: &str,
    notes: &mut Vec<String>,
) -> Result<Option<ConfidenceInterval>, EvalError> {
    match bootstrap_ci(metric, scores, labels, config) {
        Ok(ci) => Ok(Some(ci)),
        Err(StatsError::DegenerateData { replicate, redraws }) => {
            notes.push(format!("{what} CI undefined: replicate {replicate} degenerate after {redraws} redraws"));
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn evaluate_label(
    set: &ScoredSet,
    k: usize,
    point: Option<YoudenPoint>,
    set_positives: IndexMap<String, usize>,
    config: &EvalConfig,
) -> Result<LabelEvalRow, EvalError> {
    let scores = &set.scores[k];
    let truth = &set.truth[k];
    let mut row = LabelEvalRow::empty(&set.labels[k]);
    row.n_positive = set.positives(k);
    row.n_negative = truth.len() - row.n_positive;
    row.set_positives = set_positives;
    row.validation_point = point;
    row.threshold = point.map(|p| p.threshold);
    let boot = &config.bootstrap;

    if row.n_positive > 0 && row.n_negative > 0 {
        row.auc = Some(auc(scores, truth)?);
        row.auc_ci = ci_or_note(Metric::Auc, scores, truth, boot, "AUC", &mut row.notes)?;
        if config.curves {
            row.roc = Some(roc_curve(scores, truth)?);
        }
    } else {
        row.notes.push(format!(
            "AUC undefined: {} positives, {} negatives",
            row.n_positive, row.n_negative
        ));
    }
    if row.n_positive > 0 {
        let pr = pr_curve(scores, truth)?;
        row.average_precision = Some(pr.average_precision);
        if config.curves {
            row.pr = Some(pr);
        }
    }

    match row.threshold {
        Some(t) => {
            let c = Confusion::new(scores, truth, t)?;
            row.accuracy = Some(c.accuracy());
            row.accuracy_ci = ci_or_note(Metric::Accuracy { threshold: t }, scores, truth, boot, "accuracy", &mut row.notes)?;
            if let Ok(sens) = c.sensitivity() {
                row.sensitivity = Some(sens);
                row.sensitivity_ci =
                    ci_or_note(Metric::Sensitivity { threshold: t }, scores, truth, boot, "sensitivity", &mut row.notes)?;
            }
            if let Ok(spec) = c.specificity() {
                row.specificity = Some(spec);
                row.specificity_ci =
                    ci_or_note(Metric::Specificity { threshold: t }, scores, truth, boot, "specificity", &mut row.notes)?;
            }
        }
        None => row.notes.push("no threshold: validation set lacks one class".into()),
    }
    row.included_in_macro = eligible(&row, config.min_positives);
    Ok(row)
}

/// Evaluates every test set with thresholds chosen on `validation`.
///
/// The macro filter requires `min_positives` in every test set passed here.
pub fn evaluate(test_sets: &[ScoredSet], validation: &ScoredSet, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    validation.validate()?;
    if test_sets.is_empty() {
        return Err(EvalError::Stats(StatsError::Empty));
    }
    for s in test_sets {
        s.validate()?;
        check_labels(validation, s)?;
    }

    let points: Vec<Option<YoudenPoint>> = (0..validation.labels.len())
        .into_par_iter()
        .map(|k| match youden_threshold(&validation.scores[k], &validation.truth[k]) {
            Ok(p) => Ok(Some(p)),
            Err(StatsError::SingleClass { .. }) => Ok(None),
            Err(e) => Err(EvalError::from(e)),
        })
        .collect::<Result<_, _>>()?;

    let sets = test_sets
        .iter()
        .map(|set| {
            let rows: Vec<LabelEvalRow> = (0..set.labels.len())
                .into_par_iter()
                .map(|k| {
                    let counts: IndexMap<String, usize> =
                        test_sets.iter().map(|s| (s.name.clone(), s.positives(k))).collect();
                    evaluate_label(set, k, points[k], counts, config)
                })
                .collect::<Result<_, _>>()?;
            let macro_auc = match macro_auc(&rows, config.min_positives) {
                Ok(m) => Some(m),
                Err(StatsError::NoEligibleLabels) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(SetReport { name: set.name.clone(), n_reports: set.report_ids.len(), rows, macro_auc })
        })
        .collect::<Result<_, EvalError>>()?;

    Ok(EvalReport {
        config: *config,
        validation_set: validation.name.clone(),
        sets,
        comparisons: Vec::new(),
        p_values: Vec::new(),
    })
}

fn comparison_row(label: &str, r: Result<DelongResult, StatsError>) -> Result<ComparisonRow, EvalError> {
    match r {
        Ok(res) => Ok(ComparisonRow { label: label.into(), result: Some(res), note: None }),
        Err(e @ (StatsError::SingleClass { .. } | StatsError::ZeroVariance)) => Ok(ComparisonRow {
            label: label.into(),
            result: None,
            note: Some(e.to_string()),
        }),
        Err(e) => Err(e.into()),
    }
}

/// Paired DeLong per label: two models scored on the same cases with the same truth.
pub fn compare_paired(name: impl Into<String>, a: &ScoredSet, b: &ScoredSet) -> Result<ComparisonBlock, EvalError> {
    a.validate()?;
    b.validate()?;
    check_labels(a, b)?;
    if a.report_ids != b.report_ids || a.truth != b.truth {
        return Err(EvalError::CaseMismatch { a: a.name.clone(), b: b.name.clone() });
    }
    let rows = (0..a.labels.len())
        .map(|k| comparison_row(&a.labels[k], delong_paired(&a.scores[k], &b.scores[k], &a.truth[k])))
        .collect::<Result<_, _>>()?;
    Ok(ComparisonBlock {
        name: name.into(),
        mode: DelongMode::Paired,
        set_a: a.name.clone(),
        set_b: b.name.clone(),
        rows,
    })
}

/// Unpaired DeLong per label: one model on two independent sets.
pub fn compare_unpaired(name: impl Into<String>, a: &ScoredSet, b: &ScoredSet) -> Result<ComparisonBlock, EvalError> {
    a.validate()?;
    b.validate()?;
    check_labels(a, b)?;
    let rows = (0..a.labels.len())
        .map(|k| {
            comparison_row(
                &a.labels[k],
                delong_unpaired(&a.scores[k], &a.truth[k], &b.scores[k], &b.truth[k]),
            )
        })
        .collect::<Result<_, _>>()?;
    Ok(ComparisonBlock {
        name: name.into(),
        mode: DelongMode::Unpaired,
        set_a: a.name.clone(),
        set_b: b.name.clone(),
        rows,
    })
}
