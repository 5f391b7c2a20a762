//! Score matrix CSV: `report_id,<label1>,...` then one row of decimal scores per report.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use thiserror::Error;

use crate::model::BinaryLabelSheet;
use crate::stats::eval::ScoredSet;
use crate::template::normalize_label;

#[derive(Debug, Error)]
pub enum ScoresError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("header must start with report_id, found {0:?}")]
    BadHeader(String),
    #[error("duplicate label column {0:?}")]
    DuplicateLabel(String),
    #[error("duplicate report id {0:?}")]
    DuplicateReport(String),
    #[error("empty report id on line {0}")]
    EmptyReportId(u64),
    #[error("report {report_id}: {found} scores, expected {expected}")]
    RowLength { report_id: String, expected: usize, found: usize },
    #[error("report {report_id}, label {label:?}: score {value:?} is not a number in [0, 1]")]
    BadScore { report_id: String, label: String, value: String },
    #[error("truth missing for reports {0:?}")]
    MissingTruth(Vec<String>),
    #[error("truth has reports without scores {0:?}")]
    UnscoredTruth(Vec<String>),
    #[error("report {report_id}: truth lacks label {label:?}")]
    TruthLacksLabel { report_id: String, label: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub labels: Vec<String>,
    pub rows: IndexMap<String, Vec<f64>>,
}

fn parse_score(raw: &str) -> Option<f64> {
    let v: f64 = raw.trim().parse().ok()?;
    (v.is_finite() && (0.0..=1.0).contains(&v)).then_some(v)
}

impl ScoreMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        ScoreMatrix { labels, rows: IndexMap::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Inserts a validated row.
    pub fn push(&mut self, report_id: impl Into<String>, scores: Vec<f64>) -> Result<(), ScoresError> {
        let report_id = report_id.into();
        if scores.len() != self.labels.len() {
            return Err(ScoresError::RowLength { report_id, expected: self.labels.len(), found: scores.len() });
        }
        if let Some((k, v)) = scores.iter().enumerate().find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(ScoresError::BadScore { report_id, label: self.labels[k].clone(), value: v.to_string() });
        }
        if self.rows.contains_key(&report_id) {
            return Err(ScoresError::DuplicateReport(report_id));
        }
        self.rows.insert(report_id, scores);
        Ok(())
    }

    pub fn column(&self, label: &str) -> Option<Vec<f64>> {
        let k = self.labels.iter().position(|l| l == label)?;
        Some(self.rows.values().map(|r| r[k]).collect())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, ScoresError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let first = header.get(0).unwrap_or_default().trim_start_matches('\u{feff}');
        if first != "report_id" {
            return Err(ScoresError::BadHeader(first.to_string()));
        }
        let mut labels = Vec::new();
        let mut seen = HashSet::new();
        for raw in header.iter().skip(1) {
            let l = normalize_label(raw);
            if !seen.insert(l.clone()) {
                return Err(ScoresError::DuplicateLabel(l));
            }
            labels.push(l);
        }
        let mut m = ScoreMatrix::new(labels);
        for rec in rdr.records() {
            let rec = match rec {
                Ok(r) => r,
                Err(e) => match e.kind() {
                    csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                        return Err(ScoresError::RowLength {
                            report_id: String::new(),
                            expected: *expected_len as usize - 1,
                            found: (*len as usize).saturating_sub(1),
                        })
                    }
                    _ => return Err(e.into()),
                },
            };
            let id = rec.get(0).unwrap_or_default().to_string();
            if id.is_empty() {
                return Err(ScoresError::EmptyReportId(rec.position().map_or(0, |p| p.line())));
            }
            let mut scores = Vec::with_capacity(m.labels.len());
            for (k, raw) in rec.iter().skip(1).enumerate() {
                match parse_score(raw) {
                    Some(v) => scores.push(v),
                    None => {
                        return Err(ScoresError::BadScore {
                            report_id: id,
                            label: m.labels[k].clone(),
                            value: raw.to_string(),
                        })
                    }
                }
            }
            m.push(id, scores)?;
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScoresError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<(), ScoresError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(std::iter::once("report_id").chain(self.labels.iter().map(String::as_str)))?;
        for (id, scores) in &self.rows {
            let mut rec = vec![id.clone()];
            rec.extend(scores.iter().map(|s| s.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScoresError> {
        self.to_writer(std::fs::File::create(path)?)
    }

    /// Pairs scores with truth, report order following the matrix.
    pub fn align(&self, name: impl Into<String>, truth: &[BinaryLabelSheet]) -> Result<ScoredSet, ScoresError> {
        let by_id: HashMap<&str, &BinaryLabelSheet> = truth.iter().map(|s| (s.report_id.as_str(), s)).collect();
        let missing: Vec<String> = self.rows.keys().filter(|id| !by_id.contains_key(id.as_str())).cloned().collect();
        if !missing.is_empty() {
            return Err(ScoresError::MissingTruth(missing));
        }
        let unscored: Vec<String> =
            truth.iter().filter(|s| !self.rows.contains_key(&s.report_id)).map(|s| s.report_id.clone()).collect();
        if !unscored.is_empty() {
            return Err(ScoresError::UnscoredTruth(unscored));
        }
        let n = self.rows.len();
        let mut scores = vec![Vec::with_capacity(n); self.labels.len()];
        let mut labels = vec![Vec::with_capacity(n); self.labels.len()];
        for (id, row) in &self.rows {
            let sheet = by_id[id.as_str()];
            for (k, label) in self.labels.iter().enumerate() {
                let Some(t) = sheet.get(label) else {
                    return Err(ScoresError::TruthLacksLabel { report_id: id.clone(), label: label.clone() });
                };
                scores[k].push(row[k]);
                labels[k].push(t);
            }
        }
        Ok(ScoredSet {
            name: name.into(),
            labels: self.labels.clone(),
            report_ids: self.rows.keys().cloned().collect(),
            scores,
            truth: labels,
        })
    }
}
