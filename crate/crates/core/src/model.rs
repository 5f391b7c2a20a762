//! Shared domain vocabulary: label states, regions, reports and label sheets.

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use serde::de::{self, Deserializer, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::LabelTemplate;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("report_id must not be empty")]
    EmptyReportId,
    #[error("duplicate report_id {0:?} in corpus")]
    DuplicateReportId(String),
    #[error("sheet {report_id:?} is for region {found}, expected {expected}")]
    RegionMismatch {
        report_id: String,
        expected: Region,
        found: Region,
    },
    #[error("sheet {report_id:?} is missing label {label:?}")]
    MissingLabel { report_id: String, label: String },
    #[error("sheet {report_id:?} has label {label:?} which is not in the template")]
    ExtraLabel { report_id: String, label: String },
    #[error("sheet {report_id:?} still holds uncertain labels: {labels:?}")]
    NotTestGrade {
        report_id: String,
        labels: Vec<String>,
    },
}

/// Three-state value of one finding.
///
/// On the wire `True`/`False` are JSON booleans and `Uncertain` is the string
/// `"uncertain"`; the strings `"true"`/`"false"` are accepted on input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelState {
    True,
    False,
    Uncertain,
}

impl LabelState {
    pub const ALL: [LabelState; 3] = [LabelState::True, LabelState::False, LabelState::Uncertain];

    /// Rank used by hierarchy propagation: True(2) > Uncertain(1) > False(0).
    pub fn severity(self) -> u8 {
        match self {
            LabelState::True => 2,
            LabelState::Uncertain => 1,
            LabelState::False => 0,
        }
    }

    /// The state with the higher severity.
    pub fn max_severity(self, other: LabelState) -> LabelState {
        if other.severity() > self.severity() {
            other
        } else {
            self
        }
    }

    pub fn from_bool(value: bool) -> Self {
        if value {
            LabelState::True
        } else {
            LabelState::False
        }
    }

    /// Case-insensitive parse of `true`, `false` or `uncertain`.
    pub fn parse_str(raw: &str) -> Option<Self> {
        let s = raw.trim();
        if s.eq_ignore_ascii_case("true") {
            Some(LabelState::True)
        } else if s.eq_ignore_ascii_case("false") {
            Some(LabelState::False)
        } else if s.eq_ignore_ascii_case("uncertain") {
            Some(LabelState::Uncertain)
        } else {
            None
        }
    }

    pub fn to_json(self) -> serde_json::Value {
        match self {
            LabelState::True => serde_json::Value::Bool(true),
            LabelState::False => serde_json::Value::Bool(false),
            LabelState::Uncertain => serde_json::Value::String("uncertain".to_owned()),
        }
    }

    /// Interpret a JSON value as a state; `None` if it is not one.
    pub fn from_json(value: &serde_json::Value) -> Option<Self> {
        match value {
            serde_json::Value::Bool(b) => Some(LabelState::from_bool(*b)),
            serde_json::Value::String(s) => LabelState::parse_str(s),
            _ => None,
        }
    }
}

impl fmt::Display for LabelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelState::True => "true",
            LabelState::False => "false",
            LabelState::Uncertain => "uncertain",
        })
    }
}

impl Serialize for LabelState {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            LabelState::True => serializer.serialize_bool(true),
            LabelState::False => serializer.serialize_bool(false),
            LabelState::Uncertain => serializer.serialize_str("uncertain"),
        }
    }
}

impl<'de> Deserialize<'de> for LabelState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct StateVisitor;

        impl Visitor<'_> for StateVisitor {
            type Value = LabelState;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("true, false or \"uncertain\"")
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<LabelState, E> {
                Ok(LabelState::from_bool(v))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<LabelState, E> {
                LabelState::parse_str(v).ok_or_else(|| E::invalid_value(de::Unexpected::Str(v), &self))
            }
        }

        deserializer.deserialize_any(StateVisitor)
    }
}

/// Anatomic region name. Lower-case; keyed into a [`crate::template::TemplateRegistry`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region(String);

impl Region {
    pub fn new(name: impl AsRef<str>) -> Self {
        Region(name.as_ref().trim().to_lowercase())
    }

    pub fn clavicle() -> Self {
        Region::new("clavicle")
    }

    pub fn elbow() -> Self {
        Region::new("elbow")
    }

    pub fn thumb() -> Self {
        Region::new("thumb")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for Region {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Region::new(s))
    }
}

/// A free-text report. `metadata` is consumed by the anonymizer only and is
/// dropped from scrubbed corpora.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub report_id: String,
    pub region: Region,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl ReportDocument {
    pub fn new(report_id: impl Into<String>, region: Region, text: impl Into<String>) -> Self {
        ReportDocument {
            report_id: report_id.into(),
            region,
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Auto,
    Repaired,
    Adjudicated,
}

/// One report's assignment of every template label to a [`LabelState`].
///
/// Labels are kept in template order; the `labels` member serializes in the
/// template's own shape (`{"<label>": {"finding": <state>}}`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSheet {
    pub report_id: String,
    pub region: Region,
    pub provenance: Provenance,
    #[serde(with = "finding_map")]
    pub labels: IndexMap<String, LabelState>,
}

impl LabelSheet {
    /// A sheet with every template label set to `state`.
    pub fn filled(report_id: impl Into<String>, template: &LabelTemplate, state: LabelState) -> Self {
        LabelSheet {
            report_id: report_id.into(),
            region: template.region().clone(),
            provenance: Provenance::Auto,
            labels: template.labels().iter().map(|l| (l.clone(), state)).collect(),
        }
    }

    pub fn get(&self, label: &str) -> Option<LabelState> {
        self.labels.get(label).copied()
    }

    /// Sets an existing label; returns the previous state, `None` if unknown.
    pub fn set(&mut self, label: &str, state: LabelState) -> Option<LabelState> {
        self.labels.get_mut(label).map(|slot| std::mem::replace(slot, state))
    }

    pub fn uncertain_labels(&self) -> Vec<String> {
        self.labels
            .iter()
            .filter(|(_, s)| **s == LabelState::Uncertain)
            .map(|(l, _)| l.clone())
            .collect()
    }

    pub fn is_test_grade(&self) -> bool {
        !self.labels.values().any(|s| *s == LabelState::Uncertain)
    }

    /// Checks that the assignment domain equals the template label set.
    pub fn validate(&self, template: &LabelTemplate) -> Result<(), ModelError> {
        if self.report_id.is_empty() {
            return Err(ModelError::EmptyReportId);
        }
        if &self.region != template.region() {
            return Err(ModelError::RegionMismatch {
                report_id: self.report_id.clone(),
                expected: template.region().clone(),
                found: self.region.clone(),
            });
        }
        for label in self.labels.keys() {
            if !template.contains(label) {
                return Err(ModelError::ExtraLabel {
                    report_id: self.report_id.clone(),
                    label: label.clone(),
                });
            }
        }
        for label in template.labels() {
            if !self.labels.contains_key(label) {
                return Err(ModelError::MissingLabel {
                    report_id: self.report_id.clone(),
                    label: label.clone(),
                });
            }
        }
        Ok(())
    }

    /// The template-shaped JSON body, exactly what an extractor is asked to emit.
    pub fn to_template_json(&self) -> String {
        let body: serde_json::Map<String, serde_json::Value> = self
            .labels
            .iter()
            .map(|(l, s)| (l.clone(), serde_json::json!({ "finding": s.to_json() })))
            .collect();
        serde_json::to_string_pretty(&serde_json::Value::Object(body)).expect("map serializes")
    }

    /// Converts a test-grade sheet to binary ground truth.
    pub fn to_ground_truth(&self) -> Result<BinaryLabelSheet, ModelError> {
        let uncertain = self.uncertain_labels();
        if !uncertain.is_empty() {
            return Err(ModelError::NotTestGrade {
                report_id: self.report_id.clone(),
                labels: uncertain,
            });
        }
        Ok(BinaryLabelSheet {
            report_id: self.report_id.clone(),
            region: self.region.clone(),
            policy: BinaryPolicy::GroundTruth,
            labels: self
                .labels
                .iter()
                .map(|(l, s)| (l.clone(), *s == LabelState::True))
                .collect(),
        })
    }
}

/// How a [`BinaryLabelSheet`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryPolicy {
    Inclusive,
    Exclusive,
    GroundTruth,
}

/// A sheet with no uncertain state, ready for training or evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryLabelSheet {
    pub report_id: String,
    pub region: Region,
    pub policy: BinaryPolicy,
    #[serde(with = "binary_finding_map")]
    pub labels: IndexMap<String, bool>,
}

impl BinaryLabelSheet {
    pub fn get(&self, label: &str) -> Option<bool> {
        self.labels.get(label).copied()
    }

    pub fn positive_labels(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().filter(|(_, v)| **v).map(|(l, _)| l.as_str())
    }
}

/// Errors on a duplicate or empty id.
pub fn check_unique_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Result<(), ModelError> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(ModelError::EmptyReportId);
        }
        if !seen.insert(id) {
            return Err(ModelError::DuplicateReportId(id.to_owned()));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Finding<T> {
    finding: T,
}

mod finding_map {
    use super::*;

    pub fn serialize<S: Serializer>(map: &IndexMap<String, LabelState>, s: S) -> Result<S::Ok, S::Error> {
        let mut out = s.serialize_map(Some(map.len()))?;
        for (k, v) in map {
            out.serialize_entry(k, &Finding { finding: *v })?;
        }
        out.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<IndexMap<String, LabelState>, D::Error> {
        let raw: IndexMap<String, Finding<LabelState>> = IndexMap::deserialize(d)?;
        Ok(raw.into_iter().map(|(k, v)| (k, v.finding)).collect())
    }
}

mod binary_finding_map {
    use super::*;

    pub fn serialize<S: Serializer>(map: &IndexMap<String, bool>, s: S) -> Result<S::Ok, S::Error> {
        let mut out = s.serialize_map(Some(map.len()))?;
        for (k, v) in map {
            out.serialize_entry(k, &Finding { finding: *v })?;
        }
        out.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<IndexMap<String, bool>, D::Error> {
        let raw: IndexMap<String, Finding<bool>> = IndexMap::deserialize(d)?;
        Ok(raw.into_iter().map(|(k, v)| (k, v.finding)).collect())
    }
}
