//! Binary training labels from three-state sheets, and state accounting.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BinaryLabelSheet, BinaryPolicy, LabelSheet, LabelState, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelPolicy {
    /// Uncertain becomes True.
    Inclusive,
    /// Uncertain becomes False.
    Exclusive,
}

impl RelabelPolicy {
    pub const BOTH: [RelabelPolicy; 2] = [RelabelPolicy::Inclusive, RelabelPolicy::Exclusive];

    pub fn as_str(self) -> &'static str {
        match self {
            RelabelPolicy::Inclusive => "inclusive",
            RelabelPolicy::Exclusive => "exclusive",
        }
    }

    pub fn binarize(self, state: LabelState) -> bool {
        match state {
            LabelState::True => true,
            LabelState::False => false,
            LabelState::Uncertain => self == RelabelPolicy::Inclusive,
        }
    }
}

impl std::fmt::Display for RelabelPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RelabelPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inclusive" => Ok(RelabelPolicy::Inclusive),
            "exclusive" => Ok(RelabelPolicy::Exclusive),
            other => Err(format!("unknown policy {other:?}; expected inclusive or exclusive")),
        }
    }
}

impl From<RelabelPolicy> for BinaryPolicy {
    fn from(p: RelabelPolicy) -> Self {
        match p {
            RelabelPolicy::Inclusive => BinaryPolicy::Inclusive,
            RelabelPolicy::Exclusive => BinaryPolicy::Exclusive,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RelabelError {
    #[error("corpus mixes regions {0} and {1}")]
    MixedRegions(Region, Region),
}

pub fn reassign_uncertain(sheet: &LabelSheet, policy: RelabelPolicy) -> BinaryLabelSheet {
    BinaryLabelSheet {
        report_id: sheet.report_id.clone(),
        region: sheet.region.clone(),
        policy: policy.into(),
        labels: sheet.labels.iter().map(|(l, s)| (l.clone(), policy.binarize(*s))).collect(),
    }
}

pub fn reassign_corpus(sheets: &[LabelSheet], policy: RelabelPolicy) -> Vec<BinaryLabelSheet> {
    sheets.iter().map(|s| reassign_uncertain(s, policy)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StateCensus {
    pub true_count: usize,
    pub false_count: usize,
    pub uncertain_count: usize,
}

impl StateCensus {
    pub fn total(&self) -> usize {
        self.true_count + self.false_count + self.uncertain_count
    }

    pub fn add(&mut self, state: LabelState) {
        match state {
            LabelState::True => self.true_count += 1,
            LabelState::False => self.false_count += 1,
            LabelState::Uncertain => self.uncertain_count += 1,
        }
    }

    /// Positives after reassignment under `policy`.
    pub fn positives(&self, policy: RelabelPolicy) -> usize {
        match policy {
            RelabelPolicy::Inclusive => self.true_count + self.uncertain_count,
            RelabelPolicy::Exclusive => self.true_count,
        }
    }
}

fn single_region(corpus: &[LabelSheet]) -> Result<(), RelabelError> {
    if let Some(first) = corpus.first() {
        if let Some(other) = corpus.iter().find(|s| s.region != first.region) {
            return Err(RelabelError::MixedRegions(first.region.clone(), other.region.clone()));
        }
    }
    Ok(())
}

/// Counts of each state over every cell of a single-region corpus.
pub fn census(corpus: &[LabelSheet]) -> Result<StateCensus, RelabelError> {
    single_region(corpus)?;
    let mut c = StateCensus::default();
    for state in corpus.iter().flat_map(|s| s.labels.values()) {
        c.add(*state);
    }
    Ok(c)
}

/// [`census`] broken down by label, in first-seen label order.
pub fn census_by_label(corpus: &[LabelSheet]) -> Result<IndexMap<String, StateCensus>, RelabelError> {
    single_region(corpus)?;
    let mut out: IndexMap<String, StateCensus> = IndexMap::new();
    for sheet in corpus {
        for (label, state) in &sheet.labels {
            out.entry(label.clone()).or_default().add(*state);
        }
    }
    Ok(out)
}

/// Positive count of each label in a binary corpus.
pub fn binary_positives(corpus: &[BinaryLabelSheet]) -> IndexMap<String, usize> {
    let mut out: IndexMap<String, usize> = IndexMap::new();
    for sheet in corpus {
        for (label, &v) in &sheet.labels {
            *out.entry(label.clone()).or_default() += usize::from(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::template::{LabelTemplate, TemplateRegistry};

    fn clavicle() -> LabelTemplate {
        TemplateRegistry::shipped().get(&Region::clavicle()).unwrap().clone()
    }

    #[test]
    fn policies_map_uncertain() {
        let t = clavicle();
        let mut s = LabelSheet::filled("r", &t, LabelState::False);
        s.set("Ossicles", LabelState::Uncertain);
        assert_eq!(reassign_uncertain(&s, RelabelPolicy::Inclusive).get("Ossicles"), Some(true));
        assert_eq!(reassign_uncertain(&s, RelabelPolicy::Exclusive).get("Ossicles"), Some(false));
        assert_eq!(reassign_uncertain(&s, RelabelPolicy::Exclusive).policy, BinaryPolicy::Exclusive);
    }

    #[test]
    fn definite_sheets_pass_through() {
        let t = clavicle();
        let mut s = LabelSheet::filled("r", &t, LabelState::False);
        s.set("Displacement", LabelState::True);
        let a = reassign_uncertain(&s, RelabelPolicy::Inclusive);
        let b = reassign_uncertain(&s, RelabelPolicy::Exclusive);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.labels, s.to_ground_truth().unwrap().labels);
    }

    #[test]
    fn census_examples() {
        assert_eq!(census(&[]).unwrap(), StateCensus::default());
        let t = clavicle();
        let sheets: Vec<LabelSheet> = (0..2)
            .map(|i| {
                let mut s = LabelSheet::filled(format!("r{i}"), &t, LabelState::False);
                s.set("Ossicles", LabelState::True);
                s
            })
            .collect();
        assert_eq!(
            census(&sheets).unwrap(),
            StateCensus {
                true_count: 2,
                false_count: 50,
                uncertain_count: 0
            }
        );
    }

    #[test]
    fn mixed_regions_rejected() {
        let reg = TemplateRegistry::shipped();
        let a = LabelSheet::filled("a", reg.get(&Region::clavicle()).unwrap(), LabelState::False);
        let b = LabelSheet::filled("b", reg.get(&Region::elbow()).unwrap(), LabelState::False);
        assert!(matches!(census(&[a, b]), Err(RelabelError::MixedRegions(..))));
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("Inclusive".parse::<RelabelPolicy>().unwrap(), RelabelPolicy::Inclusive);
        assert!("soft".parse::<RelabelPolicy>().is_err());
    }

    proptest! {
        #[test]
        fn positive_count_identity(cells in prop::collection::vec(prop::collection::vec(0u8..3, 26), 0..40)) {
            let t = clavicle();
            let sheets: Vec<LabelSheet> = cells
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let mut s = LabelSheet::filled(format!("r{i}"), &t, LabelState::False);
                    for (l, v) in t.labels().iter().zip(row) {
                        s.set(l, LabelState::ALL[*v as usize]);
                    }
                    s
                })
                .collect();
            let by_label = census_by_label(&sheets).unwrap();
            let inc = binary_positives(&reassign_corpus(&sheets, RelabelPolicy::Inclusive));
            let exc = binary_positives(&reassign_corpus(&sheets, RelabelPolicy::Exclusive));
            for (label, c) in &by_label {
                prop_assert_eq!(inc[label], c.true_count + c.uncertain_count);
                prop_assert_eq!(exc[label], c.true_count);
            }
            let total = census(&sheets).unwrap();
            prop_assert_eq!(total.total(), sheets.len() * 26);
            // the two binary corpora differ exactly on the Uncertain cells
            let a = reassign_corpus(&sheets, RelabelPolicy::Inclusive);
            let b = reassign_corpus(&sheets, RelabelPolicy::Exclusive);
            for ((x, y), s) in a.iter().zip(&b).zip(&sheets) {
                for (label, state) in &s.labels {
                    prop_assert_eq!(x.labels[label] != y.labels[label], *state == LabelState::Uncertain);
                }
            }
        }
    }
}
