#![allow(dead_code)]

use radlabel_core::synth::{generate_corpus, CorpusSpec, HierarchyMode, PrevalenceProfile};
use radlabel_core::{LabelSheet, LabelState, Provenance, Region, ReportDocument, TemplateRegistry};
use radlabel_review::model::{RecordInput, SubmitRequest};
use radlabel_review::{ReviewConfig, ReviewStore};
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
    pub reports: Vec<ReportDocument>,
    pub sheets: Vec<LabelSheet>,
}

impl Fixture {
    pub fn new(region: Region, n: usize, uncertainty_rate: f64, seed: u64) -> Self {
        let reg = TemplateRegistry::shipped();
        let t = reg.get(&region).unwrap();
        let spec = CorpusSpec {
            region,
            n,
            profile: PrevalenceProfile::Uniform(0.15),
            uncertainty_rate,
            seed,
            hierarchy: HierarchyMode::Consistent,
        };
        let corpus = generate_corpus(&spec, t).unwrap();
        let sheets = corpus
            .truth
            .into_iter()
            .map(|mut s| {
                s.provenance = Provenance::Auto;
                s
            })
            .collect();
        Fixture { dir: tempfile::tempdir().unwrap(), reports: corpus.reports, sheets }
    }

    pub fn config(&self) -> ReviewConfig {
        ReviewConfig::new(self.dir.path().join("audit.jsonl"), self.dir.path().join("export"))
    }

    pub fn open(&self) -> ReviewStore {
        self.open_with(self.config())
    }

    pub fn open_with(&self, config: ReviewConfig) -> ReviewStore {
        ReviewStore::open(self.reports.clone(), self.sheets.clone(), TemplateRegistry::shipped(), config).unwrap()
    }
}

pub fn record(label: &str, previous: LabelState, corrected: LabelState) -> RecordInput {
    RecordInput { label: label.into(), previous, corrected, note: None }
}

pub fn submit(version: u64, records: Vec<RecordInput>, complete: bool) -> SubmitRequest {
    SubmitRequest { expected_version: version, records, complete }
}

/// Resolves every Uncertain cell to True; parents never end up below their children.
pub fn resolve_all(sheet: &LabelSheet) -> Vec<RecordInput> {
    sheet
        .uncertain_labels()
        .into_iter()
        .map(|l| record(&l, LabelState::Uncertain, LabelState::True))
        .collect()
}
