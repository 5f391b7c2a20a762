//! Stage functions and the end-to-end run.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use radlabel_core::anonymize::{self, RedactionLog, RetainedOriginal};
use radlabel_core::corpus::{self, CorpusItem};
use radlabel_core::extract::{extract_corpus, ExtractionResult, FailureRecord, HttpChatClient, MockLlm, MockMode};
use radlabel_core::quality::{assess, ExtractionQuality, TruthMode};
use radlabel_core::relabel::{census, census_by_label, reassign_corpus, RelabelPolicy, StateCensus};
use radlabel_core::scores::ScoreMatrix;
use radlabel_core::split::{stratification_deviation, stratified_split_with, SplitAssignment, Subset};
use radlabel_core::stats::eval::{evaluate, EvalConfig, EvalReport, ScoredSet};
use radlabel_core::{BinaryLabelSheet, LabelSheet, LabelState, Region, ReportDocument, TemplateRegistry};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{AnonymizeSettings, LlmSpec, PipelineConfig, ScoresSource, SplitSettings};
use crate::error::{validation, CliError, Stage};
use crate::manifest::{Failure, Manifest, RunStatus, StageOutcome};
use crate::scoring::synthetic_scores;

/// Labels with at least this many positives are checked for stratification.
pub const STRATIFICATION_MIN_POSITIVES: usize = 5;

/// Reads a directory of `<id>.json` items or a `.jsonl` file.
pub fn read_items<T: CorpusItem + DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let items: Vec<T> = if path.is_dir() {
        corpus::read_dir(path).map_err(validation)?
    } else if path.extension().is_some_and(|x| x == "jsonl") {
        corpus::read_jsonl(path).map_err(validation)?
    } else {
        return Err(CliError::Validation(format!("{} is neither a directory nor a .jsonl file", path.display())));
    };
    radlabel_core::model::check_unique_ids(items.iter().map(|i| i.id())).map_err(validation)?;
    Ok(items)
}

pub fn read_reports(path: &Path) -> Result<Vec<ReportDocument>, CliError> {
    read_items(path)
}

pub fn read_sheets(path: &Path, registry: &TemplateRegistry) -> Result<Vec<LabelSheet>, CliError> {
    let sheets: Vec<LabelSheet> = read_items(path)?;
    for s in &sheets {
        let t = registry.get(&s.region).map_err(validation)?;
        s.validate(t).map_err(|e| CliError::Validation(format!("sheet {}: {e}", s.report_id)))?;
    }
    Ok(sheets)
}

#[derive(Debug, Clone, Default)]
pub struct Anonymized {
    pub reports: Vec<ReportDocument>,
    pub logs: Vec<RedactionLog>,
    pub retained: Vec<RetainedOriginal>,
}

pub fn anonymize_reports(reports: &[ReportDocument], settings: &AnonymizeSettings) -> Result<Anonymized, CliError> {
    let rules = anonymize::shipped_rules();
    let mut out = Anonymized::default();
    for r in reports {
        let (scrubbed, log) = if settings.metadata_rules {
            anonymize::scrub_with_metadata(r, &rules)
        } else {
            anonymize::scrub(r, &rules)
        }
        .map_err(|e| CliError::stage(Stage::Anonymize, format!("{}: {e}", r.report_id)))?;
        if settings.retain_originals {
            out.retained.push(log.retain(&r.text));
        }
        out.reports.push(scrubbed);
        out.logs.push(log);
    }
    Ok(out)
}

/// A completion source shared by every region.
pub enum Backend {
    Mock(MockMode),
    Http(HttpChatClient),
}

impl Backend {
    pub fn from_config(config: &PipelineConfig) -> Result<Self, CliError> {
        match &config.extract.llm {
            LlmSpec::Mock(mode) => Ok(Backend::Mock(*mode)),
            LlmSpec::Endpoint { .. } => {
                let c = config.endpoint()?.expect("endpoint spec");
                HttpChatClient::new(c).map(Backend::Http).map_err(validation)
            }
        }
    }
}

/// Extracts every report with its region's template; results keep input order.
pub async fn extract_reports(
    reports: &[ReportDocument],
    registry: &TemplateRegistry,
    backend: &Backend,
    max_retries: u32,
    parallelism: usize,
) -> Result<Vec<ExtractionResult>, CliError> {
    let mut by_region: IndexMap<Region, Vec<usize>> = IndexMap::new();
    for (i, r) in reports.iter().enumerate() {
        by_region.entry(r.region.clone()).or_default().push(i);
    }
    let mut slots: Vec<Option<ExtractionResult>> = vec![None; reports.len()];
    for (region, idx) in by_region {
        let t = registry.get(&region).map_err(validation)?;
        let group: Vec<ReportDocument> = idx.iter().map(|&i| reports[i].clone()).collect();
        let results = match backend {
            Backend::Mock(mode) => {
                let m = MockLlm::new(t.clone(), *mode);
                extract_corpus(&group, t, &m, max_retries, parallelism).await
            }
            Backend::Http(c) => extract_corpus(&group, t, c, c.config().max_retries, c.config().parallelism).await,
        };
        for (i, r) in idx.into_iter().zip(results) {
            slots[i] = Some(r);
        }
    }
    Ok(slots.into_iter().map(|r| r.expect("every report extracted")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub reports: usize,
    pub extracted: usize,
    pub failed: usize,
    pub attempts: u64,
    /// Sheets changed by hierarchy repair.
    pub repaired: usize,
}

pub fn extract_summary(results: &[ExtractionResult]) -> ExtractSummary {
    let sheets: Vec<&LabelSheet> = results.iter().filter_map(|r| r.sheet()).collect();
    ExtractSummary {
        reports: results.len(),
        extracted: sheets.len(),
        failed: results.len() - sheets.len(),
        attempts: results.iter().map(|r| u64::from(r.attempts)).sum(),
        repaired: sheets.iter().filter(|s| s.provenance == radlabel_core::Provenance::Repaired).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCensus {
    #[serde(flatten)]
    pub states: StateCensus,
    pub inclusive_positives: usize,
    pub exclusive_positives: usize,
}

impl From<StateCensus> for LabelCensus {
    fn from(states: StateCensus) -> Self {
        LabelCensus {
            states,
            inclusive_positives: states.positives(RelabelPolicy::Inclusive),
            exclusive_positives: states.positives(RelabelPolicy::Exclusive),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCensus {
    pub reports: usize,
    pub overall: LabelCensus,
    pub by_label: IndexMap<String, LabelCensus>,
}

/// State counts and policy positives per region, regions in first-seen order.
pub fn census_report(sheets: &[LabelSheet]) -> IndexMap<String, RegionCensus> {
    group_by_region(sheets)
        .into_iter()
        .map(|(region, group)| {
            let overall = census(&group).expect("single region");
            let by_label = census_by_label(&group).expect("single region");
            (
                region.to_string(),
                RegionCensus {
                    reports: group.len(),
                    overall: overall.into(),
                    by_label: by_label.into_iter().map(|(l, c)| (l, c.into())).collect(),
                },
            )
        })
        .collect()
}

pub fn group_by_region<T: Clone + HasRegion>(items: &[T]) -> IndexMap<Region, Vec<T>> {
    let mut out: IndexMap<Region, Vec<T>> = IndexMap::new();
    for i in items {
        out.entry(i.region().clone()).or_default().push(i.clone());
    }
    out
}

pub trait HasRegion {
    fn region(&self) -> &Region;
}

impl HasRegion for LabelSheet {
    fn region(&self) -> &Region {
        &self.region
    }
}

impl HasRegion for BinaryLabelSheet {
    fn region(&self) -> &Region {
        &self.region
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub sizes: [usize; 3],
    /// Largest `|observed - expected|` positives per checked label.
    pub max_deviation: IndexMap<String, f64>,
}

pub type RegionSplits = (IndexMap<String, SplitAssignment>, IndexMap<String, SplitSummary>);

/// Stratified split of each region separately.
pub fn split_by_region(
    binary: &[BinaryLabelSheet],
    settings: &SplitSettings,
) -> Result<RegionSplits, CliError> {
    let mut splits = IndexMap::new();
    let mut summary = IndexMap::new();
    for (region, group) in group_by_region(binary) {
        let s = stratified_split_with(&group, settings.fractions, settings.seed, settings.rounding)
            .map_err(|e| CliError::stage(Stage::Split, format!("{region}: {e}")))?;
        let dev = stratification_deviation(&group, &s, STRATIFICATION_MIN_POSITIVES);
        summary.insert(region.to_string(), SplitSummary { sizes: s.sizes(), max_deviation: dev });
        splits.insert(region.to_string(), s);
    }
    Ok((splits, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub mode: TruthMode,
    pub compared_reports: usize,
    /// Truth sheets whose extraction failed; left out of the comparison.
    pub missing_extractions: Vec<String>,
    pub quality: ExtractionQuality,
}

/// Compares successful extractions against truth; truth with Uncertain cells is read three-state.
pub fn quality_check(extracted: &[LabelSheet], truth: &[LabelSheet]) -> Result<QaReport, CliError> {
    let have: HashSet<&str> = extracted.iter().map(|s| s.report_id.as_str()).collect();
    let (kept, missing): (Vec<&LabelSheet>, Vec<&LabelSheet>) =
        truth.iter().partition(|s| have.contains(s.report_id.as_str()));
    let kept: Vec<LabelSheet> = kept.into_iter().cloned().collect();
    let mode = if kept.iter().any(|s| s.labels.values().any(|v| *v == LabelState::Uncertain)) {
        TruthMode::ThreeState
    } else {
        TruthMode::TestGrade
    };
    let quality = assess(extracted, &kept, mode).map_err(validation)?;
    Ok(QaReport {
        mode,
        compared_reports: kept.len(),
        missing_extractions: missing.into_iter().map(|s| s.report_id.clone()).collect(),
        quality,
    })
}

/// Truth for `ids`, in that order.
fn select<'a>(sheets: &'a [BinaryLabelSheet], ids: &[&str]) -> Result<Vec<BinaryLabelSheet>, CliError> {
    let by_id: IndexMap<&str, &'a BinaryLabelSheet> = sheets.iter().map(|s| (s.report_id.as_str(), s)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id)
                .map(|s| (*s).clone())
                .ok_or_else(|| CliError::Validation(format!("no truth sheet for report {id}")))
        })
        .collect()
}

/// Keeps the truth rows the matrix scores, then aligns.
pub fn align_scores(name: &str, matrix: &ScoreMatrix, truth: &[BinaryLabelSheet]) -> Result<ScoredSet, CliError> {
    let ids: Vec<&str> = matrix.rows.keys().map(String::as_str).collect();
    let picked = select(truth, &ids)?;
    matrix.align(name, &picked).map_err(validation)
}

pub fn evaluate_matrices(
    validation_scores: &ScoreMatrix,
    test_scores: &ScoreMatrix,
    truth: &[BinaryLabelSheet],
    config: &EvalConfig,
) -> Result<EvalReport, CliError> {
    let val = align_scores("validation", validation_scores, truth)?;
    let test = align_scores("test", test_scores, truth)?;
    evaluate(&[test], &val, config).map_err(|e| CliError::stage(Stage::Eval, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T, stage: Stage) -> Result<(), CliError> {
    corpus::write_json(path, value).map_err(|e| CliError::stage(stage, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T], stage: Stage) -> Result<(), CliError> {
    corpus::write_jsonl(path, items).map_err(|e| CliError::stage(stage, e))
}

fn write_dir<T: CorpusItem>(path: &Path, items: &[T], stage: Stage) -> Result<(), CliError> {
    corpus::write_dir(path, items).map_err(|e| CliError::stage(stage, e))
}

/// Output subdirectories owned by the pipeline, cleared before each run.
pub const OUTPUT_DIRS: [&str; 8] = ["corpus", "anonymize", "private", "extract", "relabel", "split", "qa", "eval"];

struct Run<'a> {
    config: &'a PipelineConfig,
    root: PathBuf,
    manifest: Manifest,
    stage: Stage,
    code: Option<String>,
}

impl Run<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn ok(&mut self, note: impl Into<Option<String>>) {
        self.manifest.record(self.stage, StageOutcome::Ok, note.into());
    }

    fn skip(&mut self, stage: Stage, why: &str) {
        self.manifest.record(stage, StageOutcome::Skipped, Some(why.to_string()));
    }

    async fn execute(&mut self) -> Result<RunStatus, CliError> {
        let config = self.config;
        let registry = config.registry()?;

        self.stage = Stage::Anonymize;
        let raw = read_reports(&config.reports)?;
        if raw.is_empty() {
            return Err(CliError::Validation(format!("no reports in {}", config.reports.display())));
        }
        if let Some(region) = &config.region {
            if let Some(r) = raw.iter().find(|r| &r.region != region) {
                return Err(CliError::Validation(format!("report {} is {} not {region}", r.report_id, r.region)));
            }
        }
        let anon = anonymize_reports(&raw, &config.anonymize)?;
        write_dir(&self.path("corpus/reports"), &anon.reports, Stage::Anonymize)?;
        write_jsonl(&self.path("anonymize/redactions.jsonl"), &anon.logs, Stage::Anonymize)?;
        if config.anonymize.retain_originals {
            write_jsonl(&self.path("private/retained.jsonl"), &anon.retained, Stage::Anonymize)?;
        }
        let redactions: usize = anon.logs.iter().map(|l| l.entries.len()).sum();
        self.ok(format!("{} reports, {redactions} redactions", anon.reports.len()));

        self.stage = Stage::Extract;
        let backend = Backend::from_config(config)?;
        let results =
            extract_reports(&anon.reports, &registry, &backend, config.extract.max_retries, config.extract.parallelism)
                .await?;
        let failures: Vec<FailureRecord> = results.iter().filter_map(FailureRecord::from_result).collect();
        let sheets: Vec<LabelSheet> = results.iter().filter_map(|r| r.sheet().cloned()).collect();
        let summary = extract_summary(&results);
        write_dir(&self.path("corpus/sheets"), &sheets, Stage::Extract)?;
        write_jsonl(&self.path("extract/failures.jsonl"), &failures, Stage::Extract)?;
        write_json(&self.path("extract/summary.json"), &summary, Stage::Extract)?;
        if sheets.is_empty() {
            let first = &failures[0];
            self.code = serde_json::to_value(&first.error).ok().and_then(|v| v["code"].as_str().map(str::to_string));
            return Err(CliError::stage(
                Stage::Extract,
                format!("no report could be extracted ({} failures; first: {})", failures.len(), first.error),
            ));
        }
        self.ok(format!("{} of {} reports extracted", summary.extracted, summary.reports));
        if config.pause_for_review {
            for s in [Stage::Relabel, Stage::Split, Stage::Qa, Stage::Eval] {
                self.skip(s, "paused for review");
            }
            return Ok(RunStatus::Paused);
        }

        self.stage = Stage::Relabel;
        let mut binary: IndexMap<RelabelPolicy, Vec<BinaryLabelSheet>> = IndexMap::new();
        for &p in &config.policies {
            let b = reassign_corpus(&sheets, p);
            write_dir(&self.path(&format!("relabel/{}", p.as_str())), &b, Stage::Relabel)?;
            binary.insert(p, b);
        }
        write_json(&self.path("relabel/census.json"), &census_report(&sheets), Stage::Relabel)?;
        self.ok(None);

        self.stage = Stage::Split;
        let (splits, split_summary) = split_by_region(&binary[&config.split.policy], &config.split)?;
        write_json(&self.path("split/split.json"), &splits, Stage::Split)?;
        write_json(&self.path("split/summary.json"), &split_summary, Stage::Split)?;
        self.ok(None);

        let truth = match &config.truth {
            Some(p) => Some(read_sheets(p, &registry)?),
            None => None,
        };
        self.stage = Stage::Qa;
        match &truth {
            Some(t) => {
                let qa = quality_check(&sheets, t)?;
                write_json(&self.path("qa/quality.json"), &qa, Stage::Qa)?;
                let note = format!("label accuracy {:.4}, report accuracy {:.4}", qa.quality.label_accuracy, qa.quality.report_accuracy);
                self.ok(note);
            }
            None => self.skip(Stage::Qa, "no truth sheets configured"),
        }

        self.stage = Stage::Eval;
        let Some(source) = &config.eval.scores else {
            self.skip(Stage::Eval, "no classifier scores configured");
            return Ok(RunStatus::Completed);
        };
        let eval_truth: &[LabelSheet] = truth.as_deref().unwrap_or(&sheets);
        let eval_config = config.eval.eval_config();
        let groups = group_by_region(eval_truth);
        match source {
            ScoresSource::Files { validation, test } => {
                if groups.len() != 1 {
                    return Err(CliError::Validation("score files need a single-region corpus".into()));
                }
                let val = ScoreMatrix::load(validation).map_err(validation_err(validation))?;
                let tst = ScoreMatrix::load(test).map_err(validation_err(test))?;
                let region = groups.keys().next().expect("one region").clone();
                for &p in &config.policies {
                    let b = reassign_corpus(&groups[&region], p);
                    let report = evaluate_matrices(&val, &tst, &b, &eval_config)?;
                    write_json(&self.path(&format!("eval/{region}/{}.json", p.as_str())), &report, Stage::Eval)?;
                }
            }
            ScoresSource::Synthetic { separation, seed } => {
                for (region, group) in &groups {
                    let split = &splits[region.as_str()];
                    let labels = registry.get(region).map_err(validation)?.labels().to_vec();
                    let base = reassign_corpus(group, config.split.policy);
                    let val_truth = select(&base, &split.members(Subset::Validation))?;
                    let test_truth = select(&base, &split.members(Subset::Test))?;
                    let val = synthetic_scores(&val_truth, &labels, *separation, *seed, 1);
                    let tst = synthetic_scores(&test_truth, &labels, *separation, *seed, 2);
                    let dir = self.path(&format!("eval/scores/{region}"));
                    std::fs::create_dir_all(&dir).map_err(|e| CliError::stage(Stage::Eval, e))?;
                    val.save(dir.join("validation.csv")).map_err(|e| CliError::stage(Stage::Eval, e))?;
                    tst.save(dir.join("test.csv")).map_err(|e| CliError::stage(Stage::Eval, e))?;
                    for &p in &config.policies {
                        let b = reassign_corpus(group, p);
                        let report = evaluate_matrices(&val, &tst, &b, &eval_config)?;
                        write_json(&self.path(&format!("eval/{region}/{}.json", p.as_str())), &report, Stage::Eval)?;
                    }
                }
            }
        }
        self.ok(None);
        Ok(RunStatus::Completed)
    }
}

fn validation_err(path: &Path) -> impl Fn(radlabel_core::scores::ScoresError) -> CliError + '_ {
    move |e| CliError::Validation(format!("{}: {e}", path.display()))
}

fn clear_outputs(root: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(root).map_err(|e| CliError::Validation(format!("output {}: {e}", root.display())))?;
    for d in OUTPUT_DIRS {
        let p = root.join(d);
        if p.exists() {
            std::fs::remove_dir_all(&p).map_err(|e| CliError::Validation(format!("clearing {}: {e}", p.display())))?;
        }
    }
    let m = root.join(crate::manifest::MANIFEST_FILE);
    if m.exists() {
        std::fs::remove_file(&m).map_err(|e| CliError::Validation(format!("clearing {}: {e}", m.display())))?;
    }
    Ok(())
}

/// anonymize, extract, (pause), relabel, split, qa, eval; then writes `manifest.json`.
///
/// On failure the manifest is still written, naming the failed stage.
pub async fn run_pipeline(config: &PipelineConfig) -> Result<Manifest, CliError> {
    config.validate()?;
    clear_outputs(&config.output)?;
    let mut run = Run { config, root: config.output.clone(), manifest: Manifest::new(), stage: Stage::Anonymize, code: None };
    let outcome = run.execute().await;
    let mut manifest = std::mem::take(&mut run.manifest);
    match outcome {
        Ok(status) => {
            manifest.status = status;
            manifest.finish(&run.root)?;
            Ok(manifest)
        }
        Err(e) => {
            let stage = match &e {
                CliError::Stage { stage, .. } => *stage,
                CliError::Validation(_) => run.stage,
            };
            let code = run.code.take().unwrap_or_else(|| match &e {
                CliError::Validation(_) => "invalid_input".to_string(),
                CliError::Stage { .. } => "stage_failed".to_string(),
            });
            manifest.record(stage, StageOutcome::Failed, Some(e.to_string()));
            manifest.status = RunStatus::Failed;
            manifest.failure = Some(Failure { stage, code, message: e.to_string() });
            if let Err(write) = manifest.finish(&run.root) {
                tracing::error!(error = %write, "could not write manifest after failure");
            }
            Err(e)
        }
    }
}
