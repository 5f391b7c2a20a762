use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use radlabel_core::corpus;
use radlabel_core::extract::{FailureRecord, LlmEndpointConfig, MockMode};
use radlabel_core::relabel::{reassign_corpus, RelabelPolicy};
use radlabel_core::scores::ScoreMatrix;
use radlabel_core::split::SizeRounding;
use radlabel_core::stats::eval::{compare_paired, compare_unpaired, evaluate, p_value_table, EvalReport};
use radlabel_core::synth::{clavicle_development_counts, generate_corpus, CorpusSpec, HierarchyMode, PrevalenceProfile};
use radlabel_core::{BinaryLabelSheet, Region};
use radlabel_review::{ReviewConfig, ReviewStore, TokenTable};
use serde::Serialize;

use crate::config::{load_registry, LlmSpec, PipelineConfig, SplitSettings};
use crate::error::{validation, CliError, Stage};
use crate::pipeline::{self, Backend};

#[derive(Debug, Parser)]
#[command(name = "radlabel", version, about = "Three-state label extraction and evaluation pipeline for radiology reports")]
pub struct Cli {
    /// Pipeline configuration (JSON); supplies defaults for every subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every named seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// -v info, -vv debug.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scrub identifying information from reports.
    Anonymize(AnonymizeArgs),
    /// Fill the label template for each report with an LLM.
    Extract(ExtractArgs),
    /// Convert three-state sheets to binary labels.
    Relabel(RelabelArgs),
    /// Stratified train/validation/test split.
    Split(SplitArgs),
    /// Extraction accuracy against reference sheets.
    Qa(QaArgs),
    /// Evaluate classifier score matrices.
    Eval(EvalArgs),
    /// DeLong comparison of two score matrices.
    Compare(CompareArgs),
    /// Run the adjudication service.
    Serve(ServeArgs),
    /// Write a synthetic report corpus with truth sheets.
    GenCorpus(GenCorpusArgs),
    /// Run the whole pipeline from the configuration.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct AnonymizeArgs {
    /// Report directory or .jsonl file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip exact-match rules built from report metadata.
    #[arg(long)]
    pub no_metadata_rules: bool,
    /// Side-channel file for the redacted spans.
    #[arg(long)]
    pub retain: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Mock model: a mode name (`echo_truth`, `always_malformed`) or a JSON object.
    #[arg(long, conflicts_with = "endpoint")]
    pub mock: Option<String>,
    /// Endpoint configuration file (JSON).
    #[arg(long)]
    pub endpoint: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Inclusive,
    Exclusive,
    Both,
}

impl PolicyArg {
    fn policies(self) -> Vec<RelabelPolicy> {
        match self {
            PolicyArg::Inclusive => vec![RelabelPolicy::Inclusive],
            PolicyArg::Exclusive => vec![RelabelPolicy::Exclusive],
            PolicyArg::Both => RelabelPolicy::BOTH.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct RelabelArgs {
    /// Three-state sheet directory or .jsonl file.
    #[arg(long)]
    pub sheets: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub policy: PolicyArg,
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoundingArg {
    CeilExceptLast,
    LargestRemainder,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Binary sheet directory or .jsonl file.
    #[arg(long)]
    pub sheets: PathBuf,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub rounding: Option<RoundingArg>,
}

#[derive(Debug, Args)]
pub struct QaArgs {
    #[arg(long)]
    pub extracted: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalParams {
    #[arg(long)]
    pub min_positives: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Include ROC and PR curves in the report.
    #[arg(long)]
    pub curves: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Binary truth sheets (directory or .jsonl).
    #[arg(long)]
    pub truth: PathBuf,
    /// Validation score matrix; thresholds come only from here.
    #[arg(long)]
    pub validation: PathBuf,
    /// Test score matrix as `[name=]path`; repeatable.
    #[arg(long, required = true)]
    pub test: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub params: EvalParams,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Paired,
    Unpaired,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Binary truth for `--a` (and for `--b` when paired).
    #[arg(long)]
    pub truth: PathBuf,
    /// Truth for `--b` in unpaired mode; defaults to `--truth`.
    #[arg(long)]
    pub truth_b: Option<PathBuf>,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, value_enum, default_value = "paired")]
    pub mode: ModeArg,
    #[arg(long, default_value = "a_vs_b")]
    pub name: String,
    /// Existing eval report to append to; its p-value table is recomputed.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory with `reports/` and `sheets/`.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub audit: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Bearer token file; without one every request acts as admin `local`.
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    /// Export root; defaults to `<corpus>/export`.
    #[arg(long)]
    pub export: Option<PathBuf>,
    /// Static review UI assets.
    #[arg(long)]
    pub ui: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub snapshot_every: u64,
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub region: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Uniform per-label positive rate.
    #[arg(long, default_value_t = 0.1, conflicts_with_all = ["profile", "clavicle_dev_counts"])]
    pub prevalence: f64,
    /// Prevalence profile JSON (`{"rates": {...}}` or `{"counts": {...}}`).
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Exact clavicle development-pool state counts (n must be 937).
    #[arg(long)]
    pub clavicle_dev_counts: bool,
    #[arg(long, default_value_t = 0.0)]
    pub uncertainty_rate: f64,
    /// Draw labels independently of the hierarchy.
    #[arg(long)]
    pub independent: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(value).map_err(validation)?;
    println!("{s}");
    Ok(())
}

fn write_or_print<T: Serialize>(out: Option<&Path>, value: &T, stage: Stage) -> Result<(), CliError> {
    match out {
        Some(p) => corpus::write_json(p, value).map_err(|e| CliError::stage(stage, e)),
        None => print_json(value),
    }
}

fn load_scores(path: &Path) -> Result<ScoreMatrix, CliError> {
    ScoreMatrix::load(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn parse_mock(raw: &str) -> Result<MockMode, CliError> {
    let value: serde_json::Value = if raw.trim_start().starts_with('{') {
        serde_json::from_str(raw).map_err(|e| CliError::Validation(format!("--mock: {e}")))?
    } else {
        serde_json::json!({ "mode": raw.trim() })
    };
    let mode: MockMode = serde_json::from_value(value).map_err(|e| CliError::Validation(format!("--mock: {e}")))?;
    mode.validate().map_err(CliError::Validation)?;
    Ok(mode)
}

impl Cli {
    fn base_config(&self) -> Result<PipelineConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            c.override_seed(s);
        }
        Ok(c)
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| CliError::Validation(e.to_string()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.base_config()?;
    match cli.command {
        Command::Anonymize(a) => {
            let reports = pipeline::read_reports(&a.input)?;
            let mut settings = config.anonymize.clone();
            settings.metadata_rules = !a.no_metadata_rules;
            settings.retain_originals = a.retain.is_some();
            let anon = pipeline::anonymize_reports(&reports, &settings)?;
            corpus::write_dir(a.out.join("reports"), &anon.reports).map_err(|e| CliError::stage(Stage::Anonymize, e))?;
            corpus::write_jsonl(a.out.join("redactions.jsonl"), &anon.logs).map_err(|e| CliError::stage(Stage::Anonymize, e))?;
            if let Some(p) = &a.retain {
                corpus::write_jsonl(p, &anon.retained).map_err(|e| CliError::stage(Stage::Anonymize, e))?;
            }
            let n: usize = anon.logs.iter().map(|l| l.entries.len()).sum();
            println!("anonymized {} reports ({n} redactions)", anon.reports.len());
            Ok(())
        }
        Command::Extract(a) => {
            let mut config = config;
            if let Some(m) = &a.mock {
                config.extract.llm = LlmSpec::Mock(parse_mock(m)?);
            }
            if let Some(p) = &a.endpoint {
                let c: LlmEndpointConfig = corpus::read_json(p).map_err(validation)?;
                config.extract.llm = LlmSpec::Endpoint { config: Some(c), path: None };
            }
            if let Some(r) = a.max_retries {
                config.extract.max_retries = r;
            }
            if let Some(p) = a.parallelism {
                config.extract.parallelism = p;
            }
            if a.templates.is_some() {
                config.templates = a.templates.clone();
            }
            config.validate()?;
            let registry = config.registry()?;
            let reports = pipeline::read_reports(&a.input)?;
            let backend = Backend::from_config(&config)?;
            let results = runtime()?.block_on(pipeline::extract_reports(
                &reports,
                &registry,
                &backend,
                config.extract.max_retries,
                config.extract.parallelism,
            ))?;
            let sheets: Vec<_> = results.iter().filter_map(|r| r.sheet().cloned()).collect();
            let failures: Vec<FailureRecord> = results.iter().filter_map(FailureRecord::from_result).collect();
            let err = |e| CliError::stage(Stage::Extract, e);
            corpus::write_dir(a.out.join("sheets"), &sheets).map_err(err)?;
            corpus::write_jsonl(a.out.join("failures.jsonl"), &failures).map_err(err)?;
            let summary = pipeline::extract_summary(&results);
            corpus::write_json(a.out.join("summary.json"), &summary).map_err(err)?;
            println!("extracted {} of {} reports ({} failed)", summary.extracted, summary.reports, summary.failed);
            if sheets.is_empty() && !results.is_empty() {
                return Err(CliError::stage(Stage::Extract, format!("no report could be extracted: {}", failures[0].error)));
            }
            Ok(())
        }
        Command::Relabel(a) => {
            let registry = load_registry(a.templates.as_deref().or(config.templates.as_deref()))?;
            let sheets = pipeline::read_sheets(&a.sheets, &registry)?;
            for p in a.policy.policies() {
                let b = reassign_corpus(&sheets, p);
                corpus::write_dir(a.out.join(p.as_str()), &b).map_err(|e| CliError::stage(Stage::Relabel, e))?;
            }
            let census = pipeline::census_report(&sheets);
            corpus::write_json(a.out.join("census.json"), &census).map_err(|e| CliError::stage(Stage::Relabel, e))?;
            for (region, c) in &census {
                println!(
                    "{region}: {} reports, inclusive positives {}, exclusive positives {}",
                    c.reports, c.overall.inclusive_positives, c.overall.exclusive_positives
                );
            }
            Ok(())
        }
        Command::Split(a) => {
            let sheets: Vec<BinaryLabelSheet> = pipeline::read_items(&a.sheets)?;
            let mut settings: SplitSettings = config.split.clone();
            if let Some(f) = &a.fractions {
                settings.fractions = [f[0], f[1], f[2]];
            }
            if let Some(r) = a.rounding {
                settings.rounding = match r {
                    RoundingArg::CeilExceptLast => SizeRounding::CeilExceptLast,
                    RoundingArg::LargestRemainder => SizeRounding::LargestRemainder,
                };
            }
            let (splits, summary) = pipeline::split_by_region(&sheets, &settings)?;
            corpus::write_json(&a.out, &splits).map_err(|e| CliError::stage(Stage::Split, e))?;
            for (region, s) in &summary {
                let worst = s.max_deviation.values().copied().fold(0.0, f64::max);
                println!("{region}: sizes {:?}, largest stratification deviation {worst:.3}", s.sizes);
            }
            Ok(())
        }
        Command::Qa(a) => {
            let registry = load_registry(a.templates.as_deref().or(config.templates.as_deref()))?;
            let extracted = pipeline::read_sheets(&a.extracted, &registry)?;
            let truth = pipeline::read_sheets(&a.truth, &registry)?;
            let qa = pipeline::quality_check(&extracted, &truth)?;
            write_or_print(a.out.as_deref(), &qa, Stage::Qa)?;
            if a.out.is_some() {
                println!(
                    "label accuracy {:.4}, report accuracy {:.4} over {} reports",
                    qa.quality.label_accuracy, qa.quality.report_accuracy, qa.compared_reports
                );
            }
            Ok(())
        }
        Command::Eval(a) => {
            let mut settings = config.eval.clone();
            apply_params(&mut settings, &a.params);
            let truth: Vec<BinaryLabelSheet> = pipeline::read_items(&a.truth)?;
            let val = pipeline::align_scores("validation", &load_scores(&a.validation)?, &truth)?;
            let mut tests = Vec::new();
            for (i, spec) in a.test.iter().enumerate() {
                let (name, path) = match spec.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None if a.test.len() == 1 => ("test".to_string(), PathBuf::from(spec)),
                    None => (format!("test{}", i + 1), PathBuf::from(spec)),
                };
                tests.push(pipeline::align_scores(&name, &load_scores(&path)?, &truth)?);
            }
            let report = evaluate(&tests, &val, &settings.eval_config()).map_err(|e| CliError::stage(Stage::Eval, e))?;
            write_or_print(a.out.as_deref(), &report, Stage::Eval)?;
            if a.out.is_some() {
                for s in &report.sets {
                    match &s.macro_auc {
                        Some(m) => println!("{}: macro AUC {:.4} over {} labels", s.name, m.mean, m.included.len()),
                        None => println!("{}: no label meets the positives filter", s.name),
                    }
                }
            }
            Ok(())
        }
        Command::Compare(a) => {
            let truth_a: Vec<BinaryLabelSheet> = pipeline::read_items(&a.truth)?;
            let sa = pipeline::align_scores("a", &load_scores(&a.a)?, &truth_a)?;
            let block = match a.mode {
                ModeArg::Paired => {
                    let sb = pipeline::align_scores("b", &load_scores(&a.b)?, &truth_a)?;
                    compare_paired(&a.name, &sa, &sb)
                }
                ModeArg::Unpaired => {
                    let truth_b: Vec<BinaryLabelSheet> = match &a.truth_b {
                        Some(p) => pipeline::read_items(p)?,
                        None => truth_a.clone(),
                    };
                    let sb = pipeline::align_scores("b", &load_scores(&a.b)?, &truth_b)?;
                    compare_unpaired(&a.name, &sa, &sb)
                }
            }
            .map_err(validation)?;
            let alpha = a.alpha.unwrap_or(config.eval.alpha);
            match &a.report {
                Some(path) => {
                    let mut report: EvalReport = corpus::read_json(path).map_err(validation)?;
                    report.config.alpha = alpha;
                    report.add_comparisons([block]).map_err(|e| CliError::stage(Stage::Compare, e))?;
                    let out = a.out.as_deref().unwrap_or(path);
                    corpus::write_json(out, &report).map_err(|e| CliError::stage(Stage::Compare, e))?;
                    println!("{} comparisons, {} p-values", report.comparisons.len(), report.p_values.len());
                }
                None => {
                    #[derive(Serialize)]
                    struct Standalone {
                        comparisons: Vec<radlabel_core::stats::eval::ComparisonBlock>,
                        p_values: Vec<radlabel_core::stats::eval::PValueEntry>,
                    }
                    let blocks = vec![block];
                    let p_values = p_value_table(&blocks, alpha).map_err(|e| CliError::stage(Stage::Compare, e))?;
                    write_or_print(a.out.as_deref(), &Standalone { comparisons: blocks, p_values }, Stage::Compare)?;
                }
            }
            Ok(())
        }
        Command::Serve(a) => {
            let registry = load_registry(a.templates.as_deref().or(config.templates.as_deref()))?;
            let mut rc = ReviewConfig::new(&a.audit, a.export.clone().unwrap_or_else(|| a.corpus.join("export")));
            rc.snapshot_every = a.snapshot_every;
            rc.tokens = match &a.tokens {
                Some(p) => Some(TokenTable::load(p).map_err(validation)?),
                None => {
                    tracing::warn!("no token file; every request is treated as admin reviewer `local`");
                    None
                }
            };
            let store = ReviewStore::open_dir(&a.corpus, registry, rc).map_err(validation)?;
            let addr = SocketAddr::new(a.host, a.port);
            runtime()?
                .block_on(radlabel_review::api::serve(Arc::new(store), addr, a.ui.clone()))
                .map_err(|e| CliError::stage(Stage::Serve, e))
        }
        Command::GenCorpus(a) => {
            let registry = load_registry(config.templates.as_deref())?;
            let region = Region::new(&a.region);
            let template = registry.get(&region).map_err(validation)?;
            let profile = if a.clavicle_dev_counts {
                PrevalenceProfile::Counts(clavicle_development_counts())
            } else if let Some(p) = &a.profile {
                corpus::read_json(p).map_err(validation)?
            } else {
                PrevalenceProfile::Uniform(a.prevalence)
            };
            let spec = CorpusSpec {
                region,
                n: a.n,
                profile,
                uncertainty_rate: a.uncertainty_rate,
                seed: cli.seed.unwrap_or(0),
                hierarchy: if a.independent { HierarchyMode::Independent } else { HierarchyMode::Consistent },
            };
            let corpus_out = generate_corpus(&spec, template).map_err(validation)?;
            let err = |e| CliError::stage(Stage::GenCorpus, e);
            corpus::write_dir(a.out.join("reports"), &corpus_out.reports).map_err(err)?;
            corpus::write_dir(a.out.join("truth"), &corpus_out.truth).map_err(err)?;
            println!("wrote {} reports and truth sheets to {}", corpus_out.reports.len(), a.out.display());
            Ok(())
        }
        Command::Run(a) => {
            let mut config = config;
            if let Some(o) = a.out {
                config.output = o;
            }
            let manifest = runtime()?.block_on(pipeline::run_pipeline(&config))?;
            for s in &manifest.stages {
                let note = s.note.as_deref().map(|n| format!(": {n}")).unwrap_or_default();
                println!("{:<10} {:?}{note}", s.stage.as_str(), s.outcome);
            }
            println!("{} files listed in {}", manifest.files.len(), config.output.join(crate::manifest::MANIFEST_FILE).display());
            Ok(())
        }
    }
}

fn apply_params(settings: &mut crate::config::EvalSettings, p: &EvalParams) {
    if let Some(m) = p.min_positives {
        settings.min_positives = m;
    }
    if let Some(r) = p.replicates {
        settings.replicates = r;
    }
    if let Some(a) = p.alpha {
        settings.alpha = a;
    }
    settings.curves |= p.curves;
}
