use std::path::{Path, PathBuf};

use radlabel_core::extract::{LlmEndpointConfig, MockMode};
use radlabel_core::relabel::RelabelPolicy;
use radlabel_core::split::{SizeRounding, DEFAULT_FRACTIONS};
use radlabel_core::stats::bootstrap::BootstrapConfig;
use radlabel_core::stats::eval::{EvalConfig, DEFAULT_ALPHA};
use radlabel_core::stats::macro_avg::DEFAULT_MIN_POSITIVES;
use radlabel_core::{LabelTemplate, Region, TemplateRegistry};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmSpec {
    /// Offline deterministic model.
    Mock(MockMode),
    /// OpenAI-style chat completions endpoint, inline or from a file.
    Endpoint {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<LlmEndpointConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
    },
}

impl Default for LlmSpec {
    fn default() -> Self {
        LlmSpec::Mock(MockMode::EchoTruth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnonymizeSettings {
    /// Add exact-match rules for each report's own metadata values.
    pub metadata_rules: bool,
    /// Write redacted spans to a side-channel file outside the scrubbed corpus.
    pub retain_originals: bool,
}

impl Default for AnonymizeSettings {
    fn default() -> Self {
        AnonymizeSettings { metadata_rules: true, retain_originals: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSettings {
    pub llm: LlmSpec,
    /// Re-prompts after an unusable answer; endpoint configs carry their own value.
    pub max_retries: u32,
    pub parallelism: usize,
}

impl Default for ExtractSettings {
    fn default() -> Self {
        ExtractSettings { llm: LlmSpec::default(), max_retries: 3, parallelism: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub fractions: [f64; 3],
    pub seed: u64,
    pub rounding: SizeRounding,
    /// Binary view the stratification runs on.
    pub policy: RelabelPolicy,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings { fractions: DEFAULT_FRACTIONS, seed: 0, rounding: SizeRounding::default(), policy: RelabelPolicy::Inclusive }
    }
}

/// Classifier scores fed to the eval stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoresSource {
    /// Score matrices produced elsewhere (CSV, one column per label).
    Files { validation: PathBuf, test: PathBuf },
    /// Seeded binormal scores with mean separation `separation`; for offline runs.
    Synthetic { separation: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub min_positives: usize,
    pub replicates: usize,
    pub level: f64,
    pub alpha: f64,
    pub seed: u64,
    pub curves: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoresSource>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let b = BootstrapConfig::new(0);
        EvalSettings {
            min_positives: DEFAULT_MIN_POSITIVES,
            replicates: b.replicates,
            level: b.level,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            curves: false,
            scores: None,
        }
    }
}

impl EvalSettings {
    pub fn eval_config(&self) -> EvalConfig {
        let mut c = EvalConfig::new(self.seed);
        c.min_positives = self.min_positives;
        c.bootstrap = BootstrapConfig::new(self.seed).with_replicates(self.replicates).with_level(self.level);
        c.alpha = self.alpha;
        c.curves = self.curves;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Reject reports from any other region.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    /// Directory of report JSON files, or a `.jsonl` file.
    pub reports: PathBuf,
    /// Reference sheets for the qa stage and evaluation truth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Directory of `<region>.json` templates replacing the shipped ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub output: PathBuf,
    pub anonymize: AnonymizeSettings,
    pub extract: ExtractSettings,
    /// Stop after extraction so the sheets can be adjudicated.
    pub pause_for_review: bool,
    pub policies: Vec<RelabelPolicy>,
    pub split: SplitSettings,
    pub eval: EvalSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            region: None,
            reports: PathBuf::from("reports"),
            truth: None,
            templates: None,
            output: PathBuf::from("out"),
            anonymize: AnonymizeSettings::default(),
            extract: ExtractSettings::default(),
            pause_for_review: false,
            policies: RelabelPolicy::BOTH.to_vec(),
            split: SplitSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        // relative paths are taken from the config file's directory
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            config.rebase(base);
        }
        config.validate()?;
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.reports);
        fix(&mut self.output);
        self.truth.as_mut().map(fix);
        self.templates.as_mut().map(fix);
        if let LlmSpec::Endpoint { path: Some(p), .. } = &mut self.extract.llm {
            fix(p);
        }
        if let Some(ScoresSource::Files { validation, test }) = &mut self.eval.scores {
            fix(validation);
            fix(test);
        }
    }

    /// Overrides every named seed, including the mock model's.
    pub fn override_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.eval.seed = seed;
        if let Some(ScoresSource::Synthetic { seed: s, .. }) = &mut self.eval.scores {
            *s = seed;
        }
        if let LlmSpec::Mock(MockMode::FlipNoise { seed: s, .. } | MockMode::UncertaintyDrop { seed: s, .. }) =
            &mut self.extract.llm
        {
            *s = seed;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if let LlmSpec::Mock(mode) = &self.extract.llm {
            mode.validate().map_err(CliError::Validation)?;
        }
        if let LlmSpec::Endpoint { config: None, path: None } = &self.extract.llm {
            return bad("endpoint llm needs `config` or `path`".into());
        }
        if self.extract.parallelism == 0 {
            return bad("extract.parallelism must be at least 1".into());
        }
        if self.policies.is_empty() {
            return bad("at least one relabel policy is required".into());
        }
        if !self.policies.contains(&self.split.policy) {
            return bad(format!("split policy {} is not among the emitted policies", self.split.policy.as_str()));
        }
        let f = self.split.fractions;
        if f.iter().any(|x| !x.is_finite() || *x <= 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return bad(format!("split fractions {f:?} must be positive and sum to 1"));
        }
        if self.eval.replicates == 0 {
            return bad("eval.replicates must be positive".into());
        }
        if !(self.eval.level > 0.0 && self.eval.level < 1.0) {
            return bad(format!("eval.level {} outside (0, 1)", self.eval.level));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return bad(format!("eval.alpha {} outside (0, 1)", self.eval.alpha));
        }
        if let Some(ScoresSource::Synthetic { separation, .. }) = &self.eval.scores {
            if !separation.is_finite() {
                return bad("synthetic score separation must be finite".into());
            }
        }
        Ok(())
    }

    pub fn endpoint(&self) -> Result<Option<LlmEndpointConfig>, CliError> {
        match &self.extract.llm {
            LlmSpec::Mock(_) => Ok(None),
            LlmSpec::Endpoint { config: Some(c), .. } => Ok(Some(c.clone())),
            LlmSpec::Endpoint { path: Some(p), .. } => {
                let c: LlmEndpointConfig = radlabel_core::corpus::read_json(p)
                    .map_err(|e| CliError::Validation(format!("endpoint config: {e}")))?;
                Ok(Some(c))
            }
            LlmSpec::Endpoint { .. } => Err(CliError::Validation("endpoint llm needs `config` or `path`".into())),
        }
    }

    pub fn registry(&self) -> Result<TemplateRegistry, CliError> {
        load_registry(self.templates.as_deref())
    }
}

/// Shipped templates, with any `<region>.json` in `dir` replacing or adding a region.
pub fn load_registry(dir: Option<&Path>) -> Result<TemplateRegistry, CliError> {
    let shipped = TemplateRegistry::shipped();
    let Some(dir) = dir else { return Ok(shipped) };
    let mut custom: Vec<LabelTemplate> = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Validation(format!("templates {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        let Some(name) = p.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(region) = name.strip_suffix(".json").filter(|r| !r.ends_with(".hierarchy")) else { continue };
        let t = LabelTemplate::load(Region::new(region), &p).map_err(|e| CliError::Validation(e.to_string()))?;
        custom.push(t);
    }
    let mut reg = TemplateRegistry::new();
    for region in shipped.regions() {
        if !custom.iter().any(|t| t.region() == region) {
            reg.register(shipped.get(region).expect("listed").clone()).expect("distinct");
        }
    }
    for t in custom {
        reg.register(t).map_err(|e| CliError::Validation(e.to_string()))?;
    }
    Ok(reg)
}
