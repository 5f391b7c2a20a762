use std::process::ExitCode;

use thiserror::Error;

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Anonymize,
    Extract,
    Relabel,
    Split,
    Qa,
    Eval,
    Compare,
    Serve,
    GenCorpus,
    Manifest,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Anonymize => "anonymize",
            Stage::Extract => "extract",
            Stage::Relabel => "relabel",
            Stage::Split => "split",
            Stage::Qa => "qa",
            Stage::Eval => "eval",
            Stage::Compare => "compare",
            Stage::Serve => "serve",
            Stage::GenCorpus => "gen-corpus",
            Stage::Manifest => "manifest",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or input data. Exit code 2.
    #[error("{0}")]
    Validation(String),
    /// A stage could not finish. Exit code 3.
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl CliError {
    pub fn stage(stage: Stage, e: impl std::fmt::Display) -> Self {
        CliError::Stage { stage, message: e.to_string() }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(2),
            CliError::Stage { .. } => ExitCode::from(3),
        }
    }
}

pub fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}
