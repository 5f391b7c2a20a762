//! End-to-end pipeline and command-line entry point.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod scoring;

pub use config::PipelineConfig;
pub use error::{CliError, Stage};
pub use manifest::Manifest;
pub use pipeline::run_pipeline;
