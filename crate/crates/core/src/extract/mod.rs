//! Prompting a chat model with a label template and validating its answers.

pub mod client;
pub mod hierarchy;
pub mod mock;
pub mod parse;
pub mod prompt;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LabelSheet, ReportDocument};
use crate::template::LabelTemplate;

pub use client::{ChatBackend, HttpChatClient, LlmEndpointConfig, TransportError};
pub use hierarchy::{check_hierarchy, repair_hierarchy, Violation};
pub use mock::{MockLlm, MockMode, ScriptedBackend};
pub use parse::{parse_llm_response, strip_fences, ParseError};
pub use prompt::{build_prompt, Decoding, PromptPayload};

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum ExtractError {
    #[error("endpoint unreachable: {message}")]
    EndpointUnreachable { message: String },
    #[error("authentication failed: {message}")]
    AuthFailure { message: String },
    #[error("endpoint rejected the request: {message}")]
    Rejected { message: String },
    #[error("endpoint returned an unusable response: {message}")]
    BadResponse { message: String },
    #[error("no valid answer after {attempts} attempts: {last_error}")]
    RetriesExhausted { attempts: u32, last_error: String },
    #[error("report region {found} does not match template region {expected}")]
    RegionMismatch { expected: String, found: String },
}

impl From<TransportError> for ExtractError {
    fn from(e: TransportError) -> Self {
        let message = e.to_string();
        match e {
            TransportError::Unreachable(_) => ExtractError::EndpointUnreachable { message },
            TransportError::Auth(_) => ExtractError::AuthFailure { message },
            TransportError::Rejected { .. } | TransportError::Config(_) => ExtractError::Rejected { message },
            TransportError::BadResponse(_) => ExtractError::BadResponse { message },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionOutcome {
    Sheet(LabelSheet),
    Failure(ExtractError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub report_id: String,
    pub outcome: ExtractionOutcome,
    /// Completions requested from the model.
    pub attempts: u32,
    pub raw_responses: Vec<String>,
}

impl ExtractionResult {
    pub fn sheet(&self) -> Option<&LabelSheet> {
        match &self.outcome {
            ExtractionOutcome::Sheet(s) => Some(s),
            ExtractionOutcome::Failure(_) => None,
        }
    }

    pub fn error(&self) -> Option<&ExtractError> {
        match &self.outcome {
            ExtractionOutcome::Sheet(_) => None,
            ExtractionOutcome::Failure(e) => Some(e),
        }
    }
}

/// One line of `failures.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub report_id: String,
    pub attempts: u32,
    pub error: ExtractError,
}

impl FailureRecord {
    pub fn from_result(r: &ExtractionResult) -> Option<Self> {
        r.error().map(|e| FailureRecord {
            report_id: r.report_id.clone(),
            attempts: r.attempts,
            error: e.clone(),
        })
    }
}

/// Prompt, call, parse and repair one report.
///
/// A rejected answer is re-requested up to `max_retries` times with the
/// parse error appended to the prompt. Transport failures end the attempt.
pub async fn extract_labels(
    report: &ReportDocument,
    template: &LabelTemplate,
    backend: &dyn ChatBackend,
    max_retries: u32,
) -> ExtractionResult {
    let mut result = ExtractionResult {
        report_id: report.report_id.clone(),
        outcome: ExtractionOutcome::Failure(ExtractError::RetriesExhausted {
            attempts: 0,
            last_error: String::new(),
        }),
        attempts: 0,
        raw_responses: Vec::new(),
    };
    if &report.region != template.region() {
        result.outcome = ExtractionOutcome::Failure(ExtractError::RegionMismatch {
            expected: template.region().to_string(),
            found: report.region.to_string(),
        });
        return result;
    }

    let base = build_prompt(template, &report.text);
    let mut payload = base.clone();
    loop {
        result.attempts += 1;
        let raw = match backend.complete(&payload).await {
            Ok(raw) => raw,
            Err(e) => {
                result.outcome = ExtractionOutcome::Failure(e.into());
                return result;
            }
        };
        let parsed = parse_llm_response(&raw, template, &report.report_id);
        result.raw_responses.push(raw);
        match parsed {
            Ok(sheet) => {
                result.outcome = ExtractionOutcome::Sheet(repair_hierarchy(&sheet, template));
                return result;
            }
            Err(e) => {
                tracing::debug!(report = %report.report_id, attempt = result.attempts, error = %e, "answer rejected");
                if result.attempts > max_retries {
                    result.outcome = ExtractionOutcome::Failure(ExtractError::RetriesExhausted {
                        attempts: result.attempts,
                        last_error: e.to_string(),
                    });
                    return result;
                }
                payload = base.with_feedback(&e.to_string());
            }
        }
    }
}

/// Extracts a corpus with up to `parallelism` reports in flight; results keep corpus order.
pub async fn extract_corpus(
    reports: &[ReportDocument],
    template: &LabelTemplate,
    backend: &dyn ChatBackend,
    max_retries: u32,
    parallelism: usize,
) -> Vec<ExtractionResult> {
    stream::iter(reports)
        .map(|r| extract_labels(r, template, backend, max_retries))
        .buffered(parallelism.max(1))
        .collect()
        .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LabelState, Provenance, Region};
    use crate::template::TemplateRegistry;

    fn setup() -> (LabelTemplate, ReportDocument, String) {
        let t = TemplateRegistry::shipped().get(&Region::clavicle()).unwrap().clone();
        let r = ReportDocument::new("r1", Region::clavicle(), "Befund: Lateral Third Fracture.");
        let mut s = LabelSheet::filled("r1", &t, LabelState::False);
        s.set("Lateral Third Fracture", LabelState::True);
        s.set("Fracture (All Locations)", LabelState::True);
        (t, r, s.to_template_json())
    }

    fn block<F: std::future::Future>(f: F) -> F::Output {
        tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap().block_on(f)
    }

    #[test]
    fn happy_path_single_attempt() {
        let (t, r, valid) = setup();
        let backend = ScriptedBackend::new([Ok(valid)]);
        let res = block(extract_labels(&r, &t, &backend, 3));
        assert_eq!(res.attempts, 1);
        let sheet = res.sheet().unwrap();
        assert_eq!(sheet.provenance, Provenance::Auto);
        assert_eq!(sheet.get("Lateral Third Fracture"), Some(LabelState::True));
    }

    #[test]
    fn two_malformed_then_valid() {
        let (t, r, valid) = setup();
        let backend = ScriptedBackend::new([Ok("{oops".into()), Ok("not json".into()), Ok(valid)]);
        let res = block(extract_labels(&r, &t, &backend, 3));
        assert_eq!(res.attempts, 3);
        assert!(res.sheet().is_some());
        assert_eq!(res.raw_responses.len(), 3);
        let prompts = backend.prompts();
        assert!(!prompts[0].user_text.contains("rejected"));
        assert!(prompts[1].user_text.contains("malformed JSON"));
    }

    #[test]
    fn retries_exhausted() {
        let (t, r, _) = setup();
        let backend = MockLlm::new(t.clone(), MockMode::AlwaysMalformed);
        let res = block(extract_labels(&r, &t, &backend, 2));
        assert_eq!(res.attempts, 3);
        assert!(matches!(res.error(), Some(ExtractError::RetriesExhausted { attempts: 3, .. })));
    }

    #[test]
    fn repair_is_applied() {
        let (t, r, _) = setup();
        let mut s = LabelSheet::filled("r1", &t, LabelState::False);
        s.set("Lateral Third Fracture", LabelState::True);
        let backend = ScriptedBackend::new([Ok(s.to_template_json())]);
        let res = block(extract_labels(&r, &t, &backend, 0));
        let sheet = res.sheet().unwrap();
        assert_eq!(sheet.provenance, Provenance::Repaired);
        assert_eq!(sheet.get("Fracture (All Locations)"), Some(LabelState::True));
    }

    #[test]
    fn transport_errors_are_not_reprompted() {
        let (t, r, valid) = setup();
        let backend = ScriptedBackend::new([Err(TransportError::Auth("HTTP 401".into())), Ok(valid)]);
        let res = block(extract_labels(&r, &t, &backend, 3));
        assert_eq!(res.attempts, 1);
        assert!(matches!(res.error(), Some(ExtractError::AuthFailure { .. })));
    }

    #[test]
    fn region_mismatch() {
        let (t, _, valid) = setup();
        let r = ReportDocument::new("r1", Region::elbow(), "x");
        let backend = ScriptedBackend::new([Ok(valid)]);
        let res = block(extract_labels(&r, &t, &backend, 3));
        assert_eq!(res.attempts, 0);
        assert!(matches!(res.error(), Some(ExtractError::RegionMismatch { .. })));
    }

    #[test]
    fn failure_record_serializes_with_code() {
        let rec = FailureRecord {
            report_id: "r".into(),
            attempts: 4,
            error: ExtractError::RetriesExhausted { attempts: 4, last_error: "x".into() },
        };
        let v = serde_json::to_value(&rec).unwrap();
        assert_eq!(v["error"]["code"], "retries_exhausted");
        let back: FailureRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, rec);
    }
}
