//! Offline chat backends: a mock model that reads synthetic reports, and a scripted one.

use std::collections::VecDeque;
use std::sync::Mutex;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::client::{ChatBackend, TransportError};
use super::prompt::PromptPayload;
use crate::model::{LabelSheet, LabelState};
use crate::synth::decode_findings;
use crate::template::LabelTemplate;

/// Behaviour of [`MockLlm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MockMode {
    /// Answers with exactly the states encoded in the report.
    EchoTruth,
    /// Flips each cell with probability `rate` (True/False swap, Uncertain becomes False).
    FlipNoise { rate: f64, seed: u64 },
    /// Never returns parseable JSON.
    AlwaysMalformed,
    /// Drops each Uncertain cell to False with probability `rate`.
    UncertaintyDrop { rate: f64, seed: u64 },
}

impl MockMode {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            MockMode::FlipNoise { rate, .. } | MockMode::UncertaintyDrop { rate, .. } if !(0.0..=1.0).contains(&rate) => {
                Err(format!("mock rate {rate} outside [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

const REPORT_OPEN: &str = "according to the information given in ";
const REPORT_CLOSE: &str = ". Adhere strictly to the structure of the template.";

/// The report text spliced into an extraction prompt.
pub fn report_from_prompt(user_text: &str) -> Option<&str> {
    let start = user_text.find(REPORT_OPEN)? + REPORT_OPEN.len();
    let end = user_text.rfind(REPORT_CLOSE)?;
    (end >= start).then(|| &user_text[start..end])
}

/// Deterministic stand-in for a chat model, reading the synthetic sentence frames.
#[derive(Debug, Clone)]
pub struct MockLlm {
    template: LabelTemplate,
    mode: MockMode,
}

impl MockLlm {
    pub fn new(template: LabelTemplate, mode: MockMode) -> Self {
        MockLlm { template, mode }
    }

    fn rng(seed: u64, text: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(text.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// The answer the mock gives for one report text.
    pub fn answer(&self, report_text: &str) -> String {
        let states = decode_findings(report_text, &self.template);
        let mut sheet = LabelSheet::filled("mock", &self.template, LabelState::False);
        for (label, state) in states {
            sheet.set(&label, state);
        }
        match self.mode {
            MockMode::EchoTruth => {}
            MockMode::AlwaysMalformed => return "{\"finding\": ".to_owned(),
            MockMode::FlipNoise { rate, seed } => {
                let mut rng = Self::rng(seed, report_text);
                for state in sheet.labels.values_mut() {
                    if rng.random::<f64>() < rate {
                        *state = match *state {
                            LabelState::True | LabelState::Uncertain => LabelState::False,
                            LabelState::False => LabelState::True,
                        };
                    }
                }
            }
            MockMode::UncertaintyDrop { rate, seed } => {
                let mut rng = Self::rng(seed, report_text);
                for state in sheet.labels.values_mut() {
                    if *state == LabelState::Uncertain && rng.random::<f64>() < rate {
                        *state = LabelState::False;
                    }
                }
            }
        }
        sheet.to_template_json()
    }
}

#[async_trait]
impl ChatBackend for MockLlm {
    async fn complete(&self, payload: &PromptPayload) -> Result<String, TransportError> {
        let text = report_from_prompt(&payload.user_text)
            .ok_or_else(|| TransportError::BadResponse("mock could not locate the report in the prompt".into()))?;
        Ok(self.answer(text))
    }
}

/// Replays a fixed sequence of answers and records the prompts it saw.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    script: Mutex<VecDeque<Result<String, TransportError>>>,
    seen: Mutex<Vec<PromptPayload>>,
}

impl ScriptedBackend {
    pub fn new(script: impl IntoIterator<Item = Result<String, TransportError>>) -> Self {
        ScriptedBackend {
            script: Mutex::new(script.into_iter().collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> Vec<PromptPayload> {
        self.seen.lock().expect("lock").clone()
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn complete(&self, payload: &PromptPayload) -> Result<String, TransportError> {
        self.seen.lock().expect("lock").push(payload.clone());
        self.script
            .lock()
            .expect("lock")
            .pop_front()
            .unwrap_or_else(|| Err(TransportError::Unreachable("script exhausted".into())))
    }
}
