use serde::{Deserialize, Serialize};

use crate::template::LabelTemplate;

const INSTRUCTION: &str = include_str!("../../templates/instruction.txt");

/// Output tokens budgeted per template label.
pub const TOKENS_PER_LABEL: u32 = 16;

/// Hedging terms the instruction block names, with their German forms.
pub const HEDGING_TERMS: [&str; 7] = [
    "nicht sicher abgrenzbar",
    "am ehesten",
    "möglicherweise",
    "nicht ausgeschlossen",
    "Verdacht auf",
    "als DD käme in Frage",
    "DD ",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
    pub user_text: String,
    pub decoding: Decoding,
}

impl PromptPayload {
    /// A copy whose user text ends with feedback about a rejected answer.
    pub fn with_feedback(&self, error: &str) -> Self {
        let mut next = self.clone();
        next.user_text.push_str("\n\nYour previous answer was rejected: ");
        next.user_text.push_str(error);
        next.user_text
            .push_str(". Return only the completed template as JSON, with every label and nothing else.");
        next
    }
}

/// Builds the zero-shot prompt for one scrubbed report.
pub fn build_prompt(template: &LabelTemplate, report_text: &str) -> PromptPayload {
    let example = template.subcategory_example().unwrap_or("Fracture (All Locations)");
    // the report text is spliced in last so its content is never re-expanded
    let user_text = INSTRUCTION
        .trim_end()
        .replace("{subcategory_example}", example)
        .replace("{region}", template.region().as_str())
        .replace("{template_json}", &template.template_json())
        .replace("{finding}", report_text);
    PromptPayload {
        system_text: None,
        user_text,
        decoding: Decoding {
            temperature: 0.0,
            max_tokens: template.len() as u32 * TOKENS_PER_LABEL,
        },
    }
}
