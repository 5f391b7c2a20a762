use indexmap::IndexMap;
use serde_json::Value;
use thiserror::Error;

use crate::model::{LabelSheet, LabelState, Provenance};
use crate::template::{normalize_label, LabelTemplate};

/// Rejections of a model answer; all of them are retry-eligible.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing label {0:?}")]
    MissingLabel(String),
    #[error("unexpected label {0:?}")]
    ExtraLabel(String),
    #[error("label {0:?} has unusable value {1}")]
    BadValue(String, String),
}

/// Removes a surrounding markdown code fence, with or without a language tag.
pub fn strip_fences(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(open) = trimmed.find("```") else {
        return trimmed;
    };
    let after = &trimmed[open + 3..];
    // skip the info string ("json") up to the end of the fence line
    let body = match after.find('\n') {
        Some(nl) => &after[nl + 1..],
        None => after,
    };
    match body.rfind("```") {
        Some(close) => body[..close].trim(),
        None => body.trim(),
    }
}

/// Parses a template-shaped JSON answer into a sheet for `report_id`.
pub fn parse_llm_response(raw: &str, template: &LabelTemplate, report_id: &str) -> Result<LabelSheet, ParseError> {
    let body = strip_fences(raw);
    let value: Value = serde_json::from_str(body).map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    let Value::Object(entries) = value else {
        return Err(ParseError::MalformedJson("top level is not an object".into()));
    };

    let mut found: IndexMap<String, LabelState> = IndexMap::with_capacity(entries.len());
    for (key, entry) in &entries {
        let label = normalize_label(key);
        if !template.contains(&label) {
            return Err(ParseError::ExtraLabel(label));
        }
        let state = match entry {
            Value::Object(obj) if obj.len() == 1 => obj.get("finding").and_then(LabelState::from_json),
            _ => None,
        };
        let state = state.ok_or_else(|| ParseError::BadValue(label.clone(), entry.to_string()))?;
        if found.insert(label.clone(), state).is_some() {
            return Err(ParseError::BadValue(label, "duplicate entry".into()));
        }
    }

    let mut labels = IndexMap::with_capacity(template.len());
    for label in template.labels() {
        let state = found
            .get(label)
            .copied()
            .ok_or_else(|| ParseError::MissingLabel(label.clone()))?;
        labels.insert(label.clone(), state);
    }
    Ok(LabelSheet {
        report_id: report_id.to_owned(),
        region: template.region().clone(),
        provenance: Provenance::Auto,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::model::Region;
    use crate::template::TemplateRegistry;

    fn clavicle() -> LabelTemplate {
        TemplateRegistry::shipped().get(&Region::clavicle()).unwrap().clone()
    }

    fn one_fracture(t: &LabelTemplate) -> String {
        let mut sheet = LabelSheet::filled("r", t, LabelState::False);
        sheet.set("Fracture (All Locations)", LabelState::True);
        sheet.to_template_json()
    }

    #[test]
    fn direct_mapping() {
        let t = clavicle();
        let sheet = parse_llm_response(&one_fracture(&t), &t, "r").unwrap();
        assert_eq!(sheet.labels.len(), 26);
        assert_eq!(sheet.labels.values().filter(|s| **s == LabelState::True).count(), 1);
        assert_eq!(sheet.get("Fracture (All Locations)"), Some(LabelState::True));
        assert_eq!(sheet.provenance, Provenance::Auto);
    }

    #[test]
    fn fenced_answer_is_identical() {
        let t = clavicle();
        let plain = parse_llm_response(&one_fracture(&t), &t, "r").unwrap();
        for wrapped in [
            format!("```json\n{}\n```", one_fracture(&t)),
            format!("```\n{}\n```\n", one_fracture(&t)),
            format!("Here is the template:\n```json\n{}\n```", one_fracture(&t)),
        ] {
            assert_eq!(parse_llm_response(&wrapped, &t, "r").unwrap(), plain);
        }
    }

    #[test]
    fn missing_label() {
        let t = clavicle();
        let mut v: serde_json::Map<String, Value> = serde_json::from_str(&one_fracture(&t)).unwrap();
        v.shift_remove("Ossicles");
        let raw = serde_json::to_string(&v).unwrap();
        assert_eq!(
            parse_llm_response(&raw, &t, "r").unwrap_err(),
            ParseError::MissingLabel("Ossicles".into())
        );
    }

    #[test]
    fn extra_and_bad_values() {
        let t = clavicle();
        let mut v: serde_json::Map<String, Value> = serde_json::from_str(&one_fracture(&t)).unwrap();
        v.insert("Pneumothorax".into(), serde_json::json!({"finding": false}));
        let raw = serde_json::to_string(&v).unwrap();
        assert_eq!(parse_llm_response(&raw, &t, "r").unwrap_err(), ParseError::ExtraLabel("Pneumothorax".into()));

        let mut v: serde_json::Map<String, Value> = serde_json::from_str(&one_fracture(&t)).unwrap();
        v.insert("Ossicles".into(), serde_json::json!({"finding": "maybe"}));
        let raw = serde_json::to_string(&v).unwrap();
        assert_eq!(
            parse_llm_response(&raw, &t, "r").unwrap_err(),
            ParseError::BadValue("Ossicles".into(), r#"{"finding":"maybe"}"#.into())
        );

        let mut v: serde_json::Map<String, Value> = serde_json::from_str(&one_fracture(&t)).unwrap();
        v.insert("Ossicles".into(), serde_json::json!({"finding": false, "note": "x"}));
        let raw = serde_json::to_string(&v).unwrap();
        assert!(matches!(parse_llm_response(&raw, &t, "r"), Err(ParseError::BadValue(..))));
    }

    #[test]
    fn string_states_are_normalized() {
        let t = clavicle();
        let raw = one_fracture(&t)
            .replacen("true", "\"TRUE\"", 1)
            .replacen("false", "\"Uncertain\"", 1)
            .replacen("false", "\"false\"", 1);
        let sheet = parse_llm_response(&raw, &t, "r").unwrap();
        assert_eq!(sheet.get("Fracture (All Locations)"), Some(LabelState::True));
        assert_eq!(sheet.get("Medial Third Fracture"), Some(LabelState::Uncertain));
        assert_eq!(sheet.get("Middle Third Fracture"), Some(LabelState::False));
    }

    #[test]
    fn malformed() {
        let t = clavicle();
        assert!(matches!(parse_llm_response("{not json", &t, "r"), Err(ParseError::MalformedJson(_))));
        assert!(matches!(parse_llm_response("[1,2]", &t, "r"), Err(ParseError::MalformedJson(_))));
        assert!(matches!(parse_llm_response("", &t, "r"), Err(ParseError::MalformedJson(_))));
    }

    #[test]
    fn keys_are_nfc_normalized() {
        let t = TemplateRegistry::shipped().get(&Region::thumb()).unwrap().clone();
        let sheet = LabelSheet::filled("r", &t, LabelState::False);
        let raw = sheet.to_template_json().replace("\"First Metacarpal Bone Fracture\"", "\"  First Metacarpal Bone Fracture \"");
        assert_eq!(parse_llm_response(&raw, &t, "r").unwrap(), sheet);
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(
            region in prop::sample::select(vec!["clavicle", "elbow", "thumb"]),
            states in prop::collection::vec(prop::sample::select(LabelState::ALL.to_vec()), 29),
            fenced in any::<bool>(),
        ) {
            let t = TemplateRegistry::shipped().get(&Region::new(region)).unwrap().clone();
            let mut sheet = LabelSheet::filled("rid", &t, LabelState::False);
            for (label, s) in t.labels().iter().zip(&states) {
                sheet.set(label, *s);
            }
            let mut raw = sheet.to_template_json();
            if fenced {
                raw = format!("```json\n{raw}\n```");
            }
            prop_assert_eq!(parse_llm_response(&raw, &t, "rid").unwrap(), sheet);
        }
    }
}
