//! Task description understanding.
//!
//! The task description often never names the object to segment ("open the
//! bottom drawer" means: find the handles). A chat LLM decomposes the
//! description: the prompt asks for the solution steps first, then the acted-on
//! object part and its containment hierarchy, as a JSON object. The functional
//! object is the acted-on part; the contextual object is the top of the
//! hierarchy and drives view selection.
//!
//! The prompt text ships as a versioned JSON file so experiments can pin it by
//! hash; see `assets/prompt_default.json` for the default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{chat, BackendError, ChatRequest, InferenceBackend};

/// The action vocabulary the system prompt must advertise to the model.
pub const ACTIONS: [&str; 9] = [
    "rotate",
    "key_press",
    "tip_push",
    "hook_pull",
    "pinch_pull",
    "hook_turn",
    "foot_push",
    "plug_in",
    "unplug",
];

pub const DEFAULT_PROMPT_JSON: &str = include_str!("../assets/prompt_default.json");

const DESCRIPTION_SLOT: &str = "{description}";

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("task description is empty")]
    EmptyDescription,
    #[error("prompt template invalid: {0}")]
    InvalidTemplate(String),
    #[error("no JSON object found in the response")]
    NoJson,
    #[error("response JSON missing field {0}")]
    MissingField(&'static str),
    #[error("field {field} has wrong type: expected {expected}")]
    WrongFieldType {
        field: &'static str,
        expected: &'static str,
    },
    #[error("acted_on_object is empty after normalization")]
    EmptyFunctionalObject,
    #[error("acted_on_object_hierarchy is empty")]
    EmptyHierarchy,
    #[error(
        "functional and contextual object are both \"{0}\" and the hierarchy offers no alternative"
    )]
    FunctionalEqualsContextual(String),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("gave up after {attempts} attempts, last error: {last}")]
    RetriesExhausted { attempts: u32, last: String },
}

/// System role text plus a user template with a `{description}` slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(default)]
    pub version: u32,
    pub system: String,
    pub user_format: String,
}

impl PromptTemplate {
    pub fn default_template() -> Self {
        serde_json::from_str(DEFAULT_PROMPT_JSON).expect("bundled prompt file is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self, ParseError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ParseError::InvalidTemplate(format!("{}: {e}", path.display())))?;
        let template: PromptTemplate = serde_json::from_str(
            std::str::from_utf8(&bytes).map_err(|e| ParseError::InvalidTemplate(e.to_string()))?,
        )
        .map_err(|e| ParseError::InvalidTemplate(e.to_string()))?;
        template.validate()?;
        Ok(template)
    }

    /// The system message must advertise the fixed action list and the user
    /// format must carry the description slot and the response field names.
    pub fn validate(&self) -> Result<(), ParseError> {
        let action_list = format!("[{}]", ACTIONS.join(", "));
        if !self.system.contains(&action_list) {
            return Err(ParseError::InvalidTemplate(format!(
                "system message must contain the action list {action_list}"
            )));
        }
        if !self.user_format.contains(DESCRIPTION_SLOT) {
            return Err(ParseError::InvalidTemplate(format!(
                "user format must contain the {DESCRIPTION_SLOT} slot"
            )));
        }
        for field in FIELDS {
            if !self.user_format.contains(field) {
                return Err(ParseError::InvalidTemplate(format!(
                    "user format must request the {field} field"
                )));
            }
        }
        Ok(())
    }
}

const FIELDS: [&str; 3] = [
    "task_solving_sequence",
    "acted_on_object",
    "acted_on_object_hierarchy",
];

/// The LLM's decomposition of one task description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedTask {
    /// The object part to segment, lowercase.
    pub functional_object: String,
    /// The larger object used for view selection, lowercase.
    pub contextual_object: String,
    pub action_sequence: Vec<String>,
    /// Normalized hierarchy from top-level object to part.
    pub hierarchy: Vec<String>,
}

/// Instantiate the chat request for a task description. Temperature is 0 for
/// replayable runs; the system message is a constant.
pub fn build_prompt(
    template: &PromptTemplate,
    description: &str,
) -> Result<ChatRequest, ParseError> {
    if description.trim().is_empty() {
        return Err(ParseError::EmptyDescription);
    }
    Ok(ChatRequest {
        system: template.system.clone(),
        user: template.user_format.replace(DESCRIPTION_SLOT, description),
        temperature: 0.0,
    })
}

/// Find the first balanced `{...}` substring that parses as a JSON object.
/// Handles responses wrapped in prose or code fences.
fn extract_json_object(text: &str) -> Option<serde_json::Value> {
    let bytes = text.as_bytes();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if start.is_some() => in_string = true,
            b'{' => {
                if start.is_none() {
                    start = Some(i);
                }
                depth += 1;
            }
            b'}' if start.is_some() => {
                depth -= 1;
                if depth == 0 {
                    let candidate = &text[start.unwrap()..=i];
                    if let Ok(value) = serde_json::from_str::<serde_json::Value>(candidate) {
                        if value.is_object() {
                            return Some(value);
                        }
                    }
                    // balanced but not valid JSON: keep scanning
                    start = None;
                }
            }
            _ => {}
        }
    }
    None
}

/// Lowercase, trim, collapse internal whitespace. No stemming: downstream
/// queries embed these strings verbatim.
fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn string_list(value: &serde_json::Value, field: &'static str) -> Result<Vec<String>, ParseError> {
    value
        .as_array()
        .ok_or(ParseError::WrongFieldType {
            field,
            expected: "array of strings",
        })?
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or(ParseError::WrongFieldType {
                    field,
                    expected: "array of strings",
                })
        })
        .collect()
}

/// Parse the model's reply into a [`ParsedTask`].
///
/// Extracts the first balanced JSON object, validates the three fields and
/// normalizes strings. If the hierarchy arrives reversed (its first element is
/// the acted-on object), it is reversed back before picking the contextual
/// object. If the functional and contextual objects still collide, the last
/// hierarchy element that differs from the functional object is used instead.
pub fn parse_response(text: &str) -> Result<ParsedTask, ParseError> {
    let value = extract_json_object(text).ok_or(ParseError::NoJson)?;
    let object = value
        .as_object()
        .expect("extract_json_object returns objects");

    let sequence = string_list(
        object
            .get("task_solving_sequence")
            .ok_or(ParseError::MissingField("task_solving_sequence"))?,
        "task_solving_sequence",
    )?;
    let acted_on = object
        .get("acted_on_object")
        .ok_or(ParseError::MissingField("acted_on_object"))?
        .as_str()
        .ok_or(ParseError::WrongFieldType {
            field: "acted_on_object",
            expected: "string",
        })?;
    let hierarchy_raw = string_list(
        object
            .get("acted_on_object_hierarchy")
            .ok_or(ParseError::MissingField("acted_on_object_hierarchy"))?,
        "acted_on_object_hierarchy",
    )?;

    let functional = normalize(acted_on);
    if functional.is_empty() {
        return Err(ParseError::EmptyFunctionalObject);
    }
    let mut hierarchy: Vec<String> = hierarchy_raw.iter().map(|s| normalize(s)).collect();
    hierarchy.retain(|s| !s.is_empty());
    if hierarchy.is_empty() {
        return Err(ParseError::EmptyHierarchy);
    }
    if hierarchy[0] == functional {
        hierarchy.reverse();
    }
    let contextual = if hierarchy[0] != functional {
        hierarchy[0].clone()
    } else {
        hierarchy
            .iter()
            .rev()
            .find(|s| **s != functional)
            .cloned()
            .ok_or_else(|| ParseError::FunctionalEqualsContextual(functional.clone()))?
    };

    Ok(ParsedTask {
        functional_object: functional,
        contextual_object: contextual,
        action_sequence: sequence.iter().map(|s| normalize(s)).collect(),
        hierarchy,
    })
}

/// Chat + parse with retries: malformed responses retry the chat up to
/// `max_retries` additional times before the task fails.
pub fn understand_task(
    backend: &dyn InferenceBackend,
    template: &PromptTemplate,
    description: &str,
    max_retries: u32,
) -> Result<ParsedTask, ParseError> {
    let request = build_prompt(template, description)?;
    let mut last: Option<ParseError> = None;
    for _attempt in 0..=max_retries {
        match chat(backend, &request) {
            Ok(response) => match parse_response(&response.text) {
                Ok(parsed) => return Ok(parsed),
                Err(e) => last = Some(e),
            },
            Err(e) => last = Some(e.into()),
        }
    }
    Err(ParseError::RetriesExhausted {
        attempts: max_retries + 1,
        last: last.map(|e| e.to_string()).unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GOOD: &str = r#"{"task_solving_sequence":["locate cabinet","grasp handle","pull"],
        "acted_on_object":"handle",
        "acted_on_object_hierarchy":["cabinet","drawer","handle"]}"#;

    #[test]
    fn default_template_is_valid_and_constant() {
        let template = PromptTemplate::default_template();
        template.validate().unwrap();
        let d = "open the bottom drawer of the cabinet with the TV on top";
        let a = build_prompt(&template, d).unwrap();
        let b = build_prompt(&template, d).unwrap();
        assert_eq!(a.system, b.system);
        assert_eq!(a.user, b.user);
        assert_eq!(a.temperature, 0.0);
        assert!(a.user.contains(d));
        for field in FIELDS {
            assert!(a.user.contains(field), "user message must ask for {field}");
        }
    }

    #[test]
    fn empty_description_is_rejected() {
        let template = PromptTemplate::default_template();
        assert!(matches!(
            build_prompt(&template, "  "),
            Err(ParseError::EmptyDescription)
        ));
    }

    #[test]
    fn parses_plain_response() {
        let parsed = parse_response(GOOD).unwrap();
        assert_eq!(parsed.functional_object, "handle");
        assert_eq!(parsed.contextual_object, "cabinet");
        assert_eq!(parsed.hierarchy, ["cabinet", "drawer", "handle"]);
        assert_eq!(parsed.action_sequence.len(), 3);
    }

    #[test]
    fn fenced_response_parses_identically() {
        let fenced = format!("```json\n{GOOD}\n```");
        assert_eq!(
            parse_response(&fenced).unwrap(),
            parse_response(GOOD).unwrap()
        );
    }

    #[test]
    fn prose_wrapped_response_parses_identically() {
        let wrapped = format!("Sure! Here is the plan you asked for:\n{GOOD}\nLet me know.");
        assert_eq!(
            parse_response(&wrapped).unwrap(),
            parse_response(GOOD).unwrap()
        );
    }

    #[test]
    fn reversed_hierarchy_recovers_contextual_object() {
        let text = r#"{"task_solving_sequence":[],
            "acted_on_object":"handle",
            "acted_on_object_hierarchy":["handle","drawer","cabinet"]}"#;
        let parsed = parse_response(text).unwrap();
        assert_eq!(parsed.contextual_object, "cabinet");
        assert_eq!(parsed.hierarchy, ["cabinet", "drawer", "handle"]);
    }

    #[test]
    fn equal_objects_fall_back_to_last_distinct_element() {
        let text = r#"{"task_solving_sequence":[],
            "acted_on_object":"knob",
            "acted_on_object_hierarchy":["knob","dresser","knob"]}"#;
        let parsed = parse_response(text).unwrap();
        assert_eq!(parsed.functional_object, "knob");
        assert_eq!(parsed.contextual_object, "dresser");

        let hopeless = r#"{"task_solving_sequence":[],
            "acted_on_object":"door",
            "acted_on_object_hierarchy":["door"]}"#;
        assert!(matches!(
            parse_response(hopeless),
            Err(ParseError::FunctionalEqualsContextual(_))
        ));
    }

    #[test]
    fn normalization_lowercases_and_collapses_whitespace() {
        let text = r#"{"task_solving_sequence":[],
            "acted_on_object":"  Radiator   DIAL ",
            "acted_on_object_hierarchy":["The  Radiator","Radiator   dial"]}"#;
        let parsed = parse_response(text).unwrap();
        assert_eq!(parsed.functional_object, "radiator dial");
        assert_eq!(parsed.contextual_object, "the radiator");
    }

    #[test]
    fn distinct_errors_for_distinct_failures() {
        assert!(matches!(
            parse_response("no json here"),
            Err(ParseError::NoJson)
        ));
        assert!(matches!(
            parse_response(r#"{"acted_on_object":"a","acted_on_object_hierarchy":["b"]}"#),
            Err(ParseError::MissingField("task_solving_sequence"))
        ));
        assert!(matches!(
            parse_response(
                r#"{"task_solving_sequence":[],"acted_on_object":"  ","acted_on_object_hierarchy":["b"]}"#
            ),
            Err(ParseError::EmptyFunctionalObject)
        ));
    }

    #[test]
    fn earlier_invalid_braces_do_not_break_extraction() {
        let text = format!("weird {{ not json }} and then {GOOD}");
        let parsed = parse_response(&text).unwrap();
        assert_eq!(parsed.functional_object, "handle");
    }

    #[test]
    fn retries_then_fails_with_attempt_count() {
        struct AlwaysProse;
        impl InferenceBackend for AlwaysProse {
            fn chat(&self, _: &ChatRequest) -> Result<crate::backends::ChatResponse, BackendError> {
                Ok(crate::backends::ChatResponse {
                    text: "I cannot answer in JSON".into(),
                })
            }
            fn detect_segment(
                &self,
                _: &crate::backends::DetectSegmentRequest,
            ) -> Result<crate::backends::DetectSegmentResponse, BackendError> {
                unreachable!()
            }
            fn point(
                &self,
                _: &crate::backends::PointRequest,
            ) -> Result<crate::backends::PointResponse, BackendError> {
                unreachable!()
            }
            fn segment_points(
                &self,
                _: &crate::backends::SegmentPointsRequest,
            ) -> Result<crate::backends::SegmentPointsResponse, BackendError> {
                unreachable!()
            }
        }
        let template = PromptTemplate::default_template();
        let err = understand_task(&AlwaysProse, &template, "open the door", 2).unwrap_err();
        match err {
            ParseError::RetriesExhausted { attempts, last } => {
                assert_eq!(attempts, 3);
                assert!(last.contains("no JSON"), "{last}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn recovers_json_from_64kb_of_prose() {
        let mut state = 0x1234_5678_9abc_def0u64;
        let mut junk = |len: usize| {
            let mut s = String::with_capacity(len);
            while s.len() < len {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                let c = b"abcdefghijklmnopqrstuvwxyz \"\n.,:"[(state % 32) as usize];
                s.push(c as char);
            }
            s
        };
        let text = format!("{}{GOOD}{}", junk(32 * 1024), junk(32 * 1024));
        let parsed = parse_response(&text).unwrap();
        assert_eq!(parsed.functional_object, "handle");
    }

    proptest! {
        /// Valid JSON embedded anywhere in brace-free prose is always recovered.
        #[test]
        fn recovers_json_from_arbitrary_prose(
            prefix in "[^{}]{0,512}",
            suffix in "[^{}]{0,512}",
        ) {
            let text = format!("{prefix}{GOOD}{suffix}");
            let parsed = parse_response(&text).unwrap();
            prop_assert_eq!(parsed.functional_object.as_str(), "handle");
            prop_assert_eq!(parsed.contextual_object.as_str(), "cabinet");
        }

        /// Parsing is a pure function of the text.
        #[test]
        fn idempotent_parsing(noise in "[a-z ]{0,64}") {
            let text = format!("{noise}{GOOD}");
            let a = parse_response(&text).unwrap();
            let b = parse_response(&text).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
