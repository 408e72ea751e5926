//! Parsing of three-stage responses.
//!
//! Grammar (whitespace allowed between and around the spans, nothing else):
//!
//! ```text
//! <think> ... </think>
//! <rethink> ... </rethink>
//! <answer> ... </answer>
//! ```
//!
//! Region proposals are bracketed numeric quadruples `[x1, y1, x2, y2]` and
//! are harvested from the think span only. The answer span is matched
//! (trimmed, case-insensitive) against a fixed label lexicon:
//!
//! | answer                                   | label |
//! |------------------------------------------|-------|
//! | `abnormal`, `anomaly`, `yes`, `defect`   | 1     |
//! | `normal`, `no anomaly`, `no`             | 0     |
//!
//! Anything else leaves the label undetermined.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BBox, Label};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const RETHINK_OPEN: &str = "<rethink>";
pub const RETHINK_CLOSE: &str = "</rethink>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

const TAGS: [&str; 6] = [
    THINK_OPEN,
    THINK_CLOSE,
    RETHINK_OPEN,
    RETHINK_CLOSE,
    ANSWER_OPEN,
    ANSWER_CLOSE,
];

const ABNORMAL_TOKENS: [&str; 4] = ["abnormal", "anomaly", "yes", "defect"];
const NORMAL_TOKENS: [&str; 3] = ["normal", "no anomaly", "no"];

static QUADRUPLE: LazyLock<Regex> = LazyLock::new(|| {
    let num = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)";
    Regex::new(&format!(
        r"\[\s*{num}\s*,\s*{num}\s*,\s*{num}\s*,\s*{num}\s*\]"
    ))
    .expect("quadruple pattern")
});

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub think_text: String,
    pub rethink_text: String,
    pub answer_text: String,
    pub pred_boxes: Vec<BBox>,
    pub label: Option<Label>,
    pub format_ok: bool,
    pub warnings: Vec<String>,
}

/// Pulls every bracketed quadruple out of `stage_text`, in order of
/// appearance. Quadruples that do not form a positive-area finite box are
/// dropped with a warning.
pub fn extract_boxes(stage_text: &str) -> (Vec<BBox>, Vec<String>) {
    let mut boxes = Vec::new();
    let mut warnings = Vec::new();
    for caps in QUADRUPLE.captures_iter(stage_text) {
        let mut v = [0.0f64; 4];
        for (slot, i) in v.iter_mut().zip(1..=4) {
            // the pattern only admits valid float literals
            *slot = caps[i].parse().unwrap_or(f64::NAN);
        }
        let b = BBox::from(v);
        if b.is_valid() {
            boxes.push(b);
        } else {
            warnings.push(format!("degenerate box dropped: {}", &caps[0]));
        }
    }
    (boxes, warnings)
}

pub fn extract_label(answer_text: &str) -> Option<Label> {
    let norm = answer_text.trim().to_lowercase();
    if ABNORMAL_TOKENS.contains(&norm.as_str()) {
        Some(Label::Abnormal)
    } else if NORMAL_TOKENS.contains(&norm.as_str()) {
        Some(Label::Normal)
    } else {
        None
    }
}

/// Content between `open` and its `close`, best effort: an unterminated span
/// runs to the next known tag or the end of the text.
fn span<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let rest = &text[start..];
    let end = rest.find(close).unwrap_or_else(|| {
        TAGS.iter()
            .filter_map(|t| rest.find(t))
            .min()
            .unwrap_or(rest.len())
    });
    Some(&rest[..end])
}

fn positions(text: &str, tag: &str) -> Vec<usize> {
    text.match_indices(tag).map(|(i, _)| i).collect()
}

/// Decomposes a response. Total and deterministic: structural defects are
/// reported through `format_ok = false` and `warnings`, never as errors.
pub fn parse(text: &str) -> ParsedResponse {
    let mut warnings = Vec::new();

    let think = span(text, THINK_OPEN, THINK_CLOSE);
    let rethink = span(text, RETHINK_OPEN, RETHINK_CLOSE);
    let answer = span(text, ANSWER_OPEN, ANSWER_CLOSE);

    let mut format_ok = true;
    let mut at = Vec::with_capacity(TAGS.len());
    for tag in TAGS {
        let pos = positions(text, tag);
        match pos.len() {
            1 => at.push(pos[0]),
            0 => {
                format_ok = false;
                warnings.push(format!("missing {tag}"));
            }
            n => {
                format_ok = false;
                warnings.push(format!("{tag} appears {n} times"));
            }
        }
    }
    if format_ok {
        if at.windows(2).any(|w| w[0] >= w[1]) {
            format_ok = false;
            warnings.push("stage tags out of order".to_string());
        } else {
            let gaps = [
                &text[..at[0]],
                &text[at[1] + THINK_CLOSE.len()..at[2]],
                &text[at[3] + RETHINK_CLOSE.len()..at[4]],
                &text[at[5] + ANSWER_CLOSE.len()..],
            ];
            if gaps.iter().any(|g| !g.trim().is_empty()) {
                format_ok = false;
                warnings.push("text outside stage tags".to_string());
            }
        }
    }
    if format_ok && answer.is_some_and(|a| a.trim().is_empty()) {
        format_ok = false;
        warnings.push("empty answer".to_string());
    }

    let (pred_boxes, box_warnings) = think.map(extract_boxes).unwrap_or_default();
    warnings.extend(box_warnings);

    let label = answer.and_then(extract_label);
    if answer.is_some() && label.is_none() {
        warnings.push("answer matched no label token".to_string());
    }

    ParsedResponse {
        think_text: think.unwrap_or_default().trim().to_string(),
        rethink_text: rethink.unwrap_or_default().trim().to_string(),
        answer_text: answer.unwrap_or_default().trim().to_string(),
        pred_boxes,
        label,
        format_ok,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemplateError {
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
}

/// Fields of a response before rendering to text.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResponseTemplate {
    pub think: String,
    pub rethink: String,
    pub answer: String,
    pub boxes: Vec<BBox>,
}

impl ResponseTemplate {
    pub fn new(
        think: impl Into<String>,
        rethink: impl Into<String>,
        answer: impl Into<String>,
        boxes: Vec<BBox>,
    ) -> Self {
        Self {
            think: think.into(),
            rethink: rethink.into(),
            answer: answer.into(),
            boxes,
        }
    }
}

/// Inverse of [`parse`]: the result parses back to the same boxes, label,
/// trimmed rethink/answer text and `format_ok = true`.
pub fn render(t: &ResponseTemplate) -> Result<String, TemplateError> {
    let invalid = |msg: String| Err(TemplateError::InvalidTemplate(msg));
    if t.answer.trim().is_empty() {
        return invalid("answer is empty".into());
    }
    for (name, field) in [
        ("think", &t.think),
        ("rethink", &t.rethink),
        ("answer", &t.answer),
    ] {
        if let Some(tag) = TAGS.iter().find(|tag| field.contains(**tag)) {
            return invalid(format!("{name} contains the tag {tag}"));
        }
    }
    if QUADRUPLE.is_match(&t.think) {
        return invalid("think text contains a box literal; pass boxes separately".into());
    }
    if let Some(b) = t.boxes.iter().find(|b| !b.is_valid()) {
        return invalid(format!("box {b} is degenerate"));
    }

    let mut think = t.think.trim().to_string();
    for b in &t.boxes {
        if !think.is_empty() {
            think.push(' ');
        }
        think.push_str(&b.to_string());
    }
    Ok(format!(
        "{THINK_OPEN}{think}{THINK_CLOSE}\n{RETHINK_OPEN}{}{RETHINK_CLOSE}\n{ANSWER_OPEN}{}{ANSWER_CLOSE}",
        t.rethink.trim(),
        t.answer.trim()
    ))
}
