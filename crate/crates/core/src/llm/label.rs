use crate::domain::GeneralIntent;

use super::LlmError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledResponse {
    pub label: GeneralIntent,
    pub body: String,
}

fn is_emphasis(c: char) -> bool {
    c == '*' || c == '_'
}

fn strip_punct(s: &str) -> &str {
    s.strip_prefix(':').or_else(|| s.strip_prefix('.')).unwrap_or(s)
}

/// Reads the intent label a completion starts with.
///
/// Accepts `query`, `**Query**`, `_action_:`, `IRRELEVANT.` and similar;
/// the label must be followed by a non-alphanumeric character or the end.
pub fn parse_label(completion: &str) -> Result<LabeledResponse, LlmError> {
    let s = completion.trim_start().trim_start_matches(is_emphasis);
    for label in GeneralIntent::ALL {
        let name = label.label();
        let Some(head) = s.get(..name.len()) else { continue };
        if !head.eq_ignore_ascii_case(name) {
            continue;
        }
        let rest = &s[name.len()..];
        if rest.chars().next().is_some_and(|c| c.is_alphanumeric()) {
            continue;
        }
        let rest = strip_punct(rest).trim_start_matches(is_emphasis);
        let rest = strip_punct(rest);
        return Ok(LabeledResponse { label, body: rest.trim_start().to_string() });
    }
    Err(LlmError::UnlabeledResponse)
}
