use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::canonical::timestamp;
use crate::domain::{ChatMessage, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptId {
    IntentClassifier,
    StepPlanner,
    SlotExtractor,
}

impl PromptId {
    pub const ALL: [PromptId; 3] = [PromptId::IntentClassifier, PromptId::StepPlanner, PromptId::SlotExtractor];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::IntentClassifier => "intent-classifier",
            PromptId::StepPlanner => "step-planner",
            PromptId::SlotExtractor => "slot-extractor",
        }
    }

    fn default_body(self) -> &'static str {
        match self {
            PromptId::IntentClassifier => include_str!("../../prompts/intent-classifier.txt"),
            PromptId::StepPlanner => include_str!("../../prompts/step-planner.txt"),
            PromptId::SlotExtractor => include_str!("../../prompts/slot-extractor.txt"),
        }
    }
}

impl FromStr for PromptId {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| TemplateError::UnknownTemplate(s.to_string()))
    }
}

pub const PLACEHOLDERS: [&str; 3] = ["now", "intent", "prior_steps"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("placeholder {{{0}}} is not bound")]
    Unbound(String),
    #[error("unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("unbalanced brace at byte {0}")]
    Unbalanced(usize),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("reading template: {0}")]
    Io(String),
}

enum Piece<'a> {
    Text(&'a str),
    Brace(char),
    Slot(&'a str),
}

fn pieces(body: &str) -> Result<Vec<Piece<'_>>, TemplateError> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' | b'}' if bytes.get(i + 1) == Some(&bytes[i]) => {
                out.push(Piece::Text(&body[start..i]));
                out.push(Piece::Brace(bytes[i] as char));
                i += 2;
                start = i;
            }
            b'{' => {
                let close = body[i..].find('}').map(|o| i + o).ok_or(TemplateError::Unbalanced(i))?;
                let name = &body[i + 1..close];
                if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
                    return Err(TemplateError::Unbalanced(i));
                }
                out.push(Piece::Text(&body[start..i]));
                out.push(Piece::Slot(name));
                i = close + 1;
                start = i;
            }
            b'}' => return Err(TemplateError::Unbalanced(i)),
            _ => i += 1,
        }
    }
    out.push(Piece::Text(&body[start..]));
    Ok(out)
}

/// A prompt body with `{name}` placeholders; `{{` and `}}` are literal braces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: PromptId,
    body: String,
}

impl PromptTemplate {
    pub fn new(id: PromptId, body: impl Into<String>) -> Result<PromptTemplate, TemplateError> {
        let body = body.into();
        for p in pieces(&body)? {
            if let Piece::Slot(name) = p {
                if !PLACEHOLDERS.contains(&name) {
                    return Err(TemplateError::UnknownPlaceholder(name.to_string()));
                }
            }
        }
        Ok(PromptTemplate { id, body })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Placeholders the body uses, in first-use order.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for p in pieces(&self.body).unwrap_or_default() {
            if let Piece::Slot(name) = p {
                if !seen.contains(&name) {
                    seen.push(name);
                }
            }
        }
        seen
    }

    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len() + 64);
        for p in pieces(&self.body)? {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Brace(c) => out.push(c),
                Piece::Slot(name) => out.push_str(bindings.get(name).ok_or_else(|| TemplateError::Unbound(name.to_string()))?),
            }
        }
        Ok(out)
    }
}

/// The three prompts in use, defaulting to the shipped bodies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    map: BTreeMap<PromptId, PromptTemplate>,
}

impl Default for Templates {
    fn default() -> Self {
        let map = PromptId::ALL
            .into_iter()
            .map(|id| (id, PromptTemplate::new(id, id.default_body()).expect("shipped prompt is valid")))
            .collect();
        Templates { map }
    }
}

impl Templates {
    pub fn get(&self, id: PromptId) -> &PromptTemplate {
        &self.map[&id]
    }

    pub fn set(&mut self, template: PromptTemplate) {
        self.map.insert(template.id, template);
    }

    /// Replaces the defaults with `<dir>/<id>.txt` where such files exist.
    pub fn with_overrides(mut self, dir: &Path) -> Result<Templates, TemplateError> {
        for id in PromptId::ALL {
            let path = dir.join(format!("{}.txt", id.as_str()));
            match std::fs::read_to_string(&path) {
                Ok(body) => self.set(PromptTemplate::new(id, body)?),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(TemplateError::Io(format!("{}: {e}", path.display()))),
            }
        }
        Ok(self)
    }

    pub fn render(&self, id: PromptId, now: DateTime<Utc>, extra: &[(&'static str, String)]) -> Result<ChatMessage, TemplateError> {
        let mut bindings: BTreeMap<&str, String> = extra.iter().cloned().collect();
        bindings.insert("now", timestamp::format(&now));
        let text = self.get(id).render(&bindings)?;
        ChatMessage::new(Role::System, text, now).map_err(|e| TemplateError::Io(e.to_string()))
    }

    pub fn render_intent(&self, now: DateTime<Utc>) -> Result<ChatMessage, TemplateError> {
        self.render(PromptId::IntentClassifier, now, &[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap()
    }

    #[test]
    fn intent_prompt_opens_with_the_reference_sentence() {
        let m = Templates::default().render_intent(now()).unwrap();
        assert_eq!(m.role, Role::System);
        assert!(m.content.starts_with(
            "You are a cyber security assistant AI called Cyber Sentinel, designed to answer user questions related to cybersecurity and computer security."
        ));
        assert!(m.content.contains("Put irrelevant at the beginning of your response."));
        assert!(m.content.trim_end().ends_with("Current date and time: 2023-01-02T00:00:00Z"));
        assert_eq!(m, Templates::default().render_intent(now()).unwrap());
    }

    #[test]
    fn escapes_and_unbound_placeholders() {
        let t = PromptTemplate::new(PromptId::StepPlanner, "{{\"a\": {intent}}} at {now}").unwrap();
        assert_eq!(t.placeholders(), vec!["intent", "now"]);
        let mut b = BTreeMap::new();
        b.insert("now", "T".to_string());
        assert_eq!(t.render(&b), Err(TemplateError::Unbound("intent".into())));
        b.insert("intent", "1".to_string());
        assert_eq!(t.render(&b).unwrap(), "{\"a\": 1} at T");
        assert!(matches!(PromptTemplate::new(PromptId::StepPlanner, "{what}"), Err(TemplateError::UnknownPlaceholder(_))));
        assert!(PromptTemplate::new(PromptId::StepPlanner, "a } b").is_err());
    }

    #[test]
    fn shipped_prompts_bind_expected_placeholders() {
        let t = Templates::default();
        assert_eq!(t.get(PromptId::IntentClassifier).placeholders(), vec!["now"]);
        assert_eq!(t.get(PromptId::StepPlanner).placeholders(), vec!["now"]);
        let mut ex = t.get(PromptId::SlotExtractor).placeholders();
        ex.sort();
        assert_eq!(ex, vec!["intent", "now", "prior_steps"]);
        assert!(t.render(PromptId::SlotExtractor, now(), &[]).is_err());
    }
}
