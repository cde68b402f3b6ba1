//! Deterministic stand-in for the language model: keywords and patterns only.

use std::sync::LazyLock;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use regex::Regex;
use serde_json::{json, Value};

use crate::dialogue::resolve_relative;
use crate::domain::canonical::timestamp;
use crate::domain::{parse_signature, ActionIntent, Signature, SignatureType};

use super::{ChatBackend, CompletionRequest, LlmError, PromptId};

static ACTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(un)?block(ed|ing|s)?\b|\bblacklist|\bban\b|\bunban\b|\bwhitelist").unwrap());
static UNDO: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bunblock|\bunban\b|\bwhitelist|\ballow\b").unwrap());
static QUERY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(show|list|give|find|search|display|how many|count|statistics|stats|latest|recent|updates?|reported|malicious|secure|safe|look ?up|check|status|attacks?|iocs?|indicators?)\b",
    )
    .unwrap()
});
static SECURITY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(phish|malware|cyber|ransom|virus|trojan|botnet|firewall|encrypt|vulnerab|exploit|threat|password|security|breach|hack|attack|intrusion|spam|ddos|siem|wazuh)").unwrap()
});
static GUARD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bif\b.*\b(malicious|reported|bad|known|listed|flagged|found|suspicious)\b").unwrap());
static PORT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bports?\s*(?:number\s*)?#?(\d{1,5})\b").unwrap());
static URLISH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(url|urls|domain|website|site|link|host ?name)\b").unwrap());
static BINDING: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\$(\d+)\.([a-z_]+)").unwrap());
static QUANTITY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:top|first|latest|last|recent)\s+(\d{1,6})\s+([a-z]+)").unwrap());
static ABSOLUTE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(from|since|after|to|until|till|before)\s+(\d{4}[/-]\d{2}[/-]\d{2}(?:[ T]\d{2}:\d{2}(?::\d{2})?Z?)?)").unwrap()
});
static STEP_INTENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)step intent is:\s*([a-z]+)").unwrap());
static NOW_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Current date and time:\s*(\S+)").unwrap());

const TYPE_WORDS: [(&str, SignatureType); 6] = [
    (r"(?i)\bsubnets?\b|\bcidrs?\b|\bnetwork range", SignatureType::Subnet),
    (r"(?i)\bip\b|\bips\b|\bip addresses\b|\bip address\b|\baddresses\b", SignatureType::Ip),
    (r"(?i)\bhash(es)?\b|\bsha-?(1|256)\b|\bmd5\b", SignatureType::Hash),
    (r"(?i)\be-?mails?\b", SignatureType::Email),
    (r"(?i)\burls?\b|\bdomains?\b|\bwebsites?\b|\blinks?\b", SignatureType::Url),
    (r"(?i)\bports?\b", SignatureType::Port),
];

static TYPE_RES: LazyLock<Vec<(Regex, SignatureType)>> =
    LazyLock::new(|| TYPE_WORDS.iter().map(|(p, t)| (Regex::new(p).unwrap(), *t)).collect());

/// Indicators written in `text`, in order of appearance. Bare numbers only
/// count as ports after the word "port"; dotted names without a scheme only
/// count as URLs when the text talks about a URL or domain.
pub(crate) fn indicators(text: &str) -> Vec<Signature> {
    let urlish = URLISH.is_match(text);
    let mut out: Vec<(usize, Signature)> = Vec::new();
    let mut offset = 0;
    for raw in text.split_whitespace() {
        let pos = text[offset..].find(raw).map_or(offset, |p| p + offset);
        offset = pos + raw.len();
        let token = raw.trim_matches(|c: char| matches!(c, ',' | ';' | '!' | '?' | '(' | ')' | '"' | '\'' | '`' | '<' | '>'));
        let token = token.trim_end_matches('.').trim_end_matches(':');
        if token.is_empty() || token.starts_with('$') {
            continue;
        }
        let Ok(sig) = parse_signature(token, None) else { continue };
        let keep = match sig.kind {
            SignatureType::Port => false,
            SignatureType::Url => token.contains("://") || token.to_ascii_lowercase().starts_with("www.") || urlish,
            _ => true,
        };
        if keep {
            out.push((pos, sig));
        }
    }
    for c in PORT.captures_iter(text) {
        if let Ok(sig) = parse_signature(&c[1], Some(SignatureType::Port)) {
            out.push((c.get(0).unwrap().start(), sig));
        }
    }
    out.sort_by_key(|(p, _)| *p);
    out.into_iter().map(|(_, s)| s).collect()
}

fn type_word(text: &str) -> Option<SignatureType> {
    TYPE_RES.iter().filter_map(|(re, t)| re.find(text).map(|m| (m.start(), *t))).min_by_key(|(p, _)| *p).map(|(_, t)| t)
}

fn kind_noun(kind: SignatureType) -> &'static str {
    match kind {
        SignatureType::Ip => "IP",
        SignatureType::Subnet => "subnet",
        SignatureType::Email => "email address",
        SignatureType::Hash => "hash",
        SignatureType::Url => "URL",
        SignatureType::Port => "port",
    }
}

fn classify(text: &str) -> String {
    if ACTION.is_match(text) {
        return "action I will prepare that action.".into();
    }
    if QUERY.is_match(text) || !indicators(text).is_empty() {
        return "query Let me look that up in the threat intelligence database.".into();
    }
    if SECURITY.is_match(text) {
        return format!("cybersecurity {}", security_answer(text));
    }
    "irrelevant I am only designed to answer security-related questions. Ask me about threats, indicators of compromise, or actions on your SIEM.".into()
}

fn security_answer(text: &str) -> &'static str {
    let t = text.to_ascii_lowercase();
    if t.contains("phish") {
        "Phishing is a social engineering attack where a message imitating a trusted party lures the victim into revealing credentials, opening a malicious attachment or visiting a fraudulent site."
    } else if t.contains("ransom") {
        "Ransomware encrypts a victim's files and demands payment for the key. Offline backups, patching and least privilege are the main defences."
    } else if t.contains("bank") || t.contains("customer data") {
        "Banks combine encryption in transit and at rest, multi-factor authentication, fraud monitoring, network segmentation and regular audits to protect customer data."
    } else {
        "That is a security topic. The language model is not reachable right now, so only short, canned answers are available."
    }
}

fn plan(text: &str, now: DateTime<Utc>) -> String {
    let steps = plan_steps(text, now);
    let body = json!({ "steps": steps });
    format!("Planned from keywords.\n```json\n{}\n```", serde_json::to_string_pretty(&body).unwrap())
}

fn plan_steps(text: &str, now: DateTime<Utc>) -> Vec<Value> {
    let found = indicators(text);
    let first = found.iter().find(|s| s.kind != SignatureType::Port);
    let step = |n: u32, intent: ActionIntent, desc: String| json!({"step": n, "intent": intent.as_str(), "description": desc});
    if !ACTION.is_match(text) {
        let intent = match first {
            Some(s) if s.kind != SignatureType::Subnet && found.len() == 1 => ActionIntent::Status,
            _ => ActionIntent::Search,
        };
        return vec![step(1, intent, text.trim().to_string())];
    }
    let verb = if UNDO.is_match(text) { ActionIntent::Unblock } else { ActionIntent::Block };
    let verb_word = if verb == ActionIntent::Unblock { "Unblock" } else { "Block" };
    if let Some(sig) = first {
        let target = format!("{} {}", kind_noun(sig.kind), sig.value);
        if GUARD.is_match(text) && verb == ActionIntent::Block {
            let mut guarded = step(2, verb, format!("{verb_word} the {target}."));
            guarded["when"] = json!("$1.found");
            return vec![step(1, ActionIntent::Status, format!("Check whether the {target} is reported as malicious.")), guarded];
        }
        return vec![step(1, verb, text.trim().to_string())];
    }
    let mentions_ip = type_word(text) == Some(SignatureType::Ip);
    if mentions_ip && (resolve_relative(text, now).is_some() || QUERY.is_match(text)) {
        let rest = ACTION.replace(text.trim(), "Find");
        return vec![
            step(1, ActionIntent::Search, rest.into_owned()),
            step(2, verb, format!("{verb_word} every IP address in $1.list_ip.")),
        ];
    }
    vec![step(1, verb, text.trim().to_string())]
}

fn extract(text: &str, hint: Option<ActionIntent>, now: DateTime<Utc>) -> String {
    let intent = if UNDO.is_match(text) {
        Some(ActionIntent::Unblock)
    } else if ACTION.is_match(text) {
        Some(ActionIntent::Block)
    } else {
        hint
    };
    let mut out = json!({
        "intent": intent.map(ActionIntent::as_str),
        "signature_type": null,
        "signature_value": null,
        "from_date": null,
        "to_date": null,
        "quantity": null,
    });
    if let Some(b) = BINDING.captures(text) {
        out["signature_value"] = json!(format!("${}.{}", &b[1], &b[2]));
        if &b[2] == "list_ip" {
            out["signature_type"] = json!("ip");
        }
    } else if let Some(sig) = indicators(text).into_iter().next() {
        out["signature_type"] = json!(sig.kind.as_str());
        out["signature_value"] = json!(sig.value);
    } else if let Some(kind) = type_word(text) {
        out["signature_type"] = json!(kind.as_str());
    }
    if let Some(w) = resolve_relative(text, now) {
        out["from_date"] = json!(w.from_date.map(|t| timestamp::format(&t)));
        out["to_date"] = json!(w.to_date.map(|t| timestamp::format(&t)));
    }
    for c in ABSOLUTE.captures_iter(text) {
        let Some(t) = timestamp::parse_lenient(&c[2]) else { continue };
        let key = match c[1].to_ascii_lowercase().as_str() {
            "from" | "since" | "after" => "from_date",
            _ => "to_date",
        };
        out[key] = json!(timestamp::format(&t));
    }
    for c in QUANTITY.captures_iter(text) {
        let unit = c[2].to_ascii_lowercase();
        let is_time = ["hour", "hours", "day", "days", "h", "d", "minutes", "weeks", "months"].contains(&unit.as_str());
        if let (false, Ok(n)) = (is_time, c[1].parse::<u32>()) {
            if n > 0 {
                out["quantity"] = json!(n);
                break;
            }
        }
    }
    out.to_string()
}

/// Keyword and pattern backend for offline runs and degraded mode.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedBackend;

#[async_trait]
impl ChatBackend for RuleBasedBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<Vec<String>, LlmError> {
        let user = request.last_user().unwrap_or("");
        let now = NOW_LINE
            .captures(request.system())
            .and_then(|c| timestamp::parse_lenient(&c[1]))
            .or_else(|| request.messages.last().map(|m| m.timestamp))
            .unwrap_or_else(Utc::now);
        let text = match request.purpose.unwrap_or(PromptId::IntentClassifier) {
            PromptId::IntentClassifier => classify(user),
            PromptId::StepPlanner => plan(user, now),
            PromptId::SlotExtractor => {
                let hint = STEP_INTENT.captures(request.system()).and_then(|c| c[1].parse().ok());
                extract(user, hint, now)
            }
        };
        Ok(vec![text; request.sample_count as usize])
    }

    fn name(&self) -> &'static str {
        "rules"
    }
}
