use std::sync::LazyLock;

use chrono::{DateTime, Duration, Utc};
use regex::Regex;

use crate::domain::TimeWindow;

static LAST_N: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:last|past|previous)\s+(?:(\d{1,6})\s*)?(hours?|hrs?|h|days?|d)\b").unwrap()
});
static TODAY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\btoday\b").unwrap());
static YESTERDAY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\byesterday\b").unwrap());

fn midnight(t: DateTime<Utc>) -> DateTime<Utc> {
    t.date_naive().and_hms_opt(0, 0, 0).expect("midnight exists").and_utc()
}

/// Resolves the first of "last N hours", "last N days", "today" or "yesterday"
/// found in `text` against `now`. Windows are inclusive at both ends.
pub fn resolve_relative(text: &str, now: DateTime<Utc>) -> Option<TimeWindow> {
    let now = now.with_timezone(&Utc);
    let mut found: Vec<(usize, TimeWindow)> = Vec::new();
    if let Some(c) = LAST_N.captures(text) {
        let n: i64 = c.get(1).map_or(Some(1), |m| m.as_str().parse().ok())?;
        let unit = c[2].to_ascii_lowercase();
        let span = if unit.starts_with('h') { Duration::try_hours(n) } else { Duration::try_days(n) }?;
        let from = now.checked_sub_signed(span)?;
        found.push((c.get(0).unwrap().start(), TimeWindow { from_date: Some(from), to_date: Some(now) }));
    }
    if let Some(m) = TODAY.find(text) {
        found.push((m.start(), TimeWindow { from_date: Some(midnight(now)), to_date: Some(now) }));
    }
    if let Some(m) = YESTERDAY.find(text) {
        let start = midnight(now) - Duration::days(1);
        found.push((m.start(), TimeWindow { from_date: Some(start), to_date: Some(midnight(now) - Duration::seconds(1)) }));
    }
    found.into_iter().min_by_key(|(pos, _)| *pos).map(|(_, w)| w)
}
