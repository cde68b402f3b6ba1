//! Canonical textual form: compact JSON with object keys sorted bytewise.
//!
//! Used for store logs, fixtures, audit payloads and vote comparisons, so
//! output must not depend on map iteration order or serde_json features.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Serializes any value to its canonical document.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&v, &mut out);
    Ok(out)
}

/// Canonical form of an already-built JSON value.
pub fn canonical_value(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

pub fn from_canonical_str<T: DeserializeOwned>(text: &str) -> serde_json::Result<T> {
    serde_json::from_str(text)
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                // serializing a str cannot fail
                out.push_str(&serde_json::to_string(k).unwrap());
                out.push(':');
                write_value(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Second-precision UTC timestamps rendered as `YYYY-MM-DDTHH:MM:SSZ`.
pub mod timestamp {
    use chrono::{DateTime, NaiveDate, NaiveDateTime, SubsecRound, TimeZone, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub const FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.format(FORMAT).to_string()
    }

    /// Lenient parser for the timestamp shapes feeds and models emit.
    ///
    /// Zone-less inputs are read as UTC; date-only inputs mean midnight.
    pub fn parse_lenient(raw: &str) -> Option<DateTime<Utc>> {
        let s = raw.trim();
        if s.is_empty() {
            return None;
        }
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Some(dt.with_timezone(&Utc).trunc_subsecs(0));
        }
        let stripped = s
            .strip_suffix(" UTC")
            .or_else(|| s.strip_suffix('Z'))
            .unwrap_or(s);
        const NAIVE: [&str; 6] = [
            "%Y-%m-%d %H:%M:%S",
            "%Y-%m-%dT%H:%M:%S",
            "%Y-%m-%dT%H:%M:%S%.f",
            "%Y-%m-%d %H:%M:%S%.f",
            "%Y/%m/%d %H:%M:%S",
            "%Y/%m/%d %H:%M",
        ];
        for f in NAIVE {
            if let Ok(n) = NaiveDateTime::parse_from_str(stripped, f) {
                return Some(Utc.from_utc_datetime(&n).trunc_subsecs(0));
            }
        }
        for f in ["%Y-%m-%d", "%Y/%m/%d"] {
            if let Ok(d) = NaiveDate::parse_from_str(stripped, f) {
                return Some(Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0)?));
            }
        }
        None
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse_lenient(&raw).ok_or_else(|| serde::de::Error::custom(format!("invalid timestamp `{raw}`")))
    }

    pub mod option {
        use chrono::{DateTime, Utc};
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(ts: &Option<DateTime<Utc>>, s: S) -> Result<S::Ok, S::Error> {
            match ts {
                Some(t) => s.serialize_str(&super::format(t)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DateTime<Utc>>, D::Error> {
            match Option::<String>::deserialize(d)? {
                Some(raw) => super::parse_lenient(&raw)
                    .map(Some)
                    .ok_or_else(|| serde::de::Error::custom(format!("invalid timestamp `{raw}`"))),
                None => Ok(None),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_recursively() {
        let v = json!({"b": 1, "a": {"z": [1, {"y": null, "x": "s"}], "c": true}});
        assert_eq!(canonical_value(&v), r#"{"a":{"c":true,"z":[1,{"x":"s","y":null}]},"b":1}"#);
    }

    #[test]
    fn timestamp_formats() {
        use chrono::TimeZone;
        let want = chrono::Utc.with_ymd_and_hms(2023, 1, 1, 12, 0, 0).unwrap();
        for raw in [
            "2023-01-01T12:00:00Z",
            "2023-01-01 12:00:00 UTC",
            "2023-01-01 12:00:00",
            "2023-01-01T12:00:00.000000",
            "2023-01-01T12:00:00.250Z",
            "2023-01-01T14:00:00+02:00",
            "2023/01/01 12:00",
        ] {
            assert_eq!(timestamp::parse_lenient(raw), Some(want), "{raw}");
        }
        assert_eq!(
            timestamp::parse_lenient("2023/01/01"),
            Some(chrono::Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap())
        );
        assert_eq!(timestamp::parse_lenient("yesterday"), None);
        assert_eq!(timestamp::format(&want), "2023-01-01T12:00:00Z");
    }
}
