//! The filter parameters shared by `GET /api/iocs` and `sentinel query`.

use std::num::NonZeroUsize;

use chrono::{DateTime, Duration, Utc};
use sentinel_core::domain::canonical::timestamp;
use sentinel_core::domain::{parse_signature, Signature, SignatureType, SourceId, TimeWindow};
use sentinel_core::store::StoreFilter;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryParams {
    #[serde(rename = "type")]
    pub index_type: Option<String>,
    pub value: Option<String>,
    pub port: Option<u16>,
    pub from: Option<String>,
    pub to: Option<String>,
    /// Relative window ending now, such as `24h`, `7d` or `30m`.
    pub last: Option<String>,
    /// Comma-separated source ids.
    pub source: Option<String>,
    pub limit: Option<usize>,
}

/// Parses `24h`, `7d`, `90m`, `2w`.
pub fn parse_span(raw: &str) -> Result<Duration, String> {
    let raw = raw.trim();
    let split = raw.find(|c: char| !c.is_ascii_digit()).ok_or_else(|| format!("span {raw:?} has no unit"))?;
    let (n, unit) = raw.split_at(split);
    let n: i64 = n.parse().map_err(|_| format!("span {raw:?} has no count"))?;
    if n <= 0 {
        return Err(format!("span {raw:?} must be positive"));
    }
    match unit {
        "m" => Ok(Duration::minutes(n)),
        "h" => Ok(Duration::hours(n)),
        "d" => Ok(Duration::days(n)),
        "w" => Ok(Duration::weeks(n)),
        _ => Err(format!("span unit {unit:?} is not one of m, h, d, w")),
    }
}

fn parse_time(field: &str, raw: &str) -> Result<DateTime<Utc>, String> {
    timestamp::parse_lenient(raw).ok_or_else(|| format!("{field}: cannot read {raw:?} as a time"))
}

impl QueryParams {
    /// Builds the store filter; `now` anchors `last`.
    pub fn to_filter(&self, now: DateTime<Utc>) -> Result<StoreFilter, String> {
        let index_type = match &self.index_type {
            Some(t) => Some(t.parse::<SignatureType>().map_err(|e| e.to_string())?),
            None => None,
        };
        let signature = match (&self.value, self.port) {
            (Some(_), Some(_)) => return Err("value and port cannot be combined".into()),
            // type=ip with a CIDR value asks for the IPs inside that block
            (Some(v), None) if index_type == Some(SignatureType::Ip) && v.contains('/') => {
                Some(parse_signature(v, Some(SignatureType::Subnet)).map_err(|e| e.to_string())?)
            }
            (Some(v), None) => Some(parse_signature(v, index_type).map_err(|e| e.to_string())?),
            (None, Some(p)) => Some(Signature { kind: SignatureType::Port, value: p.to_string() }),
            (None, None) => None,
        };
        let window = match (&self.last, &self.from, &self.to) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => return Err("last cannot be combined with from or to".into()),
            (Some(span), None, None) => TimeWindow::between(now - parse_span(span)?, now).map_err(|e| e.to_string())?,
            (None, from, to) => {
                let from = from.as_deref().map(|f| parse_time("from", f)).transpose()?;
                let to = to.as_deref().map(|t| parse_time("to", t)).transpose()?;
                TimeWindow::new(from, to).map_err(|e| e.to_string())?
            }
        };
        let sources = match &self.source {
            Some(list) => Some(
                list.split(',')
                    .map(|s| s.trim().parse::<SourceId>().map_err(|e| e.to_string()))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let limit = match self.limit {
            Some(n) => Some(NonZeroUsize::new(n).ok_or("limit must be at least 1")?),
            None => None,
        };
        let filter = StoreFilter { index_type, signature, window, sources, limit };
        filter.validate().map_err(|e| e.to_string())?;
        Ok(filter)
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
    fn last_day_is_anchored_at_now() {
        let q = QueryParams { index_type: Some("ip".into()), last: Some("24h".into()), ..Default::default() };
        let f = q.to_filter(now()).unwrap();
        assert_eq!(f.window, TimeWindow::between(Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap(), now()).unwrap());
        assert_eq!(f.index_type, Some(SignatureType::Ip));
    }

    #[test]
    fn port_becomes_a_port_signature() {
        let f = QueryParams { port: Some(9000), ..Default::default() }.to_filter(now()).unwrap();
        assert_eq!(f.signature.unwrap().port(), Some(9000));
    }

    #[test]
    fn ip_type_with_a_block_means_ips_inside_it() {
        let q = QueryParams { index_type: Some("ip".into()), value: Some("10.1.3.0/24".into()), ..Default::default() };
        let f = q.to_filter(now()).unwrap();
        assert_eq!(f.index_type, Some(SignatureType::Ip));
        assert_eq!(f.signature.unwrap().kind, SignatureType::Subnet);
    }

    #[test]
    fn contradictions_are_rejected() {
        let bad = [
            QueryParams { value: Some("1.2.3.4".into()), port: Some(1), ..Default::default() },
            QueryParams { last: Some("1d".into()), from: Some("2023-01-01".into()), ..Default::default() },
            QueryParams { last: Some("1y".into()), ..Default::default() },
            QueryParams { limit: Some(0), ..Default::default() },
            QueryParams { source: Some("abuse-url,nowhere".into()), ..Default::default() },
            QueryParams { from: Some("2023-01-02".into()), to: Some("2023-01-01".into()), ..Default::default() },
            QueryParams { index_type: Some("url".into()), value: Some("1.2.3.4".into()), ..Default::default() },
        ];
        for q in bad {
            assert!(q.to_filter(now()).is_err(), "{q:?}");
        }
    }

    proptest::proptest! {
        #[test]
        fn any_accepted_query_is_a_valid_filter(
            kind in proptest::option::of("ip|subnet|url|email|hash|port|bogus"),
            value in proptest::option::of("[0-9a-zA-Z./@:]{1,20}"),
            port in proptest::option::of(proptest::num::u16::ANY),
            last in proptest::option::of("[0-9]{1,4}[mhdwy]"),
            limit in proptest::option::of(0usize..100),
        ) {
            let q = QueryParams { index_type: kind, value, port, last, limit, ..Default::default() };
            if let Ok(f) = q.to_filter(now()) {
                proptest::prop_assert!(f.validate().is_ok());
                if let Some(to) = f.window.to_date {
                    proptest::prop_assert!(to <= now());
                }
            }
        }
    }
}
