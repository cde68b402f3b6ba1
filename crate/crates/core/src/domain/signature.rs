//! Signature parsing and normalization.
//!
//! Untyped input is classified by trying each kind in a fixed order
//! (IP, Subnet, Port, Hash, Email, URL); the first kind that validates wins.

use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Kind of indicator a signature carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignatureType {
    Ip,
    Subnet,
    Email,
    Hash,
    Url,
    Port,
}

impl SignatureType {
    pub const ALL: [SignatureType; 6] = [
        SignatureType::Ip,
        SignatureType::Subnet,
        SignatureType::Email,
        SignatureType::Hash,
        SignatureType::Url,
        SignatureType::Port,
    ];

    /// Order in which untyped values are tried.
    pub const INFERENCE_ORDER: [SignatureType; 6] = [
        SignatureType::Ip,
        SignatureType::Subnet,
        SignatureType::Port,
        SignatureType::Hash,
        SignatureType::Email,
        SignatureType::Url,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SignatureType::Ip => "ip",
            SignatureType::Subnet => "subnet",
            SignatureType::Email => "email",
            SignatureType::Hash => "hash",
            SignatureType::Url => "url",
            SignatureType::Port => "port",
        }
    }
}

impl fmt::Display for SignatureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignatureType {
    type Err = SignatureError;

    /// Accepts the serialized names plus a few common aliases (`ipv4`, `cidr`, `md5`, ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let kind = match lower.as_str() {
            "ip" | "ipv4" | "ipv6" | "ip_address" | "ip address" => SignatureType::Ip,
            "subnet" | "cidr" | "network" => SignatureType::Subnet,
            "email" | "e-mail" | "email_address" => SignatureType::Email,
            "hash" | "md5" | "sha1" | "sha256" | "filehash" => SignatureType::Hash,
            "url" | "uri" | "domain" | "hostname" => SignatureType::Url,
            "port" | "tcp_port" => SignatureType::Port,
            _ => return Err(SignatureError::UnknownType(s.to_string())),
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignatureError {
    #[error("`{0}` is not a recognizable signature")]
    UnparseableSignature(String),
    #[error("`{raw}` is not a valid {hint} signature")]
    HintMismatch { raw: String, hint: SignatureType },
    #[error("unknown signature type `{0}`")]
    UnknownType(String),
}

/// A validated, normalized indicator value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub kind: SignatureType,
    pub value: String,
}

impl Signature {
    /// Address of an IP signature.
    pub fn ip(&self) -> Option<IpAddr> {
        match self.kind {
            SignatureType::Ip => self.value.parse().ok(),
            _ => None,
        }
    }

    pub fn cidr(&self) -> Option<Cidr> {
        match self.kind {
            SignatureType::Subnet => Cidr::parse(&self.value),
            _ => None,
        }
    }

    pub fn port(&self) -> Option<u16> {
        match self.kind {
            SignatureType::Port => self.value.parse().ok(),
            _ => None,
        }
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind, self.value)
    }
}

/// Parses and normalizes a signature, inferring its kind when `hint` is absent.
pub fn parse_signature(raw: &str, hint: Option<SignatureType>) -> Result<Signature, SignatureError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(SignatureError::UnparseableSignature(raw.to_string()));
    }
    match hint {
        Some(kind) => normalize_as(trimmed, kind)
            .map(|value| Signature { kind, value })
            .ok_or_else(|| SignatureError::HintMismatch {
                raw: raw.to_string(),
                hint: kind,
            }),
        None => SignatureType::INFERENCE_ORDER
            .iter()
            .find_map(|&kind| normalize_as(trimmed, kind).map(|value| Signature { kind, value }))
            .ok_or_else(|| SignatureError::UnparseableSignature(raw.to_string())),
    }
}

fn normalize_as(raw: &str, kind: SignatureType) -> Option<String> {
    match kind {
        SignatureType::Ip => normalize_ip(raw),
        SignatureType::Subnet => Cidr::parse(raw).map(|c| c.to_string()),
        SignatureType::Port => normalize_port(raw),
        SignatureType::Hash => normalize_hash(raw),
        SignatureType::Email => normalize_email(raw),
        SignatureType::Url => normalize_url(raw),
    }
}

fn normalize_ip(raw: &str) -> Option<String> {
    raw.parse::<IpAddr>().ok().map(|ip| ip.to_string())
}

fn normalize_port(raw: &str) -> Option<String> {
    if raw.is_empty() || raw.len() > 5 || !raw.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if raw.len() > 1 && raw.starts_with('0') {
        return None;
    }
    raw.parse::<u16>().ok().map(|p| p.to_string())
}

fn normalize_hash(raw: &str) -> Option<String> {
    if matches!(raw.len(), 32 | 40 | 64) && raw.bytes().all(|b| b.is_ascii_hexdigit()) {
        Some(raw.to_ascii_lowercase())
    } else {
        None
    }
}

fn normalize_email(raw: &str) -> Option<String> {
    let (local, domain) = raw.split_once('@')?;
    if local.is_empty() || domain.is_empty() || domain.contains('@') {
        return None;
    }
    if raw.chars().any(|c| c.is_whitespace() || c.is_control() || matches!(c, '/' | ':' | '<' | '>' | ',' | ';')) {
        return None;
    }
    Some(raw.to_lowercase())
}

fn normalize_url(raw: &str) -> Option<String> {
    if raw.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return None;
    }
    let (scheme, rest, explicit_scheme) = match raw.find("://") {
        Some(idx) => {
            let scheme = &raw[..idx];
            let valid = !scheme.is_empty()
                && scheme.starts_with(|c: char| c.is_ascii_alphabetic())
                && scheme.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'));
            if !valid {
                return None;
            }
            (scheme.to_ascii_lowercase(), &raw[idx + 3..], true)
        }
        None => ("http".to_string(), raw, false),
    };
    let split = rest.find(['/', '?', '#']).unwrap_or(rest.len());
    let (authority, tail) = rest.split_at(split);
    // Userinfo is not an expected part of an indicator URL and makes the host ambiguous.
    if authority.is_empty() || authority.contains('@') {
        return None;
    }
    let host_end = if authority.starts_with('[') {
        authority.find(']')? + 1
    } else {
        authority.rfind(':').unwrap_or(authority.len())
    };
    let (host, port) = authority.split_at(host_end);
    if host.is_empty() {
        return None;
    }
    if !port.is_empty() {
        let digits = &port[1..];
        if digits.is_empty() || digits.len() > 5 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse::<u16>().ok()?;
    }
    if let Some(inner) = host.strip_prefix('[') {
        inner.strip_suffix(']')?.parse::<std::net::Ipv6Addr>().ok()?;
    } else {
        let host_ok = host
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_'))
            && !host.starts_with('.')
            && !host.ends_with("..");
        if !host_ok {
            return None;
        }
        // Without a scheme, require something that looks like a domain name.
        if !explicit_scheme && !host.contains('.') {
            return None;
        }
        if !explicit_scheme && host.split('.').all(|label| label.bytes().all(|b| b.is_ascii_digit())) {
            return None;
        }
    }
    Some(format!("{}://{}{}", scheme, authority.to_ascii_lowercase(), tail))
}

/// Port number embedded in a URL value, if one is written explicitly.
pub fn url_port(value: &str) -> Option<u16> {
    let rest = value.split_once("://").map(|(_, r)| r).unwrap_or(value);
    let authority = &rest[..rest.find(['/', '?', '#']).unwrap_or(rest.len())];
    let after_host = if authority.starts_with('[') {
        &authority[authority.find(']')? + 1..]
    } else {
        &authority[authority.rfind(':')?..]
    };
    after_host.strip_prefix(':')?.parse().ok()
}

/// CIDR block with host bits zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cidr {
    pub network: IpAddr,
    pub prefix: u8,
}

impl Cidr {
    pub fn parse(raw: &str) -> Option<Cidr> {
        let (addr, prefix) = raw.trim().split_once('/')?;
        if prefix.is_empty() || prefix.len() > 3 || !prefix.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let prefix: u8 = prefix.parse().ok()?;
        let ip: IpAddr = addr.parse().ok()?;
        let max = if ip.is_ipv4() { 32 } else { 128 };
        if prefix > max {
            return None;
        }
        Some(Cidr {
            network: mask(ip, prefix),
            prefix,
        })
    }

    pub fn contains(&self, ip: IpAddr) -> bool {
        ip.is_ipv4() == self.network.is_ipv4() && mask(ip, self.prefix) == self.network
    }

    /// True when `other` lies entirely inside this block.
    pub fn covers(&self, other: &Cidr) -> bool {
        other.prefix >= self.prefix && self.contains(other.network)
    }

    /// Inclusive address range as `(family, low, high)` keys, v4 family 4 and v6 family 6.
    pub fn key_range(&self) -> ((u8, u128), (u8, u128)) {
        let (family, bits) = match self.network {
            IpAddr::V4(_) => (4u8, 32u32),
            IpAddr::V6(_) => (6u8, 128u32),
        };
        let low = ip_key(self.network).1;
        let host_bits = bits - u32::from(self.prefix);
        let span = if host_bits >= 128 { u128::MAX } else { (1u128 << host_bits) - 1 };
        ((family, low), (family, low | span))
    }
}

impl fmt::Display for Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network, self.prefix)
    }
}

/// Sortable key for an address: family tag plus numeric value.
pub fn ip_key(ip: IpAddr) -> (u8, u128) {
    match ip {
        IpAddr::V4(v4) => (4, u128::from(u32::from(v4))),
        IpAddr::V6(v6) => (6, u128::from(v6)),
    }
}

fn mask(ip: IpAddr, prefix: u8) -> IpAddr {
    match ip {
        IpAddr::V4(v4) => {
            let bits = u32::from(v4);
            let m = if prefix == 0 { 0 } else { u32::MAX << (32 - u32::from(prefix)) };
            IpAddr::V4((bits & m).into())
        }
        IpAddr::V6(v6) => {
            let bits = u128::from(v6);
            let m = if prefix == 0 { 0 } else { u128::MAX << (128 - u32::from(prefix)) };
            IpAddr::V6((bits & m).into())
        }
    }
}
