//! Passwords, tokens and session ids carried in payloads, and tokens that
//! move from HTTPS to a weaker channel.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{FlowDirection, Location, LocationKind, RunContext};
use crate::codec::{digest_hex, mask};
use crate::needles::{apply_chain, transform_chains, Transform};
use crate::search::Dictionary;

/// Shortest value accepted as a credential.
pub const MIN_CREDENTIAL_LEN: usize = 8;
/// Fewest distinct characters accepted in a credential value.
pub const MIN_DISTINCT_CHARS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CredentialKind {
    Password,
    Token,
    SessionId,
}

/// Where in the payload a credential was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    #[serde(rename = "http_header")]
    Header,
    Cookie,
    Query,
    Json,
    Xml,
    #[serde(rename = "form_urlencoded")]
    Form,
    #[serde(rename = "form_data")]
    Multipart,
    /// `key=value` / `"key": "value"` spotted without a parseable structure.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredentialFinding {
    pub app_id: String,
    pub run_id: String,
    pub device_id: String,
    pub kind: CredentialKind,
    pub key_name: String,
    pub value_digest: String,
    pub evidence: String,
    pub structure: Structure,
    pub location: Location,
    pub host: String,
    pub ts: f64,
    pub custom_encrypted: bool,
    pub encryption_chain: Vec<usize>,
    /// The value itself; kept in memory for cross-channel search only.
    #[serde(skip)]
    pub secret: String,
}

/// Kind implied by a field name, if it names a credential.
pub fn credential_kind(name: &str) -> Option<CredentialKind> {
    let n = name.trim().to_ascii_lowercase().replace('-', "_");
    let n = n.strip_prefix("x_").unwrap_or(&n);
    match n {
        "password" | "passwd" | "pwd" => return Some(CredentialKind::Password),
        "session" | "session_id" | "sid" => return Some(CredentialKind::SessionId),
        "token" | "access_token" | "auth" | "authorization" | "jwt" | "api_key" | "secret" => return Some(CredentialKind::Token),
        _ => {}
    }
    if n.ends_with("password") || n.ends_with("passwd") {
        Some(CredentialKind::Password)
    } else if n.ends_with("sessionid") || n.ends_with("session_id") || n.ends_with("_sid") {
        Some(CredentialKind::SessionId)
    } else if n.ends_with("token") || n.ends_with("_secret") || n.ends_with("apikey") || n.ends_with("api_key") {
        Some(CredentialKind::Token)
    } else {
        None
    }
}

/// Long and varied enough to be a secret rather than a flag or counter.
pub fn is_credential_value(v: &str) -> bool {
    v.chars().count() >= MIN_CREDENTIAL_LEN && v.chars().collect::<HashSet<_>>().len() >= MIN_DISTINCT_CHARS
}

fn raw_pair_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"["']?([A-Za-z_][A-Za-z0-9_.\-]{1,40})["']?\s*[:=]\s*["']?([^"'&\s,;}<>]{8,})"#).expect("valid regex")
    })
}

fn xml_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<([A-Za-z_][\w:.\-]*)(?:\s[^>]*)?>([^<]*)</([A-Za-z_][\w:.\-]*)>").expect("valid regex"))
}

type Pair = (String, String, Structure);

fn json_pairs(v: &serde_json::Value, out: &mut Vec<Pair>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                match v {
                    serde_json::Value::String(s) => out.push((k.clone(), s.clone(), Structure::Json)),
                    serde_json::Value::Number(n) => out.push((k.clone(), n.to_string(), Structure::Json)),
                    other => json_pairs(other, out),
                }
            }
        }
        serde_json::Value::Array(items) => items.iter().for_each(|i| json_pairs(i, out)),
        _ => {}
    }
}

fn form_pairs(text: &str, structure: Structure) -> Vec<Pair> {
    form_urlencoded::parse(text.as_bytes())
        .map(|(k, v)| (k.into_owned(), v.into_owned(), structure))
        .collect()
}

fn multipart_pairs(text: &str) -> Vec<Pair> {
    let mut out = Vec::new();
    let Some(boundary) = text.lines().next().filter(|l| l.starts_with("--")) else {
        return out;
    };
    for part in text.split(boundary.trim_end()) {
        let Some((head, body)) = part.split_once("\r\n\r\n").or_else(|| part.split_once("\n\n")) else {
            continue;
        };
        let name = head
            .split(';')
            .find_map(|p| p.trim().strip_prefix("name=").map(|n| n.trim_matches('"').to_string()));
        if let Some(name) = name {
            out.push((name, body.trim_end_matches(['\r', '\n', '-']).to_string(), Structure::Multipart));
        }
    }
    out
}

fn raw_pairs(text: &str) -> Vec<Pair> {
    raw_pair_regex()
        .captures_iter(text)
        .map(|c| (c[1].to_string(), c[2].to_string(), Structure::Raw))
        .collect()
}

fn looks_like_form(text: &str) -> bool {
    !text.is_empty() && !text.contains(char::is_whitespace) && text.split('&').all(|p| p.contains('='))
}

/// Key/value pairs of a body or raw payload. Falls back to a loose raw
/// scan when no structure parses.
fn body_pairs(bytes: &[u8], content_type: Option<&str>) -> Vec<Pair> {
    let text = String::from_utf8_lossy(bytes);
    let trimmed = text.trim();
    let ct = content_type.unwrap_or("").to_ascii_lowercase();
    let mut out = Vec::new();
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(trimmed) {
            json_pairs(&v, &mut out);
            return out;
        }
    } else if trimmed.starts_with('<') {
        for c in xml_regex().captures_iter(trimmed) {
            if c[1] == c[3] {
                out.push((c[1].to_string(), c[2].trim().to_string(), Structure::Xml));
            }
        }
        if !out.is_empty() {
            return out;
        }
    } else if ct.starts_with("multipart/form-data") || trimmed.starts_with("--") {
        out = multipart_pairs(&text);
        if !out.is_empty() {
            return out;
        }
    } else if ct.starts_with("application/x-www-form-urlencoded") || looks_like_form(trimmed) {
        return form_pairs(trimmed, Structure::Form);
    }
    raw_pairs(&text)
}

fn head_pairs(bytes: &[u8], headers: &[(String, String)]) -> Vec<Pair> {
    let mut out = Vec::new();
    let start = String::from_utf8_lossy(bytes.split(|&b| b == b'\n').next().unwrap_or_default()).into_owned();
    if let Some((_, query)) = start.split_whitespace().nth(1).and_then(|t| t.split_once('?')) {
        out.extend(form_pairs(query, Structure::Query));
    }
    for (name, value) in headers {
        let lower = name.to_ascii_lowercase();
        match lower.as_str() {
            "authorization" | "proxy-authorization" => {
                let v = value.trim();
                let v = v.split_once(' ').map(|(_, rest)| rest.trim()).unwrap_or(v);
                out.push((name.clone(), v.to_string(), Structure::Header));
            }
            "cookie" => {
                for kv in value.split(';') {
                    if let Some((k, v)) = kv.trim().split_once('=') {
                        out.push((k.to_string(), v.to_string(), Structure::Cookie));
                    }
                }
            }
            "set-cookie" => {
                if let Some((k, v)) = value.split(';').next().and_then(|kv| kv.trim().split_once('=')) {
                    out.push((k.to_string(), v.to_string(), Structure::Cookie));
                }
            }
            _ => out.push((name.clone(), value.trim().to_string(), Structure::Header)),
        }
    }
    out
}

/// Credentials in every searchable network unit and in every custom
/// plaintext reachable from one. Values equal to a profile password input
/// are reported as passwords whatever their field name.
pub fn extract_credentials(ctx: &RunContext<'_>) -> Vec<CredentialFinding> {
    let b = ctx.bundle;
    let passwords: HashSet<&str> = b.profile.password_inputs().collect();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut emit = |pairs: Vec<Pair>, unit: usize, offset: usize, hay: &[u8], chain: &[usize]| {
        let u = &ctx.units[unit];
        for (key, value, structure) in pairs {
            let value = value.trim().to_string();
            let kind = if passwords.contains(value.as_str()) {
                Some(CredentialKind::Password)
            } else {
                credential_kind(&key)
            };
            let Some(kind) = kind else { continue };
            if !is_credential_value(&value) || !seen.insert((unit, chain.to_vec(), key.clone(), value.clone())) {
                continue;
            }
            let pos = find(hay, value.as_bytes());
            out.push(CredentialFinding {
                app_id: b.app_id.clone(),
                run_id: b.run_id.clone(),
                device_id: b.device_id.clone(),
                kind,
                key_name: key,
                value_digest: digest_hex(value.as_bytes()),
                evidence: match pos {
                    Some(p) => ctx.policy.excerpt(hay, p, value.len()),
                    None => mask(value.as_bytes(), super::MASK_VISIBLE),
                },
                structure,
                location: ctx.location(unit, if chain.is_empty() { pos.unwrap_or(0) } else { offset }),
                host: u.host.clone(),
                ts: u.ts,
                custom_encrypted: !chain.is_empty(),
                encryption_chain: chain.iter().map(|&o| ctx.ops[o].op_id).collect(),
                secret: value,
            });
        }
    };
    for (i, u) in ctx.units.iter().enumerate() {
        if u.opaque || !u.is_network() {
            continue;
        }
        let pairs = if u.is_head() { head_pairs(&u.bytes, &u.headers) } else { body_pairs(&u.bytes, u.content_type.as_deref()) };
        emit(pairs, i, 0, &u.bytes, &[]);
    }
    for v in ctx.views {
        if !ctx.units[v.unit].is_network() {
            continue;
        }
        emit(body_pairs(&v.bytes, None), v.unit, v.unit_offset, &v.bytes, &v.chain);
    }
    out
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    hay.windows(needle.len()).position(|w| w == needle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sighting {
    pub kind: LocationKind,
    pub host: String,
    pub ts: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_id: Option<usize>,
    pub direction: FlowDirection,
    pub custom_encrypted: bool,
    /// Transform chain the value was found under; empty when verbatim.
    pub transform: Vec<Transform>,
}

/// A credential first seen over HTTPS that later travels over plain HTTP
/// or a non-HTTP channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DowngradeReport {
    pub app_id: String,
    pub run_id: String,
    pub device_id: String,
    pub kind: CredentialKind,
    pub key_name: String,
    pub value_digest: String,
    pub first_seen: Sighting,
    pub later_seen: Sighting,
}

fn is_weak_channel(kind: LocationKind) -> bool {
    matches!(kind, LocationKind::Http | LocationKind::NonHttp)
}

/// One report per credential value whose earliest sighting is on HTTPS and
/// that shows up afterwards, verbatim, transformed or inside a custom
/// plaintext, on HTTP or a non-HTTP channel.
pub fn detect_token_downgrade(ctx: &RunContext<'_>, credentials: &[CredentialFinding]) -> Vec<DowngradeReport> {
    let mut first: BTreeMap<&str, &CredentialFinding> = BTreeMap::new();
    for c in credentials {
        first
            .entry(c.secret.as_str())
            .and_modify(|cur| {
                if c.ts < cur.ts {
                    *cur = c;
                }
            })
            .or_insert(c);
    }
    let chains = transform_chains();
    let mut reports = Vec::new();
    for (secret, origin) in first {
        if origin.location.kind != LocationKind::Https || origin.custom_encrypted {
            continue;
        }
        let dict = Dictionary::new(
            chains
                .iter()
                .map(|c| (apply_chain(c, secret.as_bytes()), c.clone()))
                .filter(|(p, _)| p.len() >= MIN_CREDENTIAL_LEN),
        );
        let mut best: Option<(f64, usize, Sighting)> = None;
        let mut consider = |unit: usize, hay: &[u8], custom: bool, order: usize| {
            let u = &ctx.units[unit];
            if !is_weak_channel(u.kind) || u.opaque || u.ts < origin.ts {
                return;
            }
            let Some(hit) = dict.find_all(hay).into_iter().next() else { return };
            if best.as_ref().is_some_and(|(ts, o, _)| (*ts, *o) <= (u.ts, order)) {
                return;
            }
            best = Some((
                u.ts,
                order,
                Sighting {
                    kind: u.kind,
                    host: u.host.clone(),
                    ts: u.ts,
                    flow_id: u.flow_id(),
                    direction: u.direction,
                    custom_encrypted: custom,
                    transform: dict.owners(hit.pattern)[0].clone(),
                },
            ));
        };
        for (i, u) in ctx.units.iter().enumerate() {
            consider(i, &u.bytes, false, i);
        }
        for (j, v) in ctx.views.iter().enumerate() {
            consider(v.unit, &v.bytes, true, ctx.units.len() + j);
        }
        if let Some((_, _, later)) = best {
            reports.push(DowngradeReport {
                app_id: origin.app_id.clone(),
                run_id: origin.run_id.clone(),
                device_id: origin.device_id.clone(),
                kind: origin.kind,
                key_name: origin.key_name.clone(),
                value_digest: origin.value_digest.clone(),
                first_seen: Sighting {
                    kind: origin.location.kind,
                    host: origin.host.clone(),
                    ts: origin.ts,
                    flow_id: origin.location.flow_id,
                    direction: origin.location.direction,
                    custom_encrypted: false,
                    transform: Vec::new(),
                },
                later_seen: later,
            });
        }
    }
    reports
}
