//! Loading a bundle directory into an [`AnalysisBundle`].

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::attribution::{filter_app_traffic, ATTRIBUTION_SLACK};
use super::classify::{classify_protocol, parse_sni, ProtocolClass};
use super::packet::{parse_pcap, Transport};
use super::stream::{reassemble_streams, FlowSkeleton};
use super::{http, normalize_path, AnalysisBundle, DecryptedHttpRecord, FileOp, FileOpKind, Flow, HookedTuple, HttpRequest, HttpResponse};
use crate::cryptolog::CipherEvent;
use crate::error::{Error, Result};
use crate::needles::PiiProfile;

pub const CAPTURE_FILE: &str = "capture.pcap";
pub const FLOWS_FILE: &str = "flows.jsonl";
pub const CIPHERLOG_FILE: &str = "cipherlog.jsonl";
pub const FILEOPS_FILE: &str = "fileops.jsonl";
pub const PROFILE_FILE: &str = "profile.json";
pub const TUPLES_FILE: &str = "tuples.jsonl";
pub const PACKAGE_DIR: &str = "package";

/// `profile.json`: run identifiers plus the PII profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDocument {
    pub app_id: String,
    pub run_id: String,
    pub device_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_version: Option<String>,
    #[serde(flatten)]
    pub profile: PiiProfile,
}

/// One line of `flows.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLogRecord {
    pub ts: f64,
    pub client: SocketAddr,
    pub server: SocketAddr,
    pub request: HttpRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<HttpResponse>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub datagrams: usize,
    pub flows: usize,
    pub decrypted_http: usize,
    pub cipher_events: usize,
    pub file_ops: usize,
    pub hooked_tuples: usize,
    pub package_blobs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub bundle: AnalysisBundle,
    pub counts: RecordCounts,
}

fn read_mandatory(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::MissingFile(name.to_string()));
    }
    fs::read(&path).map_err(|e| Error::io(path, e))
}

fn parse_jsonl<T: DeserializeOwned>(name: &str, bytes: &[u8]) -> Result<Vec<(usize, T)>> {
    let text = String::from_utf8_lossy(bytes);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|source| Error::MalformedRecord {
            file: name.to_string(),
            line: i + 1,
            source,
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn sort_by_ts<T>(items: &mut [T], ts: impl Fn(&T) -> f64, what: &str, warnings: &mut Vec<String>) {
    if items.windows(2).any(|w| ts(&w[0]) > ts(&w[1])) {
        warnings.push(format!("{what} were not in timestamp order; sorted"));
        items.sort_by(|a, b| ts(a).total_cmp(&ts(b)));
    }
}

fn read_package(dir: &Path) -> Result<Option<BTreeMap<String, Vec<u8>>>> {
    let root = dir.join(PACKAGE_DIR);
    if !root.is_dir() {
        return Ok(None);
    }
    let mut blobs = BTreeMap::new();
    let mut stack = vec![root.clone()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(&root)
                    .unwrap_or(&path)
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                blobs.insert(rel, bytes);
            }
        }
    }
    Ok(Some(blobs))
}

fn endpoint_host(server: SocketAddr) -> String {
    server.to_string()
}

fn skeleton_to_flow(s: FlowSkeleton) -> Option<Flow> {
    let (Some(transport), Some(client), Some(server)) = (s.transport, s.client, s.server) else {
        return None;
    };
    let protocol_class = classify_protocol(&s);
    let sni = (protocol_class == ProtocolClass::TlsOpaque)
        .then(|| parse_sni(&s.payload_out))
        .flatten();
    let host = match protocol_class {
        ProtocolClass::Http => http::parse_messages(&s.payload_out, true)
            .first()
            .and_then(|m| m.header("host").map(|h| h.trim().to_ascii_lowercase()))
            .unwrap_or_else(|| endpoint_host(server)),
        ProtocolClass::TlsOpaque => sni.clone().unwrap_or_else(|| endpoint_host(server)),
        _ => endpoint_host(server),
    };
    Some(Flow {
        flow_id: 0,
        transport,
        client,
        server,
        first_ts: s.first_ts,
        last_ts: s.last_ts,
        protocol_class,
        payload_out: s.payload_out,
        payload_in: s.payload_in,
        host,
        sni,
        app_attributed: false,
        truncated: s.truncated,
        out_messages: s.out_messages,
    })
}

/// Picks the TCP flow carrying a decrypted record: same endpoints, and the
/// one whose lifetime covers the record (or starts nearest to it).
fn link_record(flows: &[Flow], rec: &FlowLogRecord) -> Option<usize> {
    let candidates = flows.iter().enumerate().filter(|(_, f)| {
        f.transport == Transport::Tcp
            && ((f.client == rec.client && f.server == rec.server) || (f.client == rec.server && f.server == rec.client))
    });
    candidates
        .min_by(|(_, a), (_, b)| {
            let score = |f: &Flow| {
                if f.first_ts - ATTRIBUTION_SLACK <= rec.ts && rec.ts <= f.last_ts + ATTRIBUTION_SLACK {
                    0.0
                } else {
                    (f.first_ts - rec.ts).abs() + 1.0
                }
            };
            score(a).total_cmp(&score(b))
        })
        .map(|(i, _)| i)
}

/// Reads and normalizes one bundle directory.
pub fn ingest_bundle(dir: &Path) -> Result<IngestOutcome> {
    let profile_bytes = read_mandatory(dir, PROFILE_FILE)?;
    let capture = read_mandatory(dir, CAPTURE_FILE)?;
    let flow_log = read_mandatory(dir, FLOWS_FILE)?;
    let cipher_log = read_mandatory(dir, CIPHERLOG_FILE)?;
    let file_log = read_mandatory(dir, FILEOPS_FILE)?;
    let tuple_log = read_mandatory(dir, TUPLES_FILE)?;

    let doc: ProfileDocument = serde_json::from_slice(&profile_bytes).map_err(|source| Error::MalformedDocument {
        file: PROFILE_FILE.into(),
        source,
    })?;
    doc.profile.validate()?;

    let mut warnings = Vec::new();
    let datagrams = if capture.is_empty() {
        Vec::new()
    } else {
        let parsed = parse_pcap(&capture)?;
        warnings.extend(parsed.warnings);
        parsed.datagrams
    };
    let assembly = reassemble_streams(&datagrams);
    warnings.extend(assembly.warnings);
    let mut flows: Vec<Flow> = assembly.flows.into_iter().filter_map(skeleton_to_flow).collect();

    let mut records: Vec<FlowLogRecord> = parse_jsonl(FLOWS_FILE, &flow_log)?.into_iter().map(|(_, r)| r).collect();
    sort_by_ts(&mut records, |r| r.ts, "decrypted HTTP records", &mut warnings);
    let mut linked = Vec::new();
    for rec in records {
        let idx = match link_record(&flows, &rec) {
            Some(i) if flows[i].protocol_class == ProtocolClass::Http => {
                warnings.push(format!(
                    "decrypted record {} {} duplicates a plaintext HTTP flow; ignored",
                    rec.request.method, rec.request.url
                ));
                continue;
            }
            Some(i) => i,
            None => {
                // the proxy saw the exchange but the capture did not
                flows.push(Flow {
                    flow_id: 0,
                    transport: Transport::Tcp,
                    client: rec.client,
                    server: rec.server,
                    first_ts: rec.ts,
                    last_ts: rec.ts,
                    protocol_class: ProtocolClass::HttpsDecrypted,
                    payload_out: Vec::new(),
                    payload_in: Vec::new(),
                    host: String::new(),
                    sni: None,
                    app_attributed: false,
                    truncated: false,
                    out_messages: Vec::new(),
                });
                flows.len() - 1
            }
        };
        let f = &mut flows[idx];
        if f.protocol_class != ProtocolClass::HttpsDecrypted {
            f.protocol_class = ProtocolClass::HttpsDecrypted;
            f.host.clear();
        }
        f.first_ts = f.first_ts.min(rec.ts);
        f.last_ts = f.last_ts.max(rec.ts);
        linked.push((idx, rec));
    }

    // stable renumbering by start time
    let mut order: Vec<usize> = (0..flows.len()).collect();
    order.sort_by(|&a, &b| flows[a].first_ts.total_cmp(&flows[b].first_ts));
    let mut new_id = vec![0; flows.len()];
    for (id, &old) in order.iter().enumerate() {
        new_id[old] = id;
    }
    let mut decrypted_http: Vec<DecryptedHttpRecord> = linked
        .into_iter()
        .map(|(idx, rec)| DecryptedHttpRecord {
            flow_ref: new_id[idx],
            ts: rec.ts,
            request: rec.request,
            response: rec.response,
        })
        .collect();
    let mut slots: Vec<Option<Flow>> = flows.into_iter().map(Some).collect();
    let mut flows: Vec<Flow> = order.iter().filter_map(|&old| slots[old].take()).collect();
    for (id, f) in flows.iter_mut().enumerate() {
        f.flow_id = id;
        if f.protocol_class == ProtocolClass::HttpsDecrypted && f.host.is_empty() {
            f.host = decrypted_http
                .iter()
                .find(|r| r.flow_ref == id)
                .and_then(DecryptedHttpRecord::host)
                .or_else(|| f.sni.clone())
                .unwrap_or_else(|| endpoint_host(f.server));
        }
    }
    decrypted_http.sort_by(|a, b| a.ts.total_cmp(&b.ts).then(a.flow_ref.cmp(&b.flow_ref)));

    let mut cipher_events = Vec::new();
    for (line, ev) in parse_jsonl::<CipherEvent>(CIPHERLOG_FILE, &cipher_log)? {
        ev.check().map_err(|reason| Error::InvalidRecord {
            file: CIPHERLOG_FILE.into(),
            line,
            reason,
        })?;
        cipher_events.push(ev);
    }
    sort_by_ts(&mut cipher_events, |e| e.ts, "cipher events", &mut warnings);

    let mut file_ops = Vec::new();
    for (line, mut op) in parse_jsonl::<FileOp>(FILEOPS_FILE, &file_log)? {
        let needs_buffer = matches!(op.kind, FileOpKind::Read | FileOpKind::Write);
        let forbids_buffer = matches!(op.kind, FileOpKind::Open | FileOpKind::Remove);
        if (needs_buffer && op.buffer.is_none()) || (forbids_buffer && op.buffer.is_some()) {
            return Err(Error::InvalidRecord {
                file: FILEOPS_FILE.into(),
                line,
                reason: format!("{:?} with buffer presence {}", op.kind, op.buffer.is_some()),
            });
        }
        op.path = normalize_path(&op.path);
        op.target = op.target.as_deref().map(normalize_path);
        file_ops.push(op);
    }
    sort_by_ts(&mut file_ops, |o| o.ts, "file operations", &mut warnings);

    let hooked_tuples: Vec<HookedTuple> = parse_jsonl(TUPLES_FILE, &tuple_log)?.into_iter().map(|(_, t)| t).collect();
    filter_app_traffic(&mut flows, &hooked_tuples, ATTRIBUTION_SLACK);

    let package_blobs = read_package(dir)?;
    if package_blobs.is_none() {
        warnings.push("no package/ directory: hardcoded-key search disabled".into());
    }

    let counts = RecordCounts {
        datagrams: datagrams.len(),
        flows: flows.len(),
        decrypted_http: decrypted_http.len(),
        cipher_events: cipher_events.len(),
        file_ops: file_ops.len(),
        hooked_tuples: hooked_tuples.len(),
        package_blobs: package_blobs.as_ref().map(BTreeMap::len),
    };
    let bundle = AnalysisBundle {
        app_id: doc.app_id,
        run_id: doc.run_id,
        device_id: doc.device_id,
        app_version: doc.app_version,
        flows,
        decrypted_http,
        cipher_events,
        file_ops,
        profile: doc.profile,
        package_blobs,
        hooked_tuples,
        warnings,
    };
    Ok(IngestOutcome { bundle, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_empty(dir: &Path) {
        fs::write(
            dir.join(PROFILE_FILE),
            r#"{"app_id":"com.example","run_id":"r1","device_id":"d1","entries":[]}"#,
        )
        .unwrap();
        for f in [CAPTURE_FILE, FLOWS_FILE, CIPHERLOG_FILE, FILEOPS_FILE, TUPLES_FILE] {
            fs::write(dir.join(f), b"").unwrap();
        }
    }

    #[test]
    fn empty_bundle() {
        let dir = tempfile::tempdir().unwrap();
        write_empty(dir.path());
        let out = ingest_bundle(dir.path()).unwrap();
        assert!(out.bundle.flows.is_empty());
        assert!(out.bundle.cipher_events.is_empty());
        assert!(out.bundle.package_blobs.is_none());
        assert_eq!(out.counts.package_blobs, None);
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_empty(dir.path());
        fs::remove_file(dir.path().join(CIPHERLOG_FILE)).unwrap();
        match ingest_bundle(dir.path()) {
            Err(Error::MissingFile(name)) => assert_eq!(name, CIPHERLOG_FILE),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        write_empty(dir.path());
        fs::write(
            dir.path().join(FILEOPS_FILE),
            "{\"ts\":1,\"kind\":\"open\",\"path\":\"/sdcard/a\"}\n{oops\n",
        )
        .unwrap();
        match ingest_bundle(dir.path()) {
            Err(Error::MalformedRecord { file, line, .. }) => {
                assert_eq!(file, FILEOPS_FILE);
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decrypted_record_without_capture_gets_its_own_flow() {
        let dir = tempfile::tempdir().unwrap();
        write_empty(dir.path());
        fs::write(
            dir.path().join(FLOWS_FILE),
            r#"{"ts":5.0,"client":"10.0.0.2:5555","server":"93.184.216.34:443","request":{"method":"GET","url":"https://cdn.example.com/a","headers":[["Host","cdn.example.com"]],"body":""}}"#,
        )
        .unwrap();
        fs::create_dir(dir.path().join(PACKAGE_DIR)).unwrap();
        fs::write(dir.path().join(PACKAGE_DIR).join("classes.dex"), b"dex").unwrap();
        let b = ingest_bundle(dir.path()).unwrap().bundle;
        assert_eq!(b.flows.len(), 1);
        assert_eq!(b.flows[0].protocol_class, ProtocolClass::HttpsDecrypted);
        assert_eq!(b.flows[0].host, "cdn.example.com");
        assert_eq!(b.decrypted_http[0].flow_ref, b.flows[0].flow_id);
        assert_eq!(b.package_blobs.unwrap().len(), 1);
    }
}
