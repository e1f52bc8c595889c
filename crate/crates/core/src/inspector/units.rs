//! Cutting a bundle's app traffic and file writes into searchable units.

use serde::{Deserialize, Serialize};

use super::{FlowDirection, LocationKind};
use crate::ingest::compress::{decompress_payload, CompressionTag, DEFAULT_CAP};
use crate::ingest::http::{self, HttpMessage};
use crate::ingest::{AnalysisBundle, FileOpKind, Flow, ProtocolClass, Transport};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitRef {
    Flow(usize),
    File(String),
}

/// A contiguous byte region with the channel it was observed on.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchUnit {
    pub kind: LocationKind,
    pub direction: FlowDirection,
    pub reference: UnitRef,
    /// e.g. `request[0].head`, `request[0].body.decoded`, `raw`, `write[3]`.
    pub part: String,
    pub host: String,
    pub ts: f64,
    pub bytes: Vec<u8>,
    /// Encrypted transport bytes: only ciphertext matching applies.
    pub opaque: bool,
    /// Header list for head units.
    pub headers: Vec<(String, String)>,
    /// Content type declared for body units.
    pub content_type: Option<String>,
}

impl SearchUnit {
    fn new(kind: LocationKind, direction: FlowDirection, reference: UnitRef, part: String, host: &str, ts: f64, bytes: Vec<u8>) -> Self {
        SearchUnit {
            kind,
            direction,
            reference,
            part,
            host: host.to_string(),
            ts,
            bytes,
            opaque: false,
            headers: Vec::new(),
            content_type: None,
        }
    }

    pub fn flow_id(&self) -> Option<usize> {
        match self.reference {
            UnitRef::Flow(id) => Some(id),
            UnitRef::File(_) => None,
        }
    }

    pub fn path(&self) -> Option<&str> {
        match &self.reference {
            UnitRef::File(p) => Some(p),
            UnitRef::Flow(_) => None,
        }
    }

    pub fn is_head(&self) -> bool {
        self.part.ends_with(".head")
    }

    pub fn is_network(&self) -> bool {
        self.kind != LocationKind::File
    }
}

fn render_head(start_line: &str, headers: &[(String, String)]) -> Vec<u8> {
    let mut out = format!("{start_line}\r\n").into_bytes();
    for (n, v) in headers {
        out.extend_from_slice(format!("{n}: {v}\r\n").as_bytes());
    }
    out.extend_from_slice(b"\r\n");
    out
}

/// Pushes the body unit and, when the body is compressed, its decoded form.
#[allow(clippy::too_many_arguments)]
fn push_body(
    units: &mut Vec<SearchUnit>,
    kind: LocationKind,
    direction: FlowDirection,
    reference: &UnitRef,
    prefix: &str,
    host: &str,
    ts: f64,
    body: &[u8],
    content_type: Option<&str>,
) {
    if body.is_empty() {
        return;
    }
    let mut u = SearchUnit::new(kind, direction, reference.clone(), format!("{prefix}.body"), host, ts, body.to_vec());
    u.content_type = content_type.map(str::to_string);
    units.push(u);
    let (decoded, tag) = decompress_payload(body, DEFAULT_CAP);
    if matches!(tag, CompressionTag::Gzip | CompressionTag::Zlib | CompressionTag::Deflate | CompressionTag::Truncated) {
        let mut d = SearchUnit::new(kind, direction, reference.clone(), format!("{prefix}.body.decoded"), host, ts, decoded);
        d.content_type = content_type.map(str::to_string);
        units.push(d);
    }
}

fn push_messages(units: &mut Vec<SearchUnit>, flow: &Flow, messages: &[HttpMessage], direction: FlowDirection, label: &str) {
    let reference = UnitRef::Flow(flow.flow_id);
    for (i, m) in messages.iter().enumerate() {
        let host = m
            .header("host")
            .map(|h| h.trim().to_ascii_lowercase())
            .unwrap_or_else(|| flow.host.clone());
        let prefix = format!("{label}[{i}]");
        let mut head = SearchUnit::new(
            LocationKind::Http,
            direction,
            reference.clone(),
            format!("{prefix}.head"),
            &host,
            flow.first_ts,
            render_head(&m.start_line, &m.headers),
        );
        head.headers = m.headers.clone();
        units.push(head);
        push_body(units, LocationKind::Http, direction, &reference, &prefix, &host, flow.first_ts, &m.body, m.header("content-type"));
    }
}

fn push_raw(units: &mut Vec<SearchUnit>, flow: &Flow, kind: LocationKind, opaque: bool) {
    let reference = UnitRef::Flow(flow.flow_id);
    for (direction, bytes, label) in [
        (FlowDirection::Outbound, &flow.payload_out, "raw"),
        (FlowDirection::Inbound, &flow.payload_in, "raw_in"),
    ] {
        if bytes.is_empty() {
            continue;
        }
        let mut u = SearchUnit::new(kind, direction, reference.clone(), label.into(), &flow.host, flow.first_ts, bytes.clone());
        u.opaque = opaque;
        units.push(u);
        if opaque {
            continue;
        }
        // compressed payloads, whole or per datagram
        let pieces: Vec<&[u8]> = if flow.transport == Transport::Udp && direction == FlowDirection::Outbound && flow.out_messages.len() > 1 {
            let mut pos = 0;
            flow.out_messages
                .iter()
                .map(|&len| {
                    let end = (pos + len).min(bytes.len());
                    let s = &bytes[pos..end];
                    pos = end;
                    s
                })
                .collect()
        } else {
            vec![bytes.as_slice()]
        };
        let many = pieces.len() > 1;
        for (i, piece) in pieces.into_iter().enumerate() {
            let (decoded, tag) = decompress_payload(piece, DEFAULT_CAP);
            if matches!(tag, CompressionTag::Gzip | CompressionTag::Zlib | CompressionTag::Deflate | CompressionTag::Truncated) {
                let part = if many { format!("{label}.datagram[{i}].decoded") } else { format!("{label}.decoded") };
                units.push(SearchUnit::new(kind, direction, reference.clone(), part, &flow.host, flow.first_ts, decoded));
            }
        }
    }
}

/// Units for every app-attributed flow and every file write of a bundle.
/// Opaque TLS payloads are included (flagged) for ciphertext matching.
pub fn build_units(bundle: &AnalysisBundle) -> Vec<SearchUnit> {
    let mut units = Vec::new();
    for flow in bundle.flows.iter().filter(|f| f.app_attributed) {
        match flow.protocol_class {
            ProtocolClass::Http => {
                let requests = http::parse_messages(&flow.payload_out, true);
                if requests.is_empty() {
                    push_raw(&mut units, flow, LocationKind::Http, false);
                    continue;
                }
                push_messages(&mut units, flow, &requests, FlowDirection::Outbound, "request");
                let responses = http::parse_messages(&flow.payload_in, false);
                push_messages(&mut units, flow, &responses, FlowDirection::Inbound, "response");
            }
            ProtocolClass::HttpsDecrypted => {
                let reference = UnitRef::Flow(flow.flow_id);
                let records = bundle.decrypted_http.iter().filter(|r| r.flow_ref == flow.flow_id);
                for (i, rec) in records.enumerate() {
                    let host = rec.host().unwrap_or_else(|| flow.host.clone());
                    let prefix = format!("request[{i}]");
                    let mut head = SearchUnit::new(
                        LocationKind::Https,
                        FlowDirection::Outbound,
                        reference.clone(),
                        format!("{prefix}.head"),
                        &host,
                        rec.ts,
                        rec.request.head_bytes(),
                    );
                    head.headers = rec.request.headers.clone();
                    units.push(head);
                    push_body(
                        &mut units,
                        LocationKind::Https,
                        FlowDirection::Outbound,
                        &reference,
                        &prefix,
                        &host,
                        rec.ts,
                        &rec.request.body,
                        rec.request.header("content-type"),
                    );
                    if let Some(resp) = &rec.response {
                        let prefix = format!("response[{i}]");
                        let mut head = SearchUnit::new(
                            LocationKind::Https,
                            FlowDirection::Inbound,
                            reference.clone(),
                            format!("{prefix}.head"),
                            &host,
                            rec.ts,
                            resp.head_bytes(),
                        );
                        head.headers = resp.headers.clone();
                        units.push(head);
                        push_body(
                            &mut units,
                            LocationKind::Https,
                            FlowDirection::Inbound,
                            &reference,
                            &prefix,
                            &host,
                            rec.ts,
                            &resp.body,
                            resp.header("content-type"),
                        );
                    }
                }
            }
            ProtocolClass::TlsOpaque => push_raw(&mut units, flow, LocationKind::Https, true),
            ProtocolClass::NonHttp => push_raw(&mut units, flow, LocationKind::NonHttp, false),
        }
    }
    for (i, op) in bundle.file_ops.iter().enumerate() {
        if op.kind != FileOpKind::Write {
            continue;
        }
        if let Some(buf) = &op.buffer {
            let mut u = SearchUnit::new(
                LocationKind::File,
                FlowDirection::Outbound,
                UnitRef::File(op.path.clone()),
                format!("write[{i}]"),
                &op.path,
                op.ts,
                buf.clone(),
            );
            u.opaque = false;
            units.push(u);
            let (decoded, tag) = decompress_payload(buf, DEFAULT_CAP);
            if matches!(tag, CompressionTag::Gzip | CompressionTag::Zlib | CompressionTag::Deflate | CompressionTag::Truncated) {
                units.push(SearchUnit::new(
                    LocationKind::File,
                    FlowDirection::Outbound,
                    UnitRef::File(op.path.clone()),
                    format!("write[{i}].decoded"),
                    &op.path,
                    op.ts,
                    decoded,
                ));
            }
        }
    }
    units
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ProtocolClass;

    fn flow(class: ProtocolClass, out: &[u8]) -> Flow {
        Flow {
            flow_id: 4,
            transport: Transport::Tcp,
            client: "10.0.0.2:5000".parse().unwrap(),
            server: "203.0.113.9:80".parse().unwrap(),
            first_ts: 1.0,
            last_ts: 2.0,
            protocol_class: class,
            payload_out: out.to_vec(),
            payload_in: Vec::new(),
            host: "203.0.113.9:80".into(),
            sni: None,
            app_attributed: true,
            truncated: false,
            out_messages: Vec::new(),
        }
    }

    #[test]
    fn http_messages_become_head_and_body_units() {
        let mut b = AnalysisBundle::empty("a", "r", "d");
        b.flows.push(flow(
            ProtocolClass::Http,
            b"POST /x HTTP/1.1\r\nHost: t.example\r\nContent-Type: application/json\r\nContent-Length: 2\r\n\r\n{}",
        ));
        let units = build_units(&b);
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].part, "request[0].head");
        assert_eq!(units[0].host, "t.example");
        assert_eq!(units[1].bytes, b"{}");
        assert_eq!(units[1].content_type.as_deref(), Some("application/json"));
    }

    #[test]
    fn unattributed_flows_are_skipped() {
        let mut b = AnalysisBundle::empty("a", "r", "d");
        let mut f = flow(ProtocolClass::NonHttp, b"\x00\x01secret");
        f.app_attributed = false;
        b.flows.push(f);
        assert!(build_units(&b).is_empty());
    }

    #[test]
    fn opaque_tls_units_are_flagged() {
        let mut b = AnalysisBundle::empty("a", "r", "d");
        b.flows.push(flow(ProtocolClass::TlsOpaque, b"\x16\x03\x01\x00\x05hello"));
        let units = build_units(&b);
        assert_eq!(units.len(), 1);
        assert!(units[0].opaque);
        assert_eq!(units[0].kind, LocationKind::Https);
    }
}
