//! Bundle ingestion: capture parsing, stream reassembly, protocol
//! classification and app-traffic attribution.

pub mod attribution;
pub mod bundle;
pub mod classify;
pub mod compress;
pub mod http;
pub mod packet;
pub mod pcap;
pub mod stream;

use std::collections::BTreeMap;
use std::net::SocketAddr;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::cryptolog::CipherEvent;
use crate::needles::PiiProfile;
pub use attribution::{filter_app_traffic, ATTRIBUTION_SLACK};
pub use bundle::{ingest_bundle, IngestOutcome, RecordCounts};
pub use classify::ProtocolClass;
pub use compress::{decompress_payload, CompressionTag};
pub use packet::{parse_pcap, Transport};
pub use stream::reassemble_streams;

/// One reassembled transport conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub flow_id: usize,
    pub transport: Transport,
    /// Device side of the conversation.
    pub client: SocketAddr,
    pub server: SocketAddr,
    pub first_ts: f64,
    pub last_ts: f64,
    pub protocol_class: ProtocolClass,
    #[serde(with = "codec::b64")]
    pub payload_out: Vec<u8>,
    #[serde(with = "codec::b64")]
    pub payload_in: Vec<u8>,
    /// Host header, TLS server name or `ip:port`, in that order of preference.
    pub host: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sni: Option<String>,
    pub app_attributed: bool,
    pub truncated: bool,
    /// Individual outbound datagram sizes for UDP flows.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub out_messages: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub method: String,
    pub url: String,
    #[serde(default = "default_version")]
    pub http_version: String,
    /// Ordered header list; names keep their original casing.
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    #[serde(default, with = "codec::b64")]
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    #[serde(default)]
    pub reason: String,
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    #[serde(default, with = "codec::b64")]
    pub body: Vec<u8>,
}

fn default_version() -> String {
    "HTTP/1.1".into()
}

pub fn header_value<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

impl HttpRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        header_value(&self.headers, name)
    }

    /// Request head as it would appear on the wire (request line and
    /// headers, CRLF separated, without the body).
    pub fn head_bytes(&self) -> Vec<u8> {
        let mut out = format!("{} {} {}\r\n", self.method, self.url, self.http_version).into_bytes();
        for (n, v) in &self.headers {
            out.extend_from_slice(format!("{n}: {v}\r\n").as_bytes());
        }
        out.extend_from_slice(b"\r\n");
        out
    }
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        header_value(&self.headers, name)
    }

    pub fn head_bytes(&self) -> Vec<u8> {
        let mut out = format!("HTTP/1.1 {} {}\r\n", self.status, self.reason).into_bytes();
        for (n, v) in &self.headers {
            out.extend_from_slice(format!("{n}: {v}\r\n").as_bytes());
        }
        out.extend_from_slice(b"\r\n");
        out
    }
}

/// One request/response pair recovered by the intercepting proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecryptedHttpRecord {
    pub flow_ref: usize,
    pub ts: f64,
    pub request: HttpRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<HttpResponse>,
}

impl DecryptedHttpRecord {
    /// Host from the Host header, falling back to the URL authority.
    pub fn host(&self) -> Option<String> {
        if let Some(h) = self.request.header("host") {
            return Some(h.trim().to_ascii_lowercase());
        }
        let rest = self.request.url.split_once("://")?.1;
        let authority = rest.split(['/', '?', '#']).next()?;
        (!authority.is_empty()).then(|| authority.to_ascii_lowercase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileOpKind {
    Open,
    Read,
    Write,
    Rename,
    Remove,
    Move,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileOp {
    pub ts: f64,
    pub kind: FileOpKind,
    /// Shared-storage paths are relative to the storage root, e.g.
    /// `.cc/.adfwe.dat`; other paths stay absolute.
    pub path: String,
    #[serde(default, with = "codec::b64_opt", skip_serializing_if = "Option::is_none")]
    pub buffer: Option<Vec<u8>>,
    /// Destination of a rename or move.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

/// Socket tuple reported by the network hooks inside the app process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HookedTuple {
    pub proto: Transport,
    pub src: SocketAddr,
    pub dst: SocketAddr,
    pub first_ts: f64,
    pub last_ts: f64,
}

/// Everything recorded for one app run.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisBundle {
    pub app_id: String,
    pub run_id: String,
    pub device_id: String,
    pub app_version: Option<String>,
    pub flows: Vec<Flow>,
    pub decrypted_http: Vec<DecryptedHttpRecord>,
    pub cipher_events: Vec<CipherEvent>,
    pub file_ops: Vec<FileOp>,
    pub profile: PiiProfile,
    /// Unpacked app package, keyed by relative path. `None` when the bundle
    /// has no `package/` directory.
    pub package_blobs: Option<BTreeMap<String, Vec<u8>>>,
    pub hooked_tuples: Vec<HookedTuple>,
    pub warnings: Vec<String>,
}

impl AnalysisBundle {
    pub fn empty(app_id: &str, run_id: &str, device_id: &str) -> Self {
        AnalysisBundle {
            app_id: app_id.into(),
            run_id: run_id.into(),
            device_id: device_id.into(),
            app_version: None,
            flows: Vec::new(),
            decrypted_http: Vec::new(),
            cipher_events: Vec::new(),
            file_ops: Vec::new(),
            profile: PiiProfile::default(),
            package_blobs: None,
            hooked_tuples: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn flow(&self, flow_id: usize) -> Option<&Flow> {
        self.flows.iter().find(|f| f.flow_id == flow_id)
    }

    /// `app_id/run_id@device_id`, used in diagnostics.
    pub fn label(&self) -> String {
        format!("{}/{}@{}", self.app_id, self.run_id, self.device_id)
    }
}

/// Prefixes under which Android exposes shared storage.
const SHARED_ROOTS: &[&str] = &[
    "/storage/emulated/0/",
    "/storage/emulated/legacy/",
    "/storage/self/primary/",
    "/mnt/sdcard/",
    "/sdcard/",
    "/mnt/user/0/primary/",
];

/// Maps the various aliases of the shared storage root to one relative form.
pub fn normalize_path(path: &str) -> String {
    let mut p = path.replace('\\', "/");
    while p.contains("//") {
        p = p.replace("//", "/");
    }
    for root in SHARED_ROOTS {
        if let Some(rest) = p.strip_prefix(root) {
            return rest.to_string();
        }
    }
    p
}

pub fn is_shared_storage(path: &str) -> bool {
    !path.starts_with('/')
}
