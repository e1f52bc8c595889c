//! The sidecar written next to a generated bundle: what an inspector run
//! over the bundle must report.

use std::collections::BTreeSet;
use std::net::SocketAddr;

use serde::{Deserialize, Serialize};

use crate::transform::Step;

pub const EXPECTED_FILE: &str = "expected.json";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expected {
    pub app_id: String,
    pub run_id: String,
    pub device_id: String,
    pub counts: ExpectedCounts,
    pub leaks: Vec<ExpectedLeak>,
    pub credentials: Vec<ExpectedCredential>,
    pub downgrades: Vec<ExpectedDowngrade>,
    pub key_transmissions: Vec<ExpectedKeyTransmission>,
    pub covert_files: Vec<ExpectedCovertFile>,
    pub amplification: Vec<ExpectedAmplification>,
    /// Weakness kinds, one entry per flagged operation or key, sorted.
    pub weaknesses: Vec<String>,
    pub operations: Vec<ExpectedOperation>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    pub flows: usize,
    pub decrypted_http: usize,
    pub cipher_events: usize,
    pub file_ops: usize,
    pub hooked_tuples: usize,
    pub package_blobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedLeak {
    /// Index into the manifest's `planted_leaks`.
    pub item: usize,
    /// `search_needles` or `detect_media_exfil`.
    pub detector: String,
    pub pii_type: String,
    /// `http`, `https`, `non_http` or `file`.
    pub channel: String,
    /// Host name, `ip:port`, or normalized file path.
    pub host: String,
    pub custom_encrypted: bool,
    /// Algorithm labels, outermost first.
    pub chain_algorithms: Vec<String>,
    /// The searched value (latitude for GPS); empty for media.
    pub value: String,
    pub needle_chain: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCredential {
    pub item: usize,
    pub kind: String,
    pub key_name: String,
    /// Structure name as reported, e.g. `json` or `http_header`.
    pub structure: String,
    pub channel: String,
    pub host: String,
    pub custom_encrypted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedDowngrade {
    pub item: usize,
    pub kind: String,
    pub key_name: String,
    pub later_channel: String,
    pub later_custom: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedKeyTransmission {
    pub item: usize,
    pub channel: String,
    pub host: String,
    /// `plain`, `base64` or `hex`.
    pub encoding: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCovertFile {
    pub path: String,
    pub writers: BTreeSet<String>,
    pub readers: BTreeSet<String>,
    pub pii_types: BTreeSet<String>,
    pub custom_encrypted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedAmplification {
    pub destination: SocketAddr,
    pub sent: u64,
    pub received: u64,
}

impl ExpectedAmplification {
    pub fn flagged(&self, threshold: f64) -> bool {
        self.sent > 0 && self.received as f64 / self.sent as f64 >= threshold
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedOperation {
    pub label: String,
    /// 1 for an operation whose ciphertext is not inside another one.
    pub depth: u32,
    pub plaintext_len: usize,
    pub ciphertext_len: usize,
    pub update_calls: usize,
}
