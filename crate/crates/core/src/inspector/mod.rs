//! Locating PII and ciphertext in channels and files.
//!
//! Every payload the app produced is cut into [`SearchUnit`]s (an HTTP
//! message head, a decrypted request body, a raw non-HTTP stream, a file
//! write buffer, ...). Needles are searched in the units directly, giving
//! regular findings, and in the plaintext of every cipher operation whose
//! ciphertext was located in a unit, giving custom-encrypted findings.

pub mod channel;
pub mod credentials;
pub mod files;
pub mod keys;
pub mod leaks;
pub mod media;
pub mod units;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cryptolog::CryptoOperation;
use crate::ingest::AnalysisBundle;
use crate::needles::{DataType, GpsTier, Transform};
pub use channel::{classify_channel, ChannelClass, ChannelProtocol, ChannelSummary};
pub use credentials::{detect_token_downgrade, extract_credentials, CredentialFinding, CredentialKind, DowngradeReport, Structure};
pub use files::{detect_covert_files, CovertFileReport};
pub use keys::{detect_key_transmission, KeyTransmission};
pub use leaks::{match_ciphertext, plaintext_views, search_needles, CipherLink, LinkEncoding, NeedleHit, NeedleIndex, PlainView};
pub use media::{detect_media_exfil, MediaFinding};
pub use units::{build_units, SearchUnit, UnitRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationKind {
    Http,
    Https,
    NonHttp,
    File,
}

impl fmt::Display for LocationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LocationKind::Http => "http",
            LocationKind::Https => "https",
            LocationKind::NonHttp => "non_http",
            LocationKind::File => "file",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowDirection {
    Outbound,
    Inbound,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub kind: LocationKind,
    /// Flow id for network locations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_id: Option<usize>,
    /// File path for file locations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Which part of the flow or file the offset refers to.
    pub part: String,
    pub direction: FlowDirection,
    pub offset: usize,
}

/// Options shared by the detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvidencePolicy {
    /// Emit raw excerpts instead of masked ones.
    pub unsafe_evidence: bool,
}

/// Visible boundary bytes in masked excerpts.
pub const MASK_VISIBLE: usize = 8;

impl EvidencePolicy {
    pub fn excerpt(&self, hay: &[u8], start: usize, len: usize) -> String {
        let end = (start + len).min(hay.len());
        if self.unsafe_evidence {
            let from = start.saturating_sub(16);
            let to = (end + 16).min(hay.len());
            crate::codec::printable(&hay[from..to])
        } else {
            crate::codec::mask(&hay[start.min(end)..end], MASK_VISIBLE)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakFinding {
    pub app_id: String,
    pub run_id: String,
    pub device_id: String,
    pub pii_type: DataType,
    pub needle_id: usize,
    pub needle_chain: Vec<Transform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gps_tier: Option<GpsTier>,
    pub location: Location,
    pub host: String,
    pub ts: f64,
    pub custom_encrypted: bool,
    /// Operation ids, outermost first; empty for regular findings.
    pub encryption_chain: Vec<usize>,
    /// Algorithm labels matching `encryption_chain`.
    pub chain_algorithms: Vec<String>,
    /// Offset of the match inside the innermost plaintext (custom findings).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plaintext_offset: Option<usize>,
    pub evidence: String,
}

impl LeakFinding {
    pub fn is_outbound(&self) -> bool {
        self.location.direction == FlowDirection::Outbound
    }
}

/// Everything the detectors of one run share.
#[derive(Debug, Clone, Copy)]
pub struct RunContext<'a> {
    pub bundle: &'a AnalysisBundle,
    pub units: &'a [SearchUnit],
    pub ops: &'a [CryptoOperation],
    pub links: &'a [CipherLink],
    pub views: &'a [PlainView],
    pub policy: EvidencePolicy,
}

impl RunContext<'_> {
    pub fn location(&self, unit: usize, offset: usize) -> Location {
        let u = &self.units[unit];
        Location {
            kind: u.kind,
            flow_id: u.flow_id(),
            path: u.path().map(str::to_string),
            part: u.part.clone(),
            direction: u.direction,
            offset,
        }
    }

    pub fn chain_algorithms(&self, chain: &[usize]) -> Vec<String> {
        chain.iter().map(|&i| self.ops[i].algorithm.label()).collect()
    }
}
