//! The fixture manifest: what to plant in a synthetic bundle.
//!
//! See `docs/manifest.md` for the field-by-field description. Every field
//! but `seed` has a default, so `{"seed": 1}` is a valid (clean) manifest.

use std::collections::BTreeMap;
use std::net::SocketAddrV4;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FixtureError, Result};
use crate::net::Segmentation;
use crate::transform::Step;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureManifest {
    pub seed: u64,
    #[serde(default = "default_app")]
    pub app_id: String,
    #[serde(default = "default_run")]
    pub run_id: String,
    #[serde(default = "default_device")]
    pub device_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_version: Option<String>,
    /// Profile values replacing the built-in ones, keyed by data type label.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub profile: BTreeMap<String, String>,
    /// GPS fix; coordinates need at least five decimals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gps: Option<GpsSpec>,
    #[serde(default)]
    pub planted_leaks: Vec<PlantedLeak>,
    #[serde(default)]
    pub planted_credentials: Vec<PlantedCredential>,
    #[serde(default)]
    pub planted_key_transmissions: Vec<PlantedKeyTransmission>,
    #[serde(default)]
    pub planted_covert_files: Vec<PlantedCovertFile>,
    /// Cipher operations without PII, e.g. to exercise the weak-cipher audit.
    #[serde(default)]
    pub planted_operations: Vec<PlantedOperation>,
    /// Adds a UDP exchange whose replies are this many times the request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplification_factor: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplification_destination: Option<SocketAddrV4>,
    #[serde(default)]
    pub segmentation: Segmentation,
    /// Adds PII-bearing traffic that no hooked socket accounts for.
    #[serde(default = "yes")]
    pub system_traffic: bool,
    /// Writes a `package/` directory.
    #[serde(default = "yes")]
    pub package: bool,
}

fn default_app() -> String {
    "com.example.fixture".into()
}

fn default_run() -> String {
    "run-1".into()
}

fn default_device() -> String {
    "device-a".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpsSpec {
    pub lat: String,
    pub lon: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Http,
    Https,
    NonHttp,
    File,
}

impl Protocol {
    /// Channel name as reported by the inspector.
    pub fn channel(self) -> &'static str {
        match self {
            Protocol::Http => "http",
            Protocol::Https => "https",
            Protocol::NonHttp => "non_http",
            Protocol::File => "file",
        }
    }
}

/// Where a value sits in an HTTP request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    Body,
    Query,
    Header,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Tcp,
    Udp,
}

/// How the outermost ciphertext is carried.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarrierEncoding {
    Raw,
    #[default]
    Base64,
    Hex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Codec {
    Gzip,
    Zlib,
}

/// Compresses the plaintext of one layer (0 = outermost) before it is
/// encrypted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Compression {
    pub codec: Codec,
    pub layer: usize,
}

/// How a layer's key is chosen.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyPolicy {
    /// Fresh key from the seeded generator.
    #[default]
    Random,
    /// The given key (hex).
    Fixed { key: String },
    /// The given key (hex), also embedded in the package.
    Hardcoded { key: String, encoding: BlobEncoding, path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobEncoding {
    Plain,
    Base64,
    HexLower,
    HexUpper,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerSpec {
    Name(String),
    Full {
        algorithm: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        key_bits: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        key_policy: Option<KeyPolicy>,
    },
}

impl LayerSpec {
    pub fn algorithm(&self) -> &str {
        match self {
            LayerSpec::Name(a) | LayerSpec::Full { algorithm: a, .. } => a,
        }
    }

    pub fn key_bits(&self) -> Option<u32> {
        match self {
            LayerSpec::Name(_) => None,
            LayerSpec::Full { key_bits, .. } => *key_bits,
        }
    }

    pub fn key_policy(&self) -> Option<&KeyPolicy> {
        match self {
            LayerSpec::Name(_) => None,
            LayerSpec::Full { key_policy, .. } => key_policy.as_ref(),
        }
    }
}

/// Nested custom encryption: `layers[0]` is applied last and its
/// ciphertext is what goes on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomChain {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub key_policy: KeyPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compression: Option<Compression>,
    #[serde(default)]
    pub encoding: CarrierEncoding,
    /// Most update calls per operation before the final call.
    #[serde(default = "default_updates")]
    pub updates: usize,
}

fn default_updates() -> usize {
    2
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    #[default]
    Regular,
    Custom(CustomChain),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedLeak {
    /// Data type label, e.g. `Device ID` or `GPS (78 meter accuracy)`.
    pub pii_type: String,
    pub protocol: Protocol,
    #[serde(default)]
    pub channel: Channel,
    /// Host name (http/https), `ip:port` (non_http) or file path (file).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transform: Vec<Step>,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default)]
    pub transport: TransportKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CredentialKind {
    Password,
    Token,
    SessionId,
}

impl CredentialKind {
    pub fn name(self) -> &'static str {
        match self {
            CredentialKind::Password => "password",
            CredentialKind::Token => "token",
            CredentialKind::SessionId => "session_id",
        }
    }

    pub fn default_key(self) -> &'static str {
        match self {
            CredentialKind::Password => "password",
            CredentialKind::Token => "access_token",
            CredentialKind::SessionId => "session_id",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CredentialPlacement {
    #[default]
    Json,
    Query,
    Header,
    Cookie,
    Form,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialSend {
    pub protocol: Protocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[serde(default)]
    pub channel: Channel,
    #[serde(default)]
    pub placement: CredentialPlacement,
    #[serde(default)]
    pub transport: TransportKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedCredential {
    pub kind: CredentialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_name: Option<String>,
    /// Fixed secret; a random one is drawn otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(flatten)]
    pub send: CredentialSend,
    /// The same secret sent again later, e.g. outside HTTPS.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resend: Option<CredentialSend>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyEncoding {
    Plain,
    Base64,
    #[default]
    Hex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedKeyTransmission {
    pub protocol: Protocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[serde(default)]
    pub encoding: KeyEncoding,
    #[serde(default = "default_key_algorithm")]
    pub algorithm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_bits: Option<u32>,
    #[serde(default)]
    pub key_policy: KeyPolicy,
    #[serde(default)]
    pub transport: TransportKind,
}

fn default_key_algorithm() -> String {
    "AES/CBC/PKCS5Padding".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedCovertFile {
    /// Absolute path under shared storage, e.g. `/sdcard/.cc/.adfwe.dat`.
    pub path: String,
    #[serde(default)]
    pub read_back: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rename_to: Option<String>,
}

/// Where a planted operation's ciphertext is sent, if anywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SendSpec {
    pub protocol: Protocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[serde(default)]
    pub encoding: CarrierEncoding,
    #[serde(default)]
    pub transport: TransportKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedOperation {
    pub algorithm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_bits: Option<u32>,
    #[serde(default)]
    pub key_policy: KeyPolicy,
    #[serde(default = "default_plaintext_len")]
    pub plaintext_len: usize,
    #[serde(default = "default_updates")]
    pub updates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sent: Option<SendSpec>,
}

fn default_plaintext_len() -> usize {
    40
}

impl FixtureManifest {
    /// A manifest with nothing planted.
    pub fn clean(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed })).expect("defaults are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FixtureError::io(path, e))?;
        Self::from_json(&text)
    }
}
