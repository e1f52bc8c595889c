//! Value transformations applied to planted values before sending.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use md5::Md5;
use serde::{Deserialize, Serialize};
use sha1::Sha1;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Capitalize,
    Upper,
    Lower,
    Base64,
    Hex,
    Md5Hex,
    Sha1Hex,
    Sha256Hex,
    Md5Raw,
    Sha1Raw,
    Sha256Raw,
}

impl Step {
    pub fn name(self) -> &'static str {
        match self {
            Step::Capitalize => "capitalize",
            Step::Upper => "upper",
            Step::Lower => "lower",
            Step::Base64 => "base64",
            Step::Hex => "hex",
            Step::Md5Hex => "md5_hex",
            Step::Sha1Hex => "sha1_hex",
            Step::Sha256Hex => "sha256_hex",
            Step::Md5Raw => "md5_raw",
            Step::Sha1Raw => "sha1_raw",
            Step::Sha256Raw => "sha256_raw",
        }
    }

    fn is_case(self) -> bool {
        matches!(self, Step::Capitalize | Step::Upper | Step::Lower)
    }

    fn is_raw_digest(self) -> bool {
        matches!(self, Step::Md5Raw | Step::Sha1Raw | Step::Sha256Raw)
    }

    fn is_encoding(self) -> bool {
        matches!(self, Step::Base64 | Step::Hex)
    }

    pub fn apply(self, input: &[u8]) -> Vec<u8> {
        let text = || String::from_utf8_lossy(input).into_owned();
        match self {
            Step::Capitalize => {
                let t = text();
                let mut chars = t.chars();
                match chars.next() {
                    Some(c) => c.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect::<String>().into_bytes(),
                    None => Vec::new(),
                }
            }
            Step::Upper => text().to_uppercase().into_bytes(),
            Step::Lower => text().to_lowercase().into_bytes(),
            Step::Base64 => STANDARD.encode(input).into_bytes(),
            Step::Hex => hex::encode(input).into_bytes(),
            Step::Md5Hex => hex::encode(Md5::digest(input)).into_bytes(),
            Step::Sha1Hex => hex::encode(Sha1::digest(input)).into_bytes(),
            Step::Sha256Hex => hex::encode(Sha256::digest(input)).into_bytes(),
            Step::Md5Raw => Md5::digest(input).to_vec(),
            Step::Sha1Raw => Sha1::digest(input).to_vec(),
            Step::Sha256Raw => Sha256::digest(input).to_vec(),
        }
    }
}

/// Applies the steps left to right.
pub fn apply(chain: &[Step], value: &[u8]) -> Vec<u8> {
    chain.iter().fold(value.to_vec(), |acc, s| s.apply(&acc))
}

/// Chains the inspector searches for: a single step, or a case change or
/// raw digest followed by an encoding.
pub fn is_searchable(chain: &[Step]) -> bool {
    match chain {
        [] | [_] => true,
        [a, b] => (a.is_case() || a.is_raw_digest()) && b.is_encoding(),
        _ => false,
    }
}

/// True when the chain output is printable ASCII and can sit in text.
pub fn is_text(bytes: &[u8]) -> bool {
    bytes.iter().all(|b| (0x20..0x7f).contains(b))
}
