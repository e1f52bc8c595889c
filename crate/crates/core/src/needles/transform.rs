use md5::Md5;
use serde::{Deserialize, Serialize};
use sha1::Sha1;
use sha2::{Digest, Sha256};

use crate::codec::b64_encode;

/// A single content transformation applied before transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
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

impl Transform {
    /// Canonical order; needle generation and deduplication follow it.
    pub const ALL: &'static [Transform] = &[
        Transform::Capitalize,
        Transform::Upper,
        Transform::Lower,
        Transform::Base64,
        Transform::Hex,
        Transform::Md5Hex,
        Transform::Sha1Hex,
        Transform::Sha256Hex,
        Transform::Md5Raw,
        Transform::Sha1Raw,
        Transform::Sha256Raw,
    ];

    pub fn is_case(self) -> bool {
        matches!(self, Transform::Capitalize | Transform::Upper | Transform::Lower)
    }

    pub fn is_encoding(self) -> bool {
        matches!(self, Transform::Base64 | Transform::Hex)
    }

    pub fn is_raw_digest(self) -> bool {
        matches!(self, Transform::Md5Raw | Transform::Sha1Raw | Transform::Sha256Raw)
    }

    pub fn is_digest(self) -> bool {
        self.is_raw_digest() || matches!(self, Transform::Md5Hex | Transform::Sha1Hex | Transform::Sha256Hex)
    }

    pub fn apply(self, input: &[u8]) -> Vec<u8> {
        match self {
            Transform::Capitalize => map_text(input, capitalize),
            Transform::Upper => map_text(input, |s| s.to_uppercase()),
            Transform::Lower => map_text(input, |s| s.to_lowercase()),
            Transform::Base64 => b64_encode(input).into_bytes(),
            Transform::Hex => hex::encode(input).into_bytes(),
            Transform::Md5Hex => hex::encode(Md5::digest(input)).into_bytes(),
            Transform::Sha1Hex => hex::encode(Sha1::digest(input)).into_bytes(),
            Transform::Sha256Hex => hex::encode(Sha256::digest(input)).into_bytes(),
            Transform::Md5Raw => Md5::digest(input).to_vec(),
            Transform::Sha1Raw => Sha1::digest(input).to_vec(),
            Transform::Sha256Raw => Sha256::digest(input).to_vec(),
        }
    }
}

/// Applies a chain left to right.
pub fn apply_chain(chain: &[Transform], input: &[u8]) -> Vec<u8> {
    chain.iter().fold(input.to_vec(), |acc, t| t.apply(&acc))
}

/// First character upper-cased, the rest lower-cased.
fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
        None => String::new(),
    }
}

fn map_text(input: &[u8], f: impl Fn(&str) -> String) -> Vec<u8> {
    match std::str::from_utf8(input) {
        Ok(s) => f(s).into_bytes(),
        // non-text input: fold ASCII only
        Err(_) => {
            let s: String = input.iter().map(|&b| b as char).collect();
            let mapped = f(&s);
            if mapped.chars().count() == input.len() {
                mapped.chars().map(|c| c as u32 as u8).collect()
            } else {
                input.to_vec()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_transforms() {
        assert_eq!(Transform::Lower.apply(b"AbCd1234xyz"), b"abcd1234xyz");
        assert_eq!(Transform::Upper.apply(b"AbCd1234xyz"), b"ABCD1234XYZ");
        assert_eq!(Transform::Capitalize.apply(b"hELLO wORLD"), b"Hello world");
    }

    #[test]
    fn encodings_and_digests() {
        assert_eq!(Transform::Base64.apply(b"mymail@email.com"), b"bXltYWlsQGVtYWlsLmNvbQ==");
        assert_eq!(Transform::Hex.apply(b"\x01\xab"), b"01ab");
        // RFC 1321 test suite: MD5("abc")
        assert_eq!(Transform::Md5Hex.apply(b"abc"), b"900150983cd24fb0d6963f7d28e17f72");
        // FIPS 180 examples
        assert_eq!(Transform::Sha1Hex.apply(b"abc"), b"a9993e364706816aba3e25717850c26c9cd0d89d");
        assert_eq!(
            Transform::Sha256Hex.apply(b"abc"),
            b"ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(Transform::Md5Raw.apply(b"abc").len(), 16);
    }

    #[test]
    fn chain_is_left_to_right() {
        let c = apply_chain(&[Transform::Md5Raw, Transform::Hex], b"abc");
        assert_eq!(c, Transform::Md5Hex.apply(b"abc"));
        let u = apply_chain(&[Transform::Upper, Transform::Base64], b"ab");
        assert_eq!(u, b"QUI=");
    }
}
