//! Parsing of JCA-style transformation strings (`AES/CBC/PKCS5Padding`).

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CipherFamily {
    Aes,
    Des,
    TripleDes,
    Rc4,
    Rsa,
    Blowfish,
    /// A well-formed name this tool has no specific rules for.
    Other,
    /// Missing or unparseable.
    Unknown,
}

impl CipherFamily {
    pub fn block_size(self) -> Option<usize> {
        match self {
            CipherFamily::Aes => Some(16),
            CipherFamily::Des | CipherFamily::TripleDes | CipherFamily::Blowfish => Some(8),
            _ => None,
        }
    }

    fn from_name(name: &str) -> CipherFamily {
        let n = name.to_ascii_uppercase();
        let n = n.as_str();
        if n == "AES" || n.starts_with("AES_") || n.starts_with("AES-") || n == "RIJNDAEL" {
            CipherFamily::Aes
        } else if n == "DES" {
            CipherFamily::Des
        } else if matches!(n, "DESEDE" | "TRIPLEDES" | "3DES" | "TDEA" | "DESEDEWRAP") {
            CipherFamily::TripleDes
        } else if matches!(n, "RC4" | "ARC4" | "ARCFOUR") {
            CipherFamily::Rc4
        } else if n == "RSA" {
            CipherFamily::Rsa
        } else if n == "BLOWFISH" {
            CipherFamily::Blowfish
        } else if !n.is_empty() && n.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-') {
            CipherFamily::Other
        } else {
            CipherFamily::Unknown
        }
    }
}

/// A parsed transformation. `mode` is upper-cased; block ciphers given
/// without a mode get the provider default, ECB, with `mode_defaulted` set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Algorithm {
    pub raw: String,
    pub family: CipherFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<String>,
    #[serde(default)]
    pub mode_defaulted: bool,
    /// RSA modulus size, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rsa_bits: Option<u32>,
}

impl Algorithm {
    pub fn unknown() -> Self {
        Algorithm {
            raw: String::new(),
            family: CipherFamily::Unknown,
            mode: None,
            padding: None,
            mode_defaulted: false,
            rsa_bits: None,
        }
    }

    pub fn parse(raw: &str) -> Self {
        let raw = raw.trim();
        let mut parts = raw.split('/');
        let family = CipherFamily::from_name(parts.next().unwrap_or(""));
        let mode = parts.next().map(|m| m.trim().to_ascii_uppercase()).filter(|m| !m.is_empty());
        let padding = parts.next().map(|p| p.trim().to_string()).filter(|p| !p.is_empty());
        let family = if parts.next().is_some() { CipherFamily::Unknown } else { family };
        let (mode, mode_defaulted) = match (mode, family.block_size()) {
            (None, Some(_)) => (Some("ECB".to_string()), true),
            (m, _) => (m, false),
        };
        Algorithm {
            raw: raw.to_string(),
            family,
            mode,
            padding,
            mode_defaulted,
            rsa_bits: None,
        }
    }

    pub fn is_ecb(&self) -> bool {
        self.family.block_size().is_some() && self.mode.as_deref() == Some("ECB")
    }

    pub fn is_known(&self) -> bool {
        self.family != CipherFamily::Unknown
    }

    /// Short label for reports, e.g. `AES/CBC` or `RSA-512`.
    pub fn label(&self) -> String {
        let name = match self.family {
            CipherFamily::Aes => "AES",
            CipherFamily::Des => "DES",
            CipherFamily::TripleDes => "3DES",
            CipherFamily::Rc4 => "RC4",
            CipherFamily::Rsa => {
                return match self.rsa_bits {
                    Some(bits) => format!("RSA-{bits}"),
                    None => "RSA".into(),
                }
            }
            CipherFamily::Blowfish => "Blowfish",
            CipherFamily::Other => return self.raw.split('/').next().unwrap_or_default().to_string(),
            CipherFamily::Unknown => return "unknown".into(),
        };
        match &self.mode {
            Some(m) => format!("{name}/{m}"),
            None => name.to_string(),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Bit length of an RSA modulus found in `key`: a DER structure (PKCS#1,
/// PKCS#8 or SubjectPublicKeyInfo) whose first large INTEGER is taken as
/// the modulus, or otherwise the raw big-endian modulus bytes.
pub fn rsa_modulus_bits(key: &[u8]) -> Option<u32> {
    if let Some(n) = der_first_big_integer(key, 0) {
        return bit_len(n);
    }
    bit_len(key)
}

fn bit_len(bytes: &[u8]) -> Option<u32> {
    let start = bytes.iter().position(|&b| b != 0)?;
    let trimmed = &bytes[start..];
    Some((trimmed.len() as u32 - 1) * 8 + (8 - trimmed[0].leading_zeros()))
}

fn der_header(data: &[u8]) -> Option<(u8, usize, usize)> {
    let tag = *data.first()?;
    let first = *data.get(1)? as usize;
    if first < 0x80 {
        return Some((tag, 2, first));
    }
    let n = first & 0x7f;
    if n == 0 || n > 4 {
        return None;
    }
    let mut len = 0usize;
    for i in 0..n {
        len = len << 8 | *data.get(2 + i)? as usize;
    }
    Some((tag, 2 + n, len))
}

fn der_first_big_integer(data: &[u8], depth: usize) -> Option<&[u8]> {
    if depth > 6 {
        return None;
    }
    let mut pos = 0;
    while pos < data.len() {
        let (tag, hdr, len) = der_header(&data[pos..])?;
        let body = data.get(pos + hdr..pos + hdr + len)?;
        match tag {
            0x02 if len > 8 => return Some(body),
            0x30 => {
                if let Some(n) = der_first_big_integer(body, depth + 1) {
                    return Some(n);
                }
            }
            0x03 if !body.is_empty() => {
                if let Some(n) = der_first_big_integer(&body[1..], depth + 1) {
                    return Some(n);
                }
            }
            0x04 => {
                if let Some(n) = der_first_big_integer(body, depth + 1) {
                    return Some(n);
                }
            }
            _ => {}
        }
        if depth == 0 && tag != 0x30 {
            return None;
        }
        pos += hdr + len;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_transformations() {
        let a = Algorithm::parse("AES/CBC/PKCS5Padding");
        assert_eq!(a.family, CipherFamily::Aes);
        assert_eq!(a.mode.as_deref(), Some("CBC"));
        assert_eq!(a.padding.as_deref(), Some("PKCS5Padding"));
        assert!(!a.is_ecb());

        let d = Algorithm::parse("DES/ECB/PKCS5Padding");
        assert_eq!(d.family, CipherFamily::Des);
        assert!(d.is_ecb());

        assert_eq!(Algorithm::parse("DESede").family, CipherFamily::TripleDes);
        assert_eq!(Algorithm::parse("ARCFOUR").family, CipherFamily::Rc4);
        assert_eq!(Algorithm::parse("RSA/ECB/NoPadding").family, CipherFamily::Rsa);
        assert!(!Algorithm::parse("RSA/ECB/NoPadding").is_ecb());
        assert_eq!(Algorithm::parse("??").family, CipherFamily::Unknown);
        assert_eq!(Algorithm::parse("a/b/c/d").family, CipherFamily::Unknown);
    }

    #[test]
    fn bare_block_cipher_defaults_to_ecb() {
        let a = Algorithm::parse("AES");
        assert!(a.is_ecb());
        assert!(a.mode_defaulted);
        assert!(Algorithm::parse("RC4").mode.is_none());
    }

    #[test]
    fn modulus_from_pkcs1_der() {
        // SEQUENCE { INTEGER n (65 bytes, leading zero, top bit set), INTEGER 65537 }
        let mut n = vec![0x00, 0x80];
        n.extend_from_slice(&[0x11; 63]);
        let mut seq = vec![0x02, n.len() as u8];
        seq.extend_from_slice(&n);
        seq.extend_from_slice(&[0x02, 0x03, 0x01, 0x00, 0x01]);
        let mut der = vec![0x30, seq.len() as u8];
        der.extend_from_slice(&seq);
        assert_eq!(rsa_modulus_bits(&der), Some(512));
    }

    #[test]
    fn modulus_from_raw_bytes() {
        let mut raw = vec![0x01];
        raw.extend_from_slice(&[0xff; 47]);
        assert_eq!(rsa_modulus_bits(&raw), Some(377));
    }
}
