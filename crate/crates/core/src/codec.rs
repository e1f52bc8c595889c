//! Byte encodings shared by the bundle format, needle transforms and
//! evidence masking.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use sha2::{Digest, Sha256};

pub fn b64_encode(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn b64_decode(text: &str) -> Result<Vec<u8>, base64::DecodeError> {
    STANDARD.decode(text.trim())
}

/// Hex digest of the SHA-256 of `bytes`; used wherever raw secrets must be
/// compared or reported without being revealed.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Masks the middle of a secret, leaving `visible` boundary bytes (half at
/// each end) readable.
pub fn mask(bytes: &[u8], visible: usize) -> String {
    if bytes.len() <= visible {
        return "*".repeat(bytes.len());
    }
    let head = visible / 2;
    let tail = visible - head;
    let mut out = printable(&bytes[..head]);
    out.push_str(&"*".repeat(bytes.len() - visible));
    out.push_str(&printable(&bytes[bytes.len() - tail..]));
    out
}

/// Lossy rendering for evidence excerpts: printable ASCII kept, everything
/// else escaped as `\xNN`.
pub fn printable(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        if (0x20..0x7f).contains(&b) && b != b'\\' {
            out.push(b as char);
        } else {
            out.push_str(&format!("\\x{b:02x}"));
        }
    }
    out
}

/// Serde adapter for `Vec<u8>` fields stored as standard base64 strings.
pub mod b64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::b64_encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        super::b64_decode(&text).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for `Option<Vec<u8>>` base64 fields.
pub mod b64_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match bytes {
            Some(b) => s.serialize_some(&super::b64_encode(b)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let text = Option::<String>::deserialize(d)?;
        text.map(|t| super::b64_decode(&t).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Serde adapter for `Vec<Vec<u8>>` base64 lists.
pub mod b64_list {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(items: &[Vec<u8>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(items.len()))?;
        for item in items {
            seq.serialize_element(&super::b64_encode(item))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<u8>>, D::Error> {
        let texts = Vec::<String>::deserialize(d)?;
        texts
            .iter()
            .map(|t| super::b64_decode(t).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_keeps_boundaries() {
        assert_eq!(mask(b"P4ss@88888888", 8), "P4ss*****8888");
        assert_eq!(mask(b"short", 8), "*****");
    }

    #[test]
    fn printable_escapes_binary() {
        assert_eq!(printable(b"a\x00b\\"), "a\\x00b\\x5c");
    }
}
