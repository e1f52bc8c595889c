//! Searching unpacked app packages for key material.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{b64_encode, digest_hex};
use crate::search::Dictionary;

/// Keys shorter than this are not searched; they would match everywhere.
pub const MIN_KEY_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyEncoding {
    Plain,
    Base64,
    Hex,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HardcodedMatch {
    pub key_digest: String,
    pub blob_path: String,
    pub offset: usize,
    pub encoding: KeyEncoding,
}

/// Finds each key in every blob as raw bytes, as base64 (padded or not) and
/// as hex in either case. Results are sorted and free of duplicates.
pub fn find_hardcoded_keys(keys: &[&[u8]], blobs: &BTreeMap<String, Vec<u8>>) -> Vec<HardcodedMatch> {
    let mut exact = Vec::new();
    let mut folded = Vec::new();
    for key in keys.iter().filter(|k| k.len() >= MIN_KEY_LEN) {
        let digest = digest_hex(key);
        exact.push((key.to_vec(), (digest.clone(), KeyEncoding::Plain)));
        let b64 = b64_encode(key);
        let unpadded = b64.trim_end_matches('=').to_string();
        if unpadded != b64 {
            exact.push((unpadded.into_bytes(), (digest.clone(), KeyEncoding::Base64)));
        }
        exact.push((b64.into_bytes(), (digest.clone(), KeyEncoding::Base64)));
        folded.push((hex::encode(key).into_bytes(), (digest, KeyEncoding::Hex)));
    }
    let exact = Dictionary::new(exact);
    let folded = Dictionary::ascii_case_insensitive(folded);
    let mut out = Vec::new();
    for (path, blob) in blobs {
        for dict in [&exact, &folded] {
            for hit in dict.find_all(blob) {
                for (digest, encoding) in dict.owners(hit.pattern) {
                    out.push(HardcodedMatch {
                        key_digest: digest.clone(),
                        blob_path: path.clone(),
                        offset: hit.start,
                        encoding: *encoding,
                    });
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}
