//! Symmetric keys visible in network payloads.

use std::collections::{BTreeMap, BTreeSet};

use base64::engine::general_purpose::{STANDARD, STANDARD_NO_PAD};
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{FlowDirection, LocationKind, RunContext};
use crate::audit::KeyEncoding;
use crate::codec::digest_hex;
use crate::cryptolog::{extract_nonsdk_key_candidates, CipherFamily};
use crate::search::Dictionary;

/// Keys shorter than this are too likely to match by chance.
pub const MIN_TRANSMITTED_KEY: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyTransmission {
    pub app_id: String,
    pub run_id: String,
    pub device_id: String,
    pub key_digest: String,
    pub channel: LocationKind,
    pub host: String,
    pub direction: FlowDirection,
    pub encoding: KeyEncoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_id: Option<usize>,
    pub part: String,
    pub offset: usize,
}

fn symmetric_keys(ctx: &RunContext<'_>) -> BTreeSet<Vec<u8>> {
    let mut keys: BTreeSet<Vec<u8>> = ctx
        .ops
        .iter()
        .filter(|o| o.algorithm.family != CipherFamily::Rsa)
        .filter_map(|o| o.key.clone())
        .collect();
    keys.extend(extract_nonsdk_key_candidates(&ctx.bundle.cipher_events).into_iter().map(|c| c.key));
    keys.retain(|k| k.len() >= MIN_TRANSMITTED_KEY);
    keys
}

/// Every unit (outbound or inbound) that carries a symmetric key used by
/// the run, as raw bytes, base64 or hex. One entry per key, unit and
/// encoding.
pub fn detect_key_transmission(ctx: &RunContext<'_>) -> Vec<KeyTransmission> {
    let keys = symmetric_keys(ctx);
    let mut exact = Vec::new();
    let mut hex = Vec::new();
    for k in &keys {
        exact.push((k.clone(), (k.clone(), KeyEncoding::Plain)));
        exact.push((STANDARD.encode(k).into_bytes(), (k.clone(), KeyEncoding::Base64)));
        exact.push((STANDARD_NO_PAD.encode(k).into_bytes(), (k.clone(), KeyEncoding::Base64)));
        hex.push((hex::encode(k).into_bytes(), (k.clone(), KeyEncoding::Hex)));
    }
    let dicts = [Dictionary::new(exact), Dictionary::ascii_case_insensitive(hex)];
    let b = ctx.bundle;
    let mut found: BTreeMap<(usize, Vec<u8>, KeyEncoding), usize> = BTreeMap::new();
    for (i, u) in ctx.units.iter().enumerate() {
        if u.opaque || !u.is_network() {
            continue;
        }
        for dict in &dicts {
            for hit in dict.find_all(&u.bytes) {
                for (key, enc) in dict.owners(hit.pattern) {
                    found.entry((i, key.clone(), *enc)).or_insert(hit.start);
                }
            }
        }
    }
    found
        .into_iter()
        .map(|((i, key, encoding), offset)| {
            let u = &ctx.units[i];
            KeyTransmission {
                app_id: b.app_id.clone(),
                run_id: b.run_id.clone(),
                device_id: b.device_id.clone(),
                key_digest: digest_hex(&key),
                channel: u.kind,
                host: u.host.clone(),
                direction: u.direction,
                encoding,
                flow_id: u.flow_id(),
                part: u.part.clone(),
                offset,
            }
        })
        .collect()
}
