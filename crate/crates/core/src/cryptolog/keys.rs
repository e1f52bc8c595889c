//! Key provenance: non-SDK key candidates and fixed/hardcoded key
//! classification across runs and devices.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::algorithm::CipherFamily;
use super::assemble::CryptoOperation;
use super::event::{CipherEvent, Method};
use crate::audit::hardcoded::{find_hardcoded_keys, HardcodedMatch};
use crate::codec::digest_hex;
use crate::ingest::AnalysisBundle;

/// Argument lengths (bytes) that look like a 128, 192 or 256-bit key.
pub const KEY_SIZES: [usize; 3] = [16, 24, 32];

/// Indices of key-sized arguments that sit next to at least one argument of
/// another length.
pub fn key_candidate_indices(args: &[Vec<u8>]) -> Vec<usize> {
    let key_sized = |a: &Vec<u8>| KEY_SIZES.contains(&a.len());
    if !args.iter().any(|a| !key_sized(a)) {
        return Vec::new();
    }
    args.iter()
        .enumerate()
        .filter(|(_, a)| key_sized(a))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyCandidate {
    pub event_id: u64,
    pub arg_index: usize,
    #[serde(with = "crate::codec::b64")]
    pub key: Vec<u8>,
}

pub fn extract_nonsdk_key_candidates(events: &[CipherEvent]) -> Vec<KeyCandidate> {
    events
        .iter()
        .filter(|e| e.method == Method::NonsdkCall)
        .flat_map(|e| {
            key_candidate_indices(&e.args).into_iter().map(move |i| KeyCandidate {
                event_id: e.event_id,
                arg_index: i,
                key: e.args[i].clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyOrigin {
    Sdk,
    NonsdkCandidate,
}

/// One sighting of a key in one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyObservation {
    pub key: Vec<u8>,
    pub family: CipherFamily,
    pub origin: KeyOrigin,
    pub app_id: String,
    pub run_id: String,
    pub device_id: String,
}

/// Keys used by the operations of one bundle, plus non-SDK candidates.
pub fn collect_key_observations(bundle: &AnalysisBundle, ops: &[CryptoOperation]) -> Vec<KeyObservation> {
    let obs = |key: &[u8], family, origin| KeyObservation {
        key: key.to_vec(),
        family,
        origin,
        app_id: bundle.app_id.clone(),
        run_id: bundle.run_id.clone(),
        device_id: bundle.device_id.clone(),
    };
    let mut out: Vec<KeyObservation> = ops
        .iter()
        .filter_map(|op| op.key.as_deref().filter(|k| !k.is_empty()).map(|k| obs(k, op.algorithm.family, KeyOrigin::Sdk)))
        .collect();
    out.extend(
        extract_nonsdk_key_candidates(&bundle.cipher_events)
            .iter()
            .map(|c| obs(&c.key, CipherFamily::Unknown, KeyOrigin::NonsdkCandidate)),
    );
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fixedness {
    Session,
    FixedSameDevice,
    FixedCrossDevice,
    Hardcoded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRef {
    pub run_id: String,
    pub device_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub app_id: String,
    pub key_digest: String,
    pub key_len_bits: usize,
    pub family: CipherFamily,
    pub origin: KeyOrigin,
    pub fixedness: Fixedness,
    pub observed_in: Vec<RunRef>,
    pub hardcoded_in: Vec<HardcodedMatch>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Raw key bytes; never serialized.
    #[serde(skip)]
    pub key: Vec<u8>,
}

/// What the classifier knows about the corpus beyond the observations.
#[derive(Debug, Default)]
pub struct KeyContext<'a> {
    /// Device ids seen per app, whether or not they produced key sightings.
    pub devices: BTreeMap<String, BTreeSet<String>>,
    /// Unpacked package contents per app; apps without an entry cannot be
    /// checked for hardcoded keys.
    pub packages: BTreeMap<String, Vec<&'a BTreeMap<String, Vec<u8>>>>,
}

/// Groups sightings per (app, key) and assigns the most severe fixedness
/// the evidence supports. Records are ordered by app then digest.
pub fn classify_key_fixedness(observations: &[KeyObservation], ctx: &KeyContext<'_>) -> Vec<KeyRecord> {
    let mut groups: BTreeMap<(String, String), Vec<&KeyObservation>> = BTreeMap::new();
    for o in observations {
        groups.entry((o.app_id.clone(), digest_hex(&o.key))).or_default().push(o);
    }
    let mut out = Vec::new();
    for ((app_id, key_digest), obs) in groups {
        let runs: BTreeSet<(String, String)> = obs.iter().map(|o| (o.device_id.clone(), o.run_id.clone())).collect();
        let devices: BTreeSet<&String> = runs.iter().map(|(d, _)| d).collect();
        let key = obs[0].key.clone();
        let family = obs
            .iter()
            .map(|o| o.family)
            .find(|f| *f != CipherFamily::Unknown)
            .unwrap_or(CipherFamily::Unknown);
        let origin = obs.iter().map(|o| o.origin).min().unwrap_or(KeyOrigin::Sdk);
        let mut notes = Vec::new();

        let mut fixedness = if devices.len() >= 2 {
            Fixedness::FixedCrossDevice
        } else if runs.len() >= 2 {
            Fixedness::FixedSameDevice
        } else {
            Fixedness::Session
        };
        let corpus_devices = ctx.devices.get(&app_id).map_or(devices.len(), BTreeSet::len);
        if fixedness == Fixedness::FixedSameDevice && corpus_devices < 2 {
            notes.push("insufficient evidence: corpus holds a single device for this app, cross-device reuse not assessable".into());
        }

        let mut hardcoded_in = Vec::new();
        match ctx.packages.get(&app_id) {
            Some(packages) if !packages.is_empty() => {
                for blobs in packages {
                    hardcoded_in.extend(find_hardcoded_keys(&[key.as_slice()], blobs));
                }
                hardcoded_in.sort();
                hardcoded_in.dedup();
                if !hardcoded_in.is_empty() {
                    fixedness = Fixedness::Hardcoded;
                }
            }
            _ => notes.push("no package contents available: hardcoded-key search skipped".into()),
        }

        out.push(KeyRecord {
            app_id,
            key_digest,
            key_len_bits: key.len() * 8,
            family,
            origin,
            fixedness,
            observed_in: runs
                .into_iter()
                .map(|(device_id, run_id)| RunRef { run_id, device_id })
                .collect(),
            hardcoded_in,
            notes,
            key,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(key: &[u8], run: &str, dev: &str) -> KeyObservation {
        KeyObservation {
            key: key.to_vec(),
            family: CipherFamily::Aes,
            origin: KeyOrigin::Sdk,
            app_id: "app".into(),
            run_id: run.into(),
            device_id: dev.into(),
        }
    }

    fn ctx_two_devices() -> KeyContext<'static> {
        let mut ctx = KeyContext::default();
        ctx.devices.insert("app".into(), ["A".to_string(), "B".to_string()].into());
        ctx
    }

    #[test]
    fn candidates_need_a_non_key_sibling() {
        assert_eq!(key_candidate_indices(&[vec![0; 16], vec![0; 100]]), [0]);
        assert!(key_candidate_indices(&[vec![0; 16], vec![0; 32]]).is_empty());
        assert!(key_candidate_indices(&[vec![0; 16]]).is_empty());
        assert_eq!(key_candidate_indices(&[vec![0; 5], vec![0; 24], vec![0; 32]]), [1, 2]);
    }

    #[test]
    fn truth_table() {
        let ctx = ctx_two_devices();
        let o = [
            obs(b"session-key-0001", "r1", "A"),
            obs(b"same-device-key!", "r1", "A"),
            obs(b"same-device-key!", "r2", "A"),
            obs(b"cross-device-key", "r1", "A"),
            obs(b"cross-device-key", "r1", "B"),
        ];
        let recs = classify_key_fixedness(&o, &ctx);
        let of = |k: &[u8]| recs.iter().find(|r| r.key == k).unwrap().fixedness;
        assert_eq!(of(b"session-key-0001"), Fixedness::Session);
        assert_eq!(of(b"same-device-key!"), Fixedness::FixedSameDevice);
        assert_eq!(of(b"cross-device-key"), Fixedness::FixedCrossDevice);
    }

    #[test]
    fn hardcoded_via_hex_blob() {
        let key = [0xdeu8, 0xad, 0xbe, 0xef, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0a, 0x0b, 0x0c];
        let mut blob = b"const KEY = \"".to_vec();
        blob.extend_from_slice(hex::encode_upper(key).as_bytes());
        blob.extend_from_slice(b"\";");
        let pkg: BTreeMap<String, Vec<u8>> = [("assets/cfg.js".to_string(), blob)].into();
        let mut ctx = ctx_two_devices();
        ctx.packages.insert("app".into(), vec![&pkg]);
        let recs = classify_key_fixedness(&[obs(&key, "r1", "A")], &ctx);
        assert_eq!(recs[0].fixedness, Fixedness::Hardcoded);
        assert_eq!(recs[0].hardcoded_in[0].blob_path, "assets/cfg.js");
        assert_eq!(recs[0].hardcoded_in[0].offset, 13);
    }

    #[test]
    fn single_device_corpus_is_capped_with_note() {
        let mut ctx = KeyContext::default();
        ctx.devices.insert("app".into(), ["A".to_string()].into());
        let recs = classify_key_fixedness(&[obs(b"k-reused-key-123", "r1", "A"), obs(b"k-reused-key-123", "r2", "A")], &ctx);
        assert_eq!(recs[0].fixedness, Fixedness::FixedSameDevice);
        assert!(recs[0].notes.iter().any(|n| n.contains("insufficient evidence")));
    }

    #[test]
    fn adding_bundles_never_downgrades() {
        let ctx = ctx_two_devices();
        let base = vec![obs(b"key-aaaaaaaaaaaa", "r1", "A"), obs(b"key-aaaaaaaaaaaa", "r1", "B")];
        let before = classify_key_fixedness(&base, &ctx)[0].fixedness;
        let mut more = base.clone();
        more.push(obs(b"key-aaaaaaaaaaaa", "r2", "A"));
        more.push(obs(b"other-key-bbbbbb", "r2", "A"));
        let after = classify_key_fixedness(&more, &ctx)
            .into_iter()
            .find(|r| r.key == b"key-aaaaaaaaaaaa")
            .unwrap()
            .fixedness;
        assert!(after >= before);
    }
}
