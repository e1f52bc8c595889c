//! Weak algorithm, mode, key-size and key-management flags.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cryptolog::{CipherFamily, CryptoOperation, Fixedness, KeyRecord};
use crate::codec::digest_hex;
use crate::inspector::LocationKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WeaknessKind {
    #[serde(rename = "weak_cipher_des")]
    WeakCipherDes,
    #[serde(rename = "weak_cipher_3des")]
    WeakCipher3Des,
    #[serde(rename = "weak_cipher_rc4")]
    WeakCipherRc4,
    #[serde(rename = "weak_mode_ecb")]
    WeakModeEcb,
    #[serde(rename = "weak_rsa_384")]
    WeakRsa384,
    #[serde(rename = "weak_rsa_512")]
    WeakRsa512,
    #[serde(rename = "weak_rsa_768")]
    WeakRsa768,
    #[serde(rename = "fixed_key")]
    FixedKey,
    #[serde(rename = "hardcoded_key")]
    HardcodedKey,
    #[serde(rename = "fixed_iv")]
    FixedIv,
    #[serde(rename = "null_iv")]
    NullIv,
    /// RSA-1024: reported, not counted as a flagged weakness.
    #[serde(rename = "rsa_1024")]
    Rsa1024,
    #[serde(rename = "unknown_algorithm")]
    UnknownAlgorithm,
}

impl WeaknessKind {
    /// Informational entries do not make a report fail.
    pub fn is_informational(self) -> bool {
        matches!(self, WeaknessKind::Rsa1024 | WeaknessKind::UnknownAlgorithm)
    }

    /// IV checks go beyond the published weak-algorithm list.
    pub fn is_extended(self) -> bool {
        matches!(self, WeaknessKind::FixedIv | WeaknessKind::NullIv)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WeaknessKind::WeakCipherDes => "weak_cipher_des",
            WeaknessKind::WeakCipher3Des => "weak_cipher_3des",
            WeaknessKind::WeakCipherRc4 => "weak_cipher_rc4",
            WeaknessKind::WeakModeEcb => "weak_mode_ecb",
            WeaknessKind::WeakRsa384 => "weak_rsa_384",
            WeaknessKind::WeakRsa512 => "weak_rsa_512",
            WeaknessKind::WeakRsa768 => "weak_rsa_768",
            WeaknessKind::FixedKey => "fixed_key",
            WeaknessKind::HardcodedKey => "hardcoded_key",
            WeaknessKind::FixedIv => "fixed_iv",
            WeaknessKind::NullIv => "null_iv",
            WeaknessKind::Rsa1024 => "rsa_1024",
            WeaknessKind::UnknownAlgorithm => "unknown_algorithm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Subject {
    Operation { run_id: String, device_id: String, op_id: usize },
    Key { key_digest: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WeaknessFlag {
    pub app_id: String,
    pub subject: Subject,
    pub kind: WeaknessKind,
    pub algorithm: String,
    pub exposure: BTreeSet<LocationKind>,
    pub informational: bool,
    pub extended: bool,
}

/// Weakness kinds implied by an operation's algorithm alone.
pub fn algorithm_weaknesses(op: &CryptoOperation) -> Vec<WeaknessKind> {
    let alg = &op.algorithm;
    let mut kinds = Vec::new();
    match alg.family {
        CipherFamily::Des => kinds.push(WeaknessKind::WeakCipherDes),
        CipherFamily::TripleDes => kinds.push(WeaknessKind::WeakCipher3Des),
        CipherFamily::Rc4 => kinds.push(WeaknessKind::WeakCipherRc4),
        CipherFamily::Rsa => match alg.rsa_bits {
            Some(b) if b <= 384 => kinds.push(WeaknessKind::WeakRsa384),
            Some(b) if b <= 512 => kinds.push(WeaknessKind::WeakRsa512),
            Some(b) if b <= 768 => kinds.push(WeaknessKind::WeakRsa768),
            Some(b) if b <= 1024 => kinds.push(WeaknessKind::Rsa1024),
            _ => {}
        },
        CipherFamily::Unknown if !alg.raw.is_empty() => kinds.push(WeaknessKind::UnknownAlgorithm),
        _ => {}
    }
    if alg.is_ecb() {
        kinds.push(WeaknessKind::WeakModeEcb);
    }
    kinds
}

/// Identifies the run an operation belongs to.
#[derive(Debug, Clone, Copy)]
pub struct RunScope<'a> {
    pub app_id: &'a str,
    pub run_id: &'a str,
    pub device_id: &'a str,
}

/// Flags for the operations of one run. `exposure` maps op ids to the
/// channel kinds their ciphertext was seen on.
pub fn flag_weak_crypto(
    scope: RunScope<'_>,
    ops: &[CryptoOperation],
    exposure: &BTreeMap<usize, BTreeSet<LocationKind>>,
) -> Vec<WeaknessFlag> {
    let mut iv_uses: BTreeMap<(String, Vec<u8>), usize> = BTreeMap::new();
    for op in ops {
        if let (Some(key), Some(iv)) = (&op.key, &op.iv) {
            if !iv.is_empty() && !op.algorithm.is_ecb() {
                *iv_uses.entry((digest_hex(key), iv.clone())).or_default() += 1;
            }
        }
    }
    let mut flags = Vec::new();
    for op in ops {
        let mut kinds = algorithm_weaknesses(op);
        if let Some(iv) = &op.iv {
            if !iv.is_empty() && iv.iter().all(|&b| b == 0) {
                kinds.push(WeaknessKind::NullIv);
            }
            if let Some(key) = &op.key {
                if iv_uses.get(&(digest_hex(key), iv.clone())).copied().unwrap_or(0) >= 2 {
                    kinds.push(WeaknessKind::FixedIv);
                }
            }
        }
        for kind in kinds {
            flags.push(WeaknessFlag {
                app_id: scope.app_id.to_string(),
                subject: Subject::Operation {
                    run_id: scope.run_id.to_string(),
                    device_id: scope.device_id.to_string(),
                    op_id: op.op_id,
                },
                kind,
                algorithm: op.algorithm.label(),
                exposure: exposure.get(&op.op_id).cloned().unwrap_or_default(),
                informational: kind.is_informational(),
                extended: kind.is_extended(),
            });
        }
    }
    flags
}

/// fixed_key / hardcoded_key flags from classified key records.
pub fn flag_keys(records: &[KeyRecord], exposure: &BTreeMap<(String, String), BTreeSet<LocationKind>>) -> Vec<WeaknessFlag> {
    let mut flags = Vec::new();
    for r in records {
        let mut kinds = Vec::new();
        if r.observed_in.len() >= 2 && r.fixedness >= Fixedness::FixedSameDevice {
            kinds.push(WeaknessKind::FixedKey);
        }
        if r.fixedness == Fixedness::Hardcoded {
            kinds.push(WeaknessKind::HardcodedKey);
        }
        for kind in kinds {
            flags.push(WeaknessFlag {
                app_id: r.app_id.clone(),
                subject: Subject::Key { key_digest: r.key_digest.clone() },
                kind,
                algorithm: format!("{:?}", r.family).to_ascii_lowercase(),
                exposure: exposure
                    .get(&(r.app_id.clone(), r.key_digest.clone()))
                    .cloned()
                    .unwrap_or_default(),
                informational: false,
                extended: false,
            });
        }
    }
    flags
}
