//! Device photos, audio and video leaving the device.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{FlowDirection, LeakFinding, Location, RunContext};
use crate::needles::{DataType, KnownType};

/// Leading bytes of a sample searched for in payloads.
pub const SAMPLE_PREFIX: usize = 64;
/// Bytes after a media signature compared against samples.
pub const SIGNATURE_FOLLOW: usize = 256;

/// Signature name, offset of the magic and the magic bytes.
const SIGNATURES: &[(&str, usize, &[u8])] = &[
    ("jpeg", 0, b"\xFF\xD8\xFF"),
    ("png", 0, b"\x89PNG\r\n\x1a\n"),
    ("gif", 0, b"GIF8"),
    ("webp", 8, b"WEBP"),
    ("wav", 8, b"WAVE"),
    ("avi", 8, b"AVI "),
    ("mp4", 4, b"ftyp"),
    ("mp3", 0, b"ID3"),
    ("ogg", 0, b"OggS"),
    ("flac", 0, b"fLaC"),
    ("amr", 0, b"#!AMR"),
    ("mkv", 0, b"\x1A\x45\xDF\xA3"),
];

/// Name of the media signature `bytes` starts with.
pub fn media_signature(bytes: &[u8]) -> Option<&'static str> {
    SIGNATURES
        .iter()
        .find(|(_, at, magic)| bytes.len() >= at + magic.len() && &bytes[*at..at + magic.len()] == *magic)
        .map(|(name, _, _)| *name)
}

/// An outbound payload that starts like a media file but matches no
/// device sample. Informational only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaFinding {
    pub app_id: String,
    pub run_id: String,
    pub device_id: String,
    pub signature: String,
    pub location: Location,
    pub host: String,
    pub ts: f64,
    pub custom_encrypted: bool,
}

fn sample_matches_after_signature(payload: &[u8], sample: &[u8]) -> bool {
    let n = payload.len().min(sample.len()).min(SIGNATURE_FOLLOW);
    n >= 16 && payload[..n] == sample[..n]
}

/// User-file leaks (as findings) and unmatched media payloads.
pub fn detect_media_exfil(ctx: &RunContext<'_>) -> (Vec<LeakFinding>, Vec<MediaFinding>) {
    let b = ctx.bundle;
    let samples = &b.profile.media_samples;
    let mut leaks = Vec::new();
    let mut unmatched = Vec::new();
    let mut seen = HashSet::new();
    let mut check = |unit: usize, hay: &[u8], offset: usize, chain: &[usize]| {
        let u = &ctx.units[unit];
        if u.direction != FlowDirection::Outbound || u.opaque {
            return;
        }
        let custom = !chain.is_empty();
        let signature = media_signature(hay);
        let mut matched = false;
        for (si, s) in samples.iter().enumerate() {
            if s.leading_bytes.is_empty() {
                continue;
            }
            let prefix = &s.leading_bytes[..s.leading_bytes.len().min(SAMPLE_PREFIX)];
            let pos = if prefix.len() >= 16 { hay.windows(prefix.len()).position(|w| w == prefix) } else { None };
            let pos = pos.or_else(|| (signature.is_some() && sample_matches_after_signature(hay, &s.leading_bytes)).then_some(0));
            let Some(pos) = pos else { continue };
            matched = true;
            if !seen.insert((unit, chain.to_vec(), si)) {
                continue;
            }
            leaks.push(LeakFinding {
                app_id: b.app_id.clone(),
                run_id: b.run_id.clone(),
                device_id: b.device_id.clone(),
                pii_type: DataType::Known(KnownType::UserFiles),
                needle_id: si,
                needle_chain: Vec::new(),
                gps_tier: None,
                location: ctx.location(unit, if custom { offset } else { pos }),
                host: u.host.clone(),
                ts: u.ts,
                custom_encrypted: custom,
                encryption_chain: chain.iter().map(|&o| ctx.ops[o].op_id).collect(),
                chain_algorithms: ctx.chain_algorithms(chain),
                plaintext_offset: custom.then_some(pos),
                evidence: s.name.clone(),
            });
        }
        if let (Some(sig), false) = (signature, matched) {
            unmatched.push(MediaFinding {
                app_id: b.app_id.clone(),
                run_id: b.run_id.clone(),
                device_id: b.device_id.clone(),
                signature: sig.to_string(),
                location: ctx.location(unit, offset),
                host: u.host.clone(),
                ts: u.ts,
                custom_encrypted: custom,
            });
        }
    };
    for (i, u) in ctx.units.iter().enumerate() {
        check(i, &u.bytes, 0, &[]);
    }
    for v in ctx.views {
        check(v.unit, &v.bytes, v.unit_offset, &v.chain);
    }
    (leaks, unmatched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signatures() {
        assert_eq!(media_signature(b"\xFF\xD8\xFF\xE0rest"), Some("jpeg"));
        assert_eq!(media_signature(b"\x00\x00\x00\x18ftypmp42"), Some("mp4"));
        assert_eq!(media_signature(b"RIFF\x00\x00\x00\x00WAVEfmt "), Some("wav"));
        assert_eq!(media_signature(b"plain text"), None);
    }
}
