//! Needle search in units and ciphertext-to-payload linking.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{LeakFinding, RunContext, SearchUnit};
use crate::cryptolog::{nested_chains, CryptoOperation, Direction};
use crate::ingest::compress::{decompressed, DEFAULT_CAP};
use crate::needles::{Axis, Needle, GPS_WINDOW};
use crate::search::Dictionary;

/// Raw ciphertext is cut into chunks of this many bytes.
pub const CHUNK_LEN: usize = 18;
/// Shortest ciphertext (and shortest trailing chunk) searched for.
pub const MIN_CIPHERTEXT: usize = 8;
/// Width of the encoded windows searched for.
pub const WINDOW_CHARS: usize = 24;
/// Encoded ciphertexts longer than this use non-overlapping windows.
pub const DENSE_WINDOW_LIMIT: usize = 8 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkEncoding {
    Raw,
    Base64,
    Hex,
}

/// Ciphertext of operation `op` was seen inside unit `unit` at `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CipherLink {
    pub op: usize,
    pub unit: usize,
    pub offset: usize,
    pub encoding: LinkEncoding,
}

/// A plaintext reachable from a linked operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlainView {
    /// Unit where the outermost ciphertext was seen.
    pub unit: usize,
    /// Unit offset of the outermost ciphertext.
    pub unit_offset: usize,
    /// Operation ids, outermost first.
    pub chain: Vec<usize>,
    pub bytes: Vec<u8>,
    /// `bytes` is the decompressed form of the innermost plaintext.
    pub decoded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NeedleHit {
    pub needle: usize,
    pub start: usize,
    pub len: usize,
}

/// The needle dictionary of one profile.
#[derive(Debug)]
pub struct NeedleIndex {
    needles: Vec<Needle>,
    dict: Dictionary<usize>,
}

impl NeedleIndex {
    pub fn new(needles: Vec<Needle>) -> Self {
        let dict = Dictionary::new(needles.iter().enumerate().map(|(i, n)| (n.pattern.clone(), i)));
        NeedleIndex { needles, dict }
    }

    pub fn needles(&self) -> &[Needle] {
        &self.needles
    }

    /// First occurrence of every needle, with GPS needles kept only as
    /// latitude hits paired to a longitude of the same tier and chain and
    /// not superseded by a finer tier at the same offset.
    pub fn scan(&self, hay: &[u8]) -> Vec<NeedleHit> {
        let mut plain = Vec::new();
        let mut gps = Vec::new();
        for hit in self.dict.find_all(hay) {
            let len = self.dict.pattern(hit.pattern).len();
            for &n in self.dict.owners(hit.pattern) {
                let h = NeedleHit { needle: n, start: hit.start, len };
                if self.needles[n].gps.is_some() {
                    gps.push(h);
                } else {
                    plain.push(h);
                }
            }
        }
        plain.extend(self.pair_gps(&gps));
        let mut seen = HashSet::new();
        plain.sort_by_key(|h| (h.start, h.needle));
        plain.retain(|h| seen.insert(h.needle));
        plain
    }

    fn pair_gps(&self, hits: &[NeedleHit]) -> Vec<NeedleHit> {
        let tag = |h: &NeedleHit| self.needles[h.needle].gps.expect("gps hits carry a tag");
        let mut paired: Vec<NeedleHit> = Vec::new();
        for lat in hits.iter().filter(|h| tag(h).axis == Axis::Lat) {
            let t = tag(lat);
            let chain = &self.needles[lat.needle].chain;
            let ok = hits.iter().any(|lon| {
                let u = tag(lon);
                u.axis == Axis::Lon
                    && u.tier == t.tier
                    && &self.needles[lon.needle].chain == chain
                    && (lat.start + lat.len).max(lon.start + lon.len) - lat.start.min(lon.start) <= GPS_WINDOW
            });
            if ok {
                paired.push(*lat);
            }
        }
        let keep: Vec<NeedleHit> = paired
            .iter()
            .filter(|h| {
                let t = tag(h);
                !paired.iter().any(|o| {
                    o.start == h.start && tag(o).tier < t.tier && self.needles[o.needle].chain == self.needles[h.needle].chain
                })
            })
            .copied()
            .collect();
        keep
    }
}

fn chunks(ct: &[u8]) -> Vec<&[u8]> {
    if ct.len() <= CHUNK_LEN {
        return vec![ct];
    }
    let mut out: Vec<&[u8]> = Vec::new();
    let mut pos = 0;
    while pos < ct.len() {
        let end = (pos + CHUNK_LEN).min(ct.len());
        if end - pos < MIN_CIPHERTEXT {
            let prev = out.pop().expect("a full chunk precedes a short remainder");
            let start = ct.len() - prev.len() - (end - pos);
            out.push(&ct[start..]);
        } else {
            out.push(&ct[pos..end]);
        }
        pos = end;
    }
    out
}

fn windows(text: &str, step: usize) -> Vec<Vec<u8>> {
    let b = text.as_bytes();
    if b.len() <= WINDOW_CHARS {
        return vec![b.to_vec()];
    }
    let step = if b.len() > DENSE_WINDOW_LIMIT { WINDOW_CHARS } else { step };
    let mut out: Vec<Vec<u8>> = (0..=b.len() - WINDOW_CHARS).step_by(step).map(|i| b[i..i + WINDOW_CHARS].to_vec()).collect();
    if (b.len() - WINDOW_CHARS) % step != 0 {
        out.push(b[b.len() - WINDOW_CHARS..].to_vec());
    }
    out
}

/// Base64 windows of `ct` at the three byte alignments it can take inside
/// a larger encoded stream. Characters touched by padding are dropped.
fn base64_windows(ct: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for k in 0..3 {
        if ct.len() < k + 3 {
            continue;
        }
        let body = &ct[k..];
        let whole = body.len() / 3 * 3;
        let text = STANDARD.encode(&body[..whole]);
        if text.len() >= 12 {
            out.extend(windows(&text, 4));
        }
    }
    out
}

fn hex_windows(ct: &[u8]) -> Vec<Vec<u8>> {
    windows(&hex::encode(ct), 2)
}

/// Links every encrypt operation to the units holding its ciphertext, raw,
/// base64 or hex encoded. Returns the links (one per operation and unit,
/// raw preferred, then lowest offset) and notices for skipped operations.
pub fn match_ciphertext(ops: &[CryptoOperation], units: &[SearchUnit]) -> (Vec<CipherLink>, Vec<String>) {
    let mut notes = Vec::new();
    let mut raw = Vec::new();
    let mut b64 = Vec::new();
    let mut hex = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        if op.direction != Direction::Encrypt {
            continue;
        }
        if op.ciphertext.len() < MIN_CIPHERTEXT {
            if !op.ciphertext.is_empty() {
                notes.push(format!("operation {}: ciphertext of {} bytes is too short to locate", op.op_id, op.ciphertext.len()));
            }
            continue;
        }
        raw.extend(chunks(&op.ciphertext).into_iter().map(|c| (c.to_vec(), i)));
        b64.extend(base64_windows(&op.ciphertext).into_iter().map(|w| (w, i)));
        hex.extend(hex_windows(&op.ciphertext).into_iter().map(|w| (w, i)));
    }
    let dicts = [
        (LinkEncoding::Raw, Dictionary::new(raw)),
        (LinkEncoding::Base64, Dictionary::new(b64)),
        (LinkEncoding::Hex, Dictionary::ascii_case_insensitive(hex)),
    ];
    let mut best: BTreeMap<(usize, usize), CipherLink> = BTreeMap::new();
    for (u, unit) in units.iter().enumerate() {
        for (encoding, dict) in &dicts {
            for hit in dict.find_all(&unit.bytes) {
                for &op in dict.owners(hit.pattern) {
                    let link = CipherLink { op, unit: u, offset: hit.start, encoding: *encoding };
                    best.entry((op, u))
                        .and_modify(|cur| {
                            if (link.encoding, link.offset) < (cur.encoding, cur.offset) {
                                *cur = link;
                            }
                        })
                        .or_insert(link);
                }
            }
        }
    }
    (best.into_values().collect(), notes)
}

/// Every plaintext reachable from a linked operation through nesting,
/// plus its decompressed form when it decompresses.
pub fn plaintext_views(ops: &[CryptoOperation], links: &[CipherLink]) -> Vec<PlainView> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for link in links {
        for chain in nested_chains(ops, link.op) {
            if !seen.insert((link.unit, chain.clone())) {
                continue;
            }
            let inner = &ops[*chain.last().expect("chains are non-empty")];
            if let Some(d) = decompressed(&inner.plaintext, DEFAULT_CAP) {
                out.push(PlainView { unit: link.unit, unit_offset: link.offset, chain: chain.clone(), bytes: d, decoded: true });
            }
            out.push(PlainView { unit: link.unit, unit_offset: link.offset, chain, bytes: inner.plaintext.clone(), decoded: false });
        }
    }
    out
}

/// Regular findings from searchable units and custom-encrypted findings
/// from the plaintext views of the run.
pub fn search_needles(ctx: &RunContext<'_>, index: &NeedleIndex) -> Vec<LeakFinding> {
    let b = ctx.bundle;
    let mut findings = Vec::new();
    let make = |unit: usize, hit: &NeedleHit, offset: usize, evidence: String| {
        let n = &index.needles()[hit.needle];
        let u = &ctx.units[unit];
        LeakFinding {
            app_id: b.app_id.clone(),
            run_id: b.run_id.clone(),
            device_id: b.device_id.clone(),
            pii_type: n.pii_type.clone(),
            needle_id: n.id,
            needle_chain: n.chain.clone(),
            gps_tier: n.gps.map(|g| g.tier),
            location: ctx.location(unit, offset),
            host: u.host.clone(),
            ts: u.ts,
            custom_encrypted: false,
            encryption_chain: Vec::new(),
            chain_algorithms: Vec::new(),
            plaintext_offset: None,
            evidence,
        }
    };
    for (i, unit) in ctx.units.iter().enumerate() {
        if unit.opaque {
            continue;
        }
        for hit in index.scan(&unit.bytes) {
            let ev = ctx.policy.excerpt(&unit.bytes, hit.start, hit.len);
            findings.push(make(i, &hit, hit.start, ev));
        }
    }
    let mut seen = HashSet::new();
    for view in ctx.views {
        for hit in index.scan(&view.bytes) {
            if !seen.insert((view.unit, view.chain.clone(), hit.needle)) {
                continue;
            }
            let ev = ctx.policy.excerpt(&view.bytes, hit.start, hit.len);
            let mut f = make(view.unit, &hit, view.unit_offset, ev);
            f.custom_encrypted = true;
            f.encryption_chain = view.chain.iter().map(|&o| ctx.ops[o].op_id).collect();
            f.chain_algorithms = ctx.chain_algorithms(&view.chain);
            f.plaintext_offset = Some(hit.start);
            findings.push(f);
        }
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::needles::{build_needle_set, Coordinate, GpsFix, PiiEntry, PiiProfile};

    fn profile() -> PiiProfile {
        PiiProfile {
            entries: vec![PiiEntry {
                data_type: "Device ID".parse().unwrap(),
                category: None,
                purpose: None,
                values: vec!["356938035643809".into()],
            }],
            gps: Some(GpsFix { lat: Coordinate("45.50123".into()), lon: Coordinate("-73.56789".into()) }),
            media_samples: vec![],
        }
    }

    #[test]
    fn chunking_merges_short_remainder() {
        let ct: Vec<u8> = (0..40).collect();
        let c = chunks(&ct);
        assert_eq!(c.iter().map(|c| c.len()).collect::<Vec<_>>(), [18, 22]);
        let ct: Vec<u8> = (0..44).collect();
        assert_eq!(chunks(&ct).iter().map(|c| c.len()).collect::<Vec<_>>(), [18, 18, 8]);
        assert_eq!(chunks(&ct[..10]).len(), 1);
    }

    #[test]
    fn chunks_cover_ciphertext() {
        let ct: Vec<u8> = (0..=255).collect();
        for n in 8..256 {
            let joined: Vec<u8> = chunks(&ct[..n]).concat();
            assert_eq!(joined, &ct[..n]);
        }
    }

    #[test]
    fn finer_gps_tier_suppresses_coarser() {
        let idx = NeedleIndex::new(build_needle_set(&profile()));
        let hits = idx.scan(b"{\"lat\":45.50123,\"lng\":-73.56789}");
        let tiers: Vec<_> = hits.iter().filter_map(|h| idx.needles()[h.needle].gps).map(|g| g.tier).collect();
        assert_eq!(tiers, [crate::needles::GpsTier::Fine]);
    }

    #[test]
    fn gps_reported_at_leaked_precision() {
        let idx = NeedleIndex::new(build_needle_set(&profile()));
        let hits = idx.scan(b"lat=45.501&lon=-73.567");
        let tiers: Vec<_> = hits.iter().filter_map(|h| idx.needles()[h.needle].gps).map(|g| g.tier).collect();
        assert_eq!(tiers, [crate::needles::GpsTier::Coarse]);
    }

    #[test]
    fn lone_latitude_is_not_a_leak() {
        let idx = NeedleIndex::new(build_needle_set(&profile()));
        assert!(idx.scan(b"lat=45.50123").is_empty());
        let mut far = b"lat=45.50123".to_vec();
        far.extend(vec![b' '; 600]);
        far.extend_from_slice(b"lon=-73.56789");
        assert!(idx.scan(&far).is_empty());
    }

    #[test]
    fn encoded_windows_found_at_any_alignment() {
        let ct: Vec<u8> = (0..64u8).map(|i| i.wrapping_mul(37).wrapping_add(11)).collect();
        let dict = Dictionary::new(base64_windows(&ct).into_iter().map(|w| (w, ())));
        for prefix in 0..3 {
            let mut stream = vec![0xAAu8; prefix];
            stream.extend_from_slice(&ct);
            stream.extend_from_slice(b"tail");
            assert!(dict.is_match(STANDARD.encode(&stream).as_bytes()), "prefix {prefix}");
        }
        let hdict = Dictionary::ascii_case_insensitive(hex_windows(&ct).into_iter().map(|w| (w, ())));
        assert!(hdict.is_match(hex::encode_upper(&ct).as_bytes()));
    }
}
