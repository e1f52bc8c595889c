//! Rebuilding whole cipher operations from per-call hook events.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::algorithm::{rsa_modulus_bits, Algorithm, CipherFamily};
use super::event::{CipherEvent, Method, OpKind};
use crate::codec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Encrypt,
    Decrypt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CryptoOperation {
    pub op_id: usize,
    pub object_id: String,
    pub algorithm: Algorithm,
    #[serde(with = "codec::b64_opt")]
    pub key: Option<Vec<u8>>,
    #[serde(with = "codec::b64_opt")]
    pub iv: Option<Vec<u8>>,
    pub direction: Direction,
    #[serde(with = "codec::b64")]
    pub plaintext: Vec<u8>,
    #[serde(with = "codec::b64")]
    pub ciphertext: Vec<u8>,
    pub source_events: Vec<u64>,
    pub first_ts: f64,
    pub last_ts: f64,
    pub parent_op: Option<usize>,
    pub depth: u32,
    /// Operations whose ciphertext occurs in this operation's plaintext.
    pub children: Vec<usize>,
    /// Data events seen without a preceding init.
    pub orphan: bool,
    /// Never closed by a finalization call.
    pub incomplete: bool,
    pub nonsdk: bool,
    /// Involved in a containment cycle that had to be broken.
    pub anomaly: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Clone)]
struct Params {
    algorithm: Option<String>,
    key: Option<Vec<u8>>,
    iv: Option<Vec<u8>>,
    key_bits: Option<u32>,
    op_kind: OpKind,
}

struct Pending {
    object_id: String,
    params: Option<Params>,
    event_kind: OpKind,
    events: Vec<u64>,
    input: Vec<u8>,
    output: Vec<u8>,
    first_ts: f64,
    last_ts: f64,
}

fn direction_of(kind: OpKind) -> Direction {
    match kind {
        OpKind::Decrypt => Direction::Decrypt,
        OpKind::Encrypt | OpKind::Unknown => Direction::Encrypt,
    }
}

fn algorithm_for(params: Option<&Params>) -> Algorithm {
    let Some(p) = params else {
        return Algorithm::unknown();
    };
    let mut alg = p.algorithm.as_deref().map(Algorithm::parse).unwrap_or_else(Algorithm::unknown);
    if alg.family == CipherFamily::Rsa {
        alg.rsa_bits = p.key_bits.or_else(|| p.key.as_deref().and_then(rsa_modulus_bits));
    }
    alg
}

fn finish(p: Pending, incomplete: bool) -> CryptoOperation {
    let kind = match p.params.as_ref().map(|x| x.op_kind) {
        Some(OpKind::Unknown) | None => p.event_kind,
        Some(k) => k,
    };
    let direction = direction_of(kind);
    let (plaintext, ciphertext) = match direction {
        Direction::Encrypt => (p.input, p.output),
        Direction::Decrypt => (p.output, p.input),
    };
    CryptoOperation {
        op_id: 0,
        object_id: p.object_id,
        algorithm: algorithm_for(p.params.as_ref()),
        key: p.params.as_ref().and_then(|x| x.key.clone()),
        iv: p.params.as_ref().and_then(|x| x.iv.clone()),
        direction,
        plaintext,
        ciphertext,
        source_events: p.events,
        first_ts: p.first_ts,
        last_ts: p.last_ts,
        parent_op: None,
        depth: 1,
        children: Vec::new(),
        orphan: p.params.is_none(),
        incomplete,
        nonsdk: false,
        anomaly: false,
        name: None,
    }
}

/// True when an update/do_final event announces parameters that differ
/// from the ones in force.
fn changes_params(ev: &CipherEvent, current: &Params) -> bool {
    let differs = |new: &Option<Vec<u8>>, old: &Option<Vec<u8>>| new.is_some() && new != old;
    (ev.algorithm.is_some() && ev.algorithm != current.algorithm)
        || differs(&ev.key, &current.key)
        || differs(&ev.iv, &current.iv)
}

/// Words in a non-SDK method name that reveal its direction.
fn kind_from_name(name: Option<&str>) -> OpKind {
    let Some(n) = name.map(str::to_ascii_lowercase) else {
        return OpKind::Unknown;
    };
    if n.contains("decrypt") || n.contains("decode") || n.starts_with("dec") {
        OpKind::Decrypt
    } else if n.contains("encrypt") || n.contains("encode") || n.starts_with("enc") {
        OpKind::Encrypt
    } else {
        OpKind::Unknown
    }
}

fn nonsdk_operation(ev: &CipherEvent) -> CryptoOperation {
    let kind = match ev.op_kind {
        OpKind::Unknown => kind_from_name(ev.name.as_deref()),
        k => k,
    };
    let candidates = super::keys::key_candidate_indices(&ev.args);
    // the data argument is the longest one that is not a key candidate
    let data = ev
        .args
        .iter()
        .enumerate()
        .filter(|(i, _)| !candidates.contains(i))
        .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
        .map(|(_, a)| a.clone())
        .or_else(|| ev.input.clone())
        .unwrap_or_default();
    let output = ev.output.clone().unwrap_or_default();
    let direction = direction_of(kind);
    let (plaintext, ciphertext) = match direction {
        Direction::Encrypt => (data, output),
        Direction::Decrypt => (output, data),
    };
    CryptoOperation {
        op_id: 0,
        object_id: ev.object_id.clone(),
        algorithm: ev.algorithm.as_deref().map(Algorithm::parse).unwrap_or_else(Algorithm::unknown),
        key: None,
        iv: None,
        direction,
        plaintext,
        ciphertext,
        source_events: vec![ev.event_id],
        first_ts: ev.ts,
        last_ts: ev.ts,
        parent_op: None,
        depth: 1,
        children: Vec::new(),
        orphan: false,
        incomplete: false,
        nonsdk: true,
        anomaly: false,
        name: ev.name.clone(),
    }
}

/// Groups events per cipher object and cuts them into operations: an init
/// or a parameter change starts a new operation, a finalization call ends
/// one. Parameters stay in force after finalization, as a cipher object
/// can be reused. Operations are numbered by start time.
pub fn assemble_operations(events: &[CipherEvent]) -> Vec<CryptoOperation> {
    let mut ops = Vec::new();
    let mut params: BTreeMap<&str, Params> = BTreeMap::new();
    let mut pending: BTreeMap<&str, Pending> = BTreeMap::new();

    for ev in events {
        let obj = ev.object_id.as_str();
        match ev.method {
            Method::NonsdkCall => ops.push(nonsdk_operation(ev)),
            Method::Init => {
                if let Some(p) = pending.remove(obj) {
                    ops.push(finish(p, true));
                }
                params.insert(
                    obj,
                    Params {
                        algorithm: ev.algorithm.clone(),
                        key: ev.key.clone(),
                        iv: ev.iv.clone(),
                        key_bits: ev.key_bits,
                        op_kind: ev.op_kind,
                    },
                );
            }
            Method::Update | Method::DoFinal => {
                if let Some(cur) = params.get_mut(obj) {
                    if changes_params(ev, cur) {
                        if let Some(p) = pending.remove(obj) {
                            ops.push(finish(p, true));
                        }
                        if ev.algorithm.is_some() {
                            cur.algorithm = ev.algorithm.clone();
                        }
                        if ev.key.is_some() {
                            cur.key = ev.key.clone();
                        }
                        if ev.iv.is_some() {
                            cur.iv = ev.iv.clone();
                        }
                    }
                }
                let current = params.get(obj).cloned();
                let p = pending.entry(obj).or_insert_with(|| Pending {
                    object_id: obj.to_string(),
                    params: current,
                    event_kind: ev.op_kind,
                    events: Vec::new(),
                    input: Vec::new(),
                    output: Vec::new(),
                    first_ts: ev.ts,
                    last_ts: ev.ts,
                });
                if p.event_kind == OpKind::Unknown {
                    p.event_kind = ev.op_kind;
                }
                p.events.push(ev.event_id);
                p.input.extend_from_slice(ev.input.as_deref().unwrap_or_default());
                p.output.extend_from_slice(ev.output.as_deref().unwrap_or_default());
                p.last_ts = ev.ts;
                if ev.method == Method::DoFinal {
                    let p = pending.remove(obj).expect("pending entry just inserted");
                    ops.push(finish(p, false));
                }
            }
        }
    }
    ops.extend(pending.into_values().map(|p| finish(p, true)));
    ops.sort_by(|a, b| {
        a.first_ts
            .total_cmp(&b.first_ts)
            .then_with(|| a.source_events.first().cmp(&b.source_events.first()))
    });
    for (i, op) in ops.iter_mut().enumerate() {
        op.op_id = i;
    }
    ops
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: u64, obj: &str, method: Method) -> CipherEvent {
        CipherEvent {
            event_id: id,
            object_id: obj.into(),
            ts: id as f64,
            method,
            op_kind: OpKind::Unknown,
            algorithm: None,
            key: None,
            iv: None,
            key_bits: None,
            input: None,
            output: None,
            args: Vec::new(),
            name: None,
        }
    }

    fn init(id: u64, obj: &str, alg: &str, key: &[u8], iv: Option<&[u8]>) -> CipherEvent {
        CipherEvent {
            algorithm: Some(alg.into()),
            key: Some(key.to_vec()),
            iv: iv.map(<[u8]>::to_vec),
            op_kind: OpKind::Encrypt,
            ..ev(id, obj, Method::Init)
        }
    }

    fn data(id: u64, obj: &str, method: Method, i: &[u8], o: &[u8]) -> CipherEvent {
        CipherEvent {
            input: Some(i.to_vec()),
            output: Some(o.to_vec()),
            ..ev(id, obj, method)
        }
    }

    #[test]
    fn single_part() {
        let ops = assemble_operations(&[
            init(1, "o", "AES/CBC/PKCS5Padding", &[1; 16], Some(&[2; 16])),
            data(2, "o", Method::DoFinal, b"p", b"c"),
        ]);
        assert_eq!(ops.len(), 1);
        assert_eq!(ops[0].plaintext, b"p");
        assert_eq!(ops[0].ciphertext, b"c");
        assert_eq!(ops[0].source_events, [2]);
        assert_eq!(ops[0].direction, Direction::Encrypt);
        assert!(!ops[0].orphan && !ops[0].incomplete);
    }

    #[test]
    fn multi_part_concatenates() {
        let ops = assemble_operations(&[
            init(1, "o", "AES/CBC/PKCS5Padding", &[1; 16], Some(&[2; 16])),
            data(2, "o", Method::Update, b"p1", b"c1"),
            data(3, "o", Method::Update, b"p2", b"c2"),
            data(4, "o", Method::DoFinal, b"p3", b"c3"),
        ]);
        assert_eq!(ops.len(), 1);
        assert_eq!(ops[0].plaintext, b"p1p2p3");
        assert_eq!(ops[0].ciphertext, b"c1c2c3");
    }

    #[test]
    fn reinit_splits() {
        let ops = assemble_operations(&[
            init(1, "o", "AES/CBC/PKCS5Padding", &[1; 16], Some(&[2; 16])),
            data(2, "o", Method::Update, b"p1", b"c1"),
            init(3, "o", "AES/CBC/PKCS5Padding", &[1; 16], Some(&[3; 16])),
            data(4, "o", Method::DoFinal, b"p2", b"c2"),
        ]);
        assert_eq!(ops.len(), 2);
        assert_eq!(ops[0].ciphertext, b"c1");
        assert!(ops[0].incomplete);
        assert_eq!(ops[1].ciphertext, b"c2");
        assert_eq!(ops[1].iv.as_deref(), Some(&[3u8; 16][..]));
    }

    #[test]
    fn parameter_change_on_data_event_splits() {
        let mut changed = data(3, "o", Method::DoFinal, b"p2", b"c2");
        changed.iv = Some(vec![9; 16]);
        let ops = assemble_operations(&[
            init(1, "o", "AES/CBC/PKCS5Padding", &[1; 16], Some(&[2; 16])),
            data(2, "o", Method::Update, b"p1", b"c1"),
            changed,
        ]);
        assert_eq!(ops.len(), 2);
        assert_eq!(ops[1].iv.as_deref(), Some(&[9u8; 16][..]));
    }

    #[test]
    fn params_survive_do_final() {
        let ops = assemble_operations(&[
            init(1, "o", "DES/ECB/PKCS5Padding", &[1; 8], None),
            data(2, "o", Method::DoFinal, b"a", b"A"),
            data(3, "o", Method::DoFinal, b"b", b"B"),
        ]);
        assert_eq!(ops.len(), 2);
        assert!(ops.iter().all(|o| o.algorithm.family == CipherFamily::Des && !o.orphan));
    }

    #[test]
    fn orphan_is_flagged() {
        let mut e = data(1, "x", Method::DoFinal, b"p", b"c");
        e.op_kind = OpKind::Decrypt;
        let ops = assemble_operations(&[e]);
        assert!(ops[0].orphan);
        assert_eq!(ops[0].algorithm.family, CipherFamily::Unknown);
        assert_eq!(ops[0].direction, Direction::Decrypt);
        assert_eq!(ops[0].plaintext, b"c");
    }

    #[test]
    fn interleaved_objects() {
        let ops = assemble_operations(&[
            init(1, "a", "AES/ECB/PKCS5Padding", &[1; 16], None),
            init(2, "b", "RC4", &[2; 16], None),
            data(3, "a", Method::Update, b"a1", b"A1"),
            data(4, "b", Method::DoFinal, b"b1", b"B1"),
            data(5, "a", Method::DoFinal, b"a2", b"A2"),
        ]);
        assert_eq!(ops.len(), 2);
        let a = ops.iter().find(|o| o.object_id == "a").unwrap();
        assert_eq!(a.ciphertext, b"A1A2");
        assert_eq!(a.op_id, 0);
    }

    #[test]
    fn nonsdk_call_forms_one_operation() {
        let mut e = ev(1, "native", Method::NonsdkCall);
        e.args = vec![vec![7; 16], b"the plaintext argument that is long".to_vec()];
        e.output = Some(vec![0xaa; 40]);
        e.name = Some("encryptData".into());
        let ops = assemble_operations(&[e]);
        assert_eq!(ops.len(), 1);
        assert!(ops[0].nonsdk);
        assert!(ops[0].key.is_none());
        assert_eq!(ops[0].plaintext, b"the plaintext argument that is long");
        assert_eq!(ops[0].ciphertext, vec![0xaa; 40]);
    }

    #[test]
    fn rsa_bits_from_event() {
        let mut i = init(1, "r", "RSA/ECB/NoPadding", &[0x30, 0x00], None);
        i.key_bits = Some(512);
        let ops = assemble_operations(&[i, data(2, "r", Method::DoFinal, b"m", b"c")]);
        assert_eq!(ops[0].algorithm.rsa_bits, Some(512));
        assert_eq!(ops[0].algorithm.label(), "RSA-512");
    }
}
