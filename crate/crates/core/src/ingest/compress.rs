//! Detection and bounded decompression of gzip, zlib and raw deflate data.

use std::io::Read;

use flate2::read::{GzDecoder, ZlibDecoder};
use serde::{Deserialize, Serialize};

/// Default per-payload output cap.
pub const DEFAULT_CAP: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionTag {
    None,
    Gzip,
    Zlib,
    Deflate,
    Corrupt,
    Truncated,
}

fn looks_zlib(b: &[u8]) -> bool {
    b.len() >= 2 && b[0] & 0x0f == 8 && b[0] >> 4 <= 7 && (u16::from(b[0]) << 8 | u16::from(b[1])) % 31 == 0
}

enum Outcome {
    Done(Vec<u8>),
    Capped(Vec<u8>),
    Failed,
}

fn inflate<R: Read>(reader: R, cap: usize) -> Outcome {
    let mut out = Vec::new();
    match reader.take(cap as u64 + 1).read_to_end(&mut out) {
        Ok(_) if out.len() > cap => {
            out.truncate(cap);
            Outcome::Capped(out)
        }
        Ok(_) => Outcome::Done(out),
        Err(_) => Outcome::Failed,
    }
}

/// Raw deflate has no header, so it is only accepted when the whole input
/// decodes as one complete stream.
fn inflate_raw(bytes: &[u8], cap: usize) -> Option<Outcome> {
    let mut decoder = flate2::Decompress::new(false);
    let mut out = Vec::with_capacity(4096);
    loop {
        let consumed = decoder.total_in();
        let produced = decoder.total_out();
        let status = decoder
            .decompress_vec(&bytes[consumed as usize..], &mut out, flate2::FlushDecompress::None)
            .ok()?;
        if out.len() > cap {
            out.truncate(cap);
            return Some(Outcome::Capped(out));
        }
        if status == flate2::Status::StreamEnd {
            return (decoder.total_in() as usize == bytes.len() && !out.is_empty())
                .then_some(Outcome::Done(out));
        }
        if out.len() == out.capacity() {
            out.reserve(out.capacity());
        } else if decoder.total_in() == consumed && decoder.total_out() == produced {
            // input exhausted before the final block
            return None;
        }
    }
}

/// Decompresses `bytes` when they carry a gzip, zlib or raw deflate stream.
///
/// Corrupt streams yield the input unchanged with tag `Corrupt`; output
/// beyond `cap` bytes is cut with tag `Truncated`.
pub fn decompress_payload(bytes: &[u8], cap: usize) -> (Vec<u8>, CompressionTag) {
    let (outcome, tag) = if bytes.starts_with(&[0x1f, 0x8b]) {
        (inflate(GzDecoder::new(bytes), cap), CompressionTag::Gzip)
    } else if looks_zlib(bytes) {
        (inflate(ZlibDecoder::new(bytes), cap), CompressionTag::Zlib)
    } else if bytes.len() >= 2 {
        match inflate_raw(bytes, cap) {
            Some(o) => (o, CompressionTag::Deflate),
            None => return (bytes.to_vec(), CompressionTag::None),
        }
    } else {
        return (bytes.to_vec(), CompressionTag::None);
    };
    match outcome {
        Outcome::Done(out) => (out, tag),
        Outcome::Capped(out) => (out, CompressionTag::Truncated),
        Outcome::Failed => (bytes.to_vec(), CompressionTag::Corrupt),
    }
}

/// Convenience for callers that only care about successful decompression.
pub fn decompressed(bytes: &[u8], cap: usize) -> Option<Vec<u8>> {
    match decompress_payload(bytes, cap) {
        (out, CompressionTag::Gzip | CompressionTag::Zlib | CompressionTag::Deflate | CompressionTag::Truncated) => Some(out),
        _ => None,
    }
}
