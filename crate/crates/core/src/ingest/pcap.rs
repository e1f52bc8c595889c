//! pcap and pcapng container reading.
//!
//! Only the framing is handled here; link-layer decoding lives in
//! [`super::packet`].

use crate::error::{Error, Result};

/// One captured link-layer frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub ts: f64,
    pub link_type: u32,
    pub data: Vec<u8>,
}

const PCAP_MAGIC_USEC: u32 = 0xa1b2_c3d4;
const PCAP_MAGIC_NSEC: u32 = 0xa1b2_3c4d;
const PCAPNG_SHB: u32 = 0x0a0d_0d0a;
const PCAPNG_BOM: u32 = 0x1a2b_3c4d;
/// Upper bound on a single record; anything larger means the stream is corrupt.
const MAX_RECORD: usize = 256 * 1024 * 1024;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn u16(self, b: &[u8]) -> u16 {
        let a = [b[0], b[1]];
        match self {
            Endian::Little => u16::from_le_bytes(a),
            Endian::Big => u16::from_be_bytes(a),
        }
    }

    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => u32::from_le_bytes(a),
            Endian::Big => u32::from_be_bytes(a),
        }
    }
}

/// Reads every frame of a pcap or pcapng byte stream.
///
/// A zero-length input is an empty capture. A truncated trailing record is
/// dropped with a warning; a malformed file header is fatal.
pub fn read_frames(bytes: &[u8], warnings: &mut Vec<String>) -> Result<Vec<Frame>> {
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    if bytes.len() < 4 {
        return Err(Error::MalformedCapture("file shorter than a magic number".into()));
    }
    let magic = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if magic == PCAPNG_SHB {
        read_pcapng(bytes, warnings)
    } else {
        read_pcap(bytes, warnings)
    }
}

fn read_pcap(bytes: &[u8], warnings: &mut Vec<String>) -> Result<Vec<Frame>> {
    if bytes.len() < 24 {
        return Err(Error::MalformedCapture("truncated pcap global header".into()));
    }
    let le = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let be = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let (endian, nanos) = match (le, be) {
        (PCAP_MAGIC_USEC, _) => (Endian::Little, false),
        (PCAP_MAGIC_NSEC, _) => (Endian::Little, true),
        (_, PCAP_MAGIC_USEC) => (Endian::Big, false),
        (_, PCAP_MAGIC_NSEC) => (Endian::Big, true),
        _ => {
            return Err(Error::MalformedCapture(format!(
                "unrecognised magic number {le:#010x}"
            )))
        }
    };
    let link_type = endian.u32(&bytes[20..24]) & 0x0fff_ffff;
    let divisor = if nanos { 1e9 } else { 1e6 };

    let mut frames = Vec::new();
    let mut pos = 24;
    while pos < bytes.len() {
        if bytes.len() - pos < 16 {
            warnings.push(format!("truncated record header at byte {pos}; dropped"));
            break;
        }
        let h = &bytes[pos..pos + 16];
        let secs = endian.u32(&h[0..4]) as f64;
        let frac = endian.u32(&h[4..8]) as f64;
        let incl = endian.u32(&h[8..12]) as usize;
        if incl > MAX_RECORD {
            warnings.push(format!("implausible record length {incl} at byte {pos}; stopped"));
            break;
        }
        let body = pos + 16;
        if bytes.len() - body < incl {
            warnings.push(format!("truncated trailing packet at byte {pos}; dropped"));
            break;
        }
        frames.push(Frame {
            ts: secs + frac / divisor,
            link_type,
            data: bytes[body..body + incl].to_vec(),
        });
        pos = body + incl;
    }
    Ok(frames)
}

struct Interface {
    link_type: u32,
    /// Seconds per timestamp unit.
    resolution: f64,
}

fn read_pcapng(bytes: &[u8], warnings: &mut Vec<String>) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    let mut interfaces: Vec<Interface> = Vec::new();
    let mut endian = Endian::Little;
    let mut pos = 0;
    let mut first = true;

    while pos < bytes.len() {
        if bytes.len() - pos < 12 {
            if first {
                return Err(Error::MalformedCapture("truncated section header".into()));
            }
            warnings.push(format!("truncated block at byte {pos}; dropped"));
            break;
        }
        let raw_type = u32::from_le_bytes([bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]]);
        if raw_type == PCAPNG_SHB {
            let bom = &bytes[pos + 8..pos + 12];
            endian = if u32::from_le_bytes([bom[0], bom[1], bom[2], bom[3]]) == PCAPNG_BOM {
                Endian::Little
            } else if u32::from_be_bytes([bom[0], bom[1], bom[2], bom[3]]) == PCAPNG_BOM {
                Endian::Big
            } else {
                return Err(Error::MalformedCapture("bad pcapng byte-order magic".into()));
            };
            interfaces.clear();
        } else if first {
            return Err(Error::MalformedCapture("pcapng must start with a section header".into()));
        }
        first = false;

        let block_type = endian.u32(&bytes[pos..pos + 4]);
        let total = endian.u32(&bytes[pos + 4..pos + 8]) as usize;
        if total < 12 || total % 4 != 0 || total > MAX_RECORD {
            if raw_type == PCAPNG_SHB && pos == 0 {
                return Err(Error::MalformedCapture(format!("bad section length {total}")));
            }
            warnings.push(format!("corrupt block length {total} at byte {pos}; stopped"));
            break;
        }
        if bytes.len() - pos < total {
            warnings.push(format!("truncated trailing block at byte {pos}; dropped"));
            break;
        }
        let body = &bytes[pos + 8..pos + total - 4];
        match block_type {
            // Interface description
            1 if body.len() >= 8 => {
                let link_type = endian.u16(&body[0..2]) as u32;
                let resolution = interface_resolution(&body[8..], endian);
                interfaces.push(Interface {
                    link_type,
                    resolution,
                });
            }
            // Enhanced packet
            6 if body.len() >= 20 => {
                let iface = endian.u32(&body[0..4]) as usize;
                let ts_raw = ((endian.u32(&body[4..8]) as u64) << 32) | endian.u32(&body[8..12]) as u64;
                let cap = endian.u32(&body[12..16]) as usize;
                match (interfaces.get(iface), body.get(20..20 + cap)) {
                    (Some(i), Some(data)) => frames.push(Frame {
                        ts: ts_raw as f64 * i.resolution,
                        link_type: i.link_type,
                        data: data.to_vec(),
                    }),
                    (None, _) => warnings.push(format!("packet for unknown interface {iface}; dropped")),
                    (_, None) => warnings.push(format!("packet overruns its block at byte {pos}; dropped")),
                }
            }
            // Simple packet
            3 if body.len() >= 4 => {
                let orig = endian.u32(&body[0..4]) as usize;
                let cap = orig.min(body.len() - 4);
                if let Some(i) = interfaces.first() {
                    frames.push(Frame {
                        ts: 0.0,
                        link_type: i.link_type,
                        data: body[4..4 + cap].to_vec(),
                    });
                }
            }
            // Obsolete packet block
            2 if body.len() >= 20 => {
                let iface = endian.u16(&body[0..2]) as usize;
                let ts_raw = ((endian.u32(&body[4..8]) as u64) << 32) | endian.u32(&body[8..12]) as u64;
                let cap = endian.u32(&body[12..16]) as usize;
                if let (Some(i), Some(data)) = (interfaces.get(iface), body.get(20..20 + cap)) {
                    frames.push(Frame {
                        ts: ts_raw as f64 * i.resolution,
                        link_type: i.link_type,
                        data: data.to_vec(),
                    });
                }
            }
            _ => {}
        }
        pos += total;
    }
    Ok(frames)
}

fn interface_resolution(mut options: &[u8], endian: Endian) -> f64 {
    let mut resolution = 1e-6;
    while options.len() >= 4 {
        let code = endian.u16(&options[0..2]);
        let len = endian.u16(&options[2..4]) as usize;
        let padded = (len + 3) & !3;
        if code == 0 || options.len() < 4 + padded {
            break;
        }
        if code == 9 && len >= 1 {
            let v = options[4];
            resolution = if v & 0x80 == 0 {
                10f64.powi(-((v & 0x7f) as i32))
            } else {
                2f64.powi(-((v & 0x7f) as i32))
            };
        }
        options = &options[4 + padded..];
    }
    resolution
}
