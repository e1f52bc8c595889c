//! Link, network and transport decoding with IP fragment reassembly.

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};

use serde::{Deserialize, Serialize};

use super::pcap::{read_frames, Frame};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Udp,
}

impl std::fmt::Display for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Transport::Tcp => "tcp",
            Transport::Udp => "udp",
        })
    }
}

pub mod tcp_flags {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const PSH: u8 = 0x08;
    pub const ACK: u8 = 0x10;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpMeta {
    pub seq: u32,
    pub ack: u32,
    pub flags: u8,
}

impl TcpMeta {
    pub fn has(&self, flag: u8) -> bool {
        self.flags & flag != 0
    }
}

/// A transport-layer unit: one UDP datagram or one TCP segment, with any IP
/// fragmentation already undone.
#[derive(Debug, Clone, PartialEq)]
pub struct Datagram {
    pub transport: Transport,
    pub src: SocketAddr,
    pub dst: SocketAddr,
    pub ts: f64,
    pub payload: Vec<u8>,
    pub tcp: Option<TcpMeta>,
}

#[derive(Debug, Default)]
pub struct ParsedCapture {
    pub datagrams: Vec<Datagram>,
    pub warnings: Vec<String>,
}

/// Parses a pcap/pcapng capture into transport datagrams.
///
/// IPv4 and IPv6 fragments are reassembled before transport decoding, so a
/// fragmented UDP datagram is emitted exactly once with its full payload.
/// TCP segments are emitted individually for later stream assembly.
pub fn parse_pcap(capture: &[u8]) -> Result<ParsedCapture> {
    let mut out = ParsedCapture::default();
    let frames = read_frames(capture, &mut out.warnings)?;
    let mut defrag = Defragmenter::default();
    for frame in &frames {
        decode_frame(frame, &mut defrag, &mut out);
    }
    let pending = defrag.pending();
    if pending > 0 {
        out.warnings
            .push(format!("{pending} incomplete fragmented datagram(s) dropped"));
    }
    Ok(out)
}

fn decode_frame(frame: &Frame, defrag: &mut Defragmenter, out: &mut ParsedCapture) {
    let Some(l3) = network_layer(frame.link_type, &frame.data) else {
        return;
    };
    let Some(first) = l3.first() else { return };
    let packet = match first >> 4 {
        4 => parse_ipv4(l3),
        6 => parse_ipv6(l3),
        _ => None,
    };
    let Some(packet) = packet else { return };
    let whole = match packet.fragment {
        None => Some((packet.payload.to_vec(), frame.ts)),
        Some(frag) => defrag.push(
            FragKey {
                src: packet.src,
                dst: packet.dst,
                proto: packet.proto,
                id: frag.id,
            },
            frag.offset,
            frag.more,
            packet.payload,
            frame.ts,
        ),
    };
    let Some((payload, ts)) = whole else { return };
    match packet.proto {
        6 => match parse_tcp(&payload) {
            Some((sport, dport, meta, data)) => out.datagrams.push(Datagram {
                transport: Transport::Tcp,
                src: SocketAddr::new(packet.src, sport),
                dst: SocketAddr::new(packet.dst, dport),
                ts,
                payload: data.to_vec(),
                tcp: Some(meta),
            }),
            None => out.warnings.push(format!("malformed TCP header at t={ts}")),
        },
        17 => match parse_udp(&payload) {
            Some((sport, dport, data)) => out.datagrams.push(Datagram {
                transport: Transport::Udp,
                src: SocketAddr::new(packet.src, sport),
                dst: SocketAddr::new(packet.dst, dport),
                ts,
                payload: data.to_vec(),
                tcp: None,
            }),
            None => out.warnings.push(format!("malformed UDP header at t={ts}")),
        },
        _ => {}
    }
}

/// Strips the link-layer header, returning the IP packet.
fn network_layer(link_type: u32, data: &[u8]) -> Option<&[u8]> {
    match link_type {
        // Ethernet, with optional 802.1Q / QinQ tags
        1 => {
            let mut ethertype = u16::from_be_bytes([*data.get(12)?, *data.get(13)?]);
            let mut off = 14;
            while ethertype == 0x8100 || ethertype == 0x88a8 {
                ethertype = u16::from_be_bytes([*data.get(off + 2)?, *data.get(off + 3)?]);
                off += 4;
            }
            match ethertype {
                0x0800 | 0x86dd => data.get(off..),
                _ => None,
            }
        }
        // Raw IP
        12 | 14 | 101 | 228 | 229 => Some(data),
        // BSD loopback: 4-byte address family
        0 | 108 => data.get(4..),
        // Linux cooked v1
        113 => {
            let proto = u16::from_be_bytes([*data.get(14)?, *data.get(15)?]);
            matches!(proto, 0x0800 | 0x86dd).then(|| &data[16..])
        }
        // Linux cooked v2
        276 => {
            let proto = u16::from_be_bytes([*data.first()?, *data.get(1)?]);
            matches!(proto, 0x0800 | 0x86dd).then(|| data.get(20..)).flatten()
        }
        _ => None,
    }
}

struct FragInfo {
    id: u32,
    offset: usize,
    more: bool,
}

struct IpPacket<'a> {
    src: IpAddr,
    dst: IpAddr,
    proto: u8,
    payload: &'a [u8],
    fragment: Option<FragInfo>,
}

fn parse_ipv4(data: &[u8]) -> Option<IpPacket<'_>> {
    if data.len() < 20 {
        return None;
    }
    let ihl = (data[0] & 0x0f) as usize * 4;
    let total = u16::from_be_bytes([data[2], data[3]]) as usize;
    if ihl < 20 || total < ihl {
        return None;
    }
    // Frames may carry link padding past the IP total length, or be
    // truncated by the snap length.
    let end = total.min(data.len());
    let payload = data.get(ihl..end)?;
    let id = u16::from_be_bytes([data[4], data[5]]) as u32;
    let flags_frag = u16::from_be_bytes([data[6], data[7]]);
    let more = flags_frag & 0x2000 != 0;
    let offset = (flags_frag & 0x1fff) as usize * 8;
    let src = Ipv4Addr::new(data[12], data[13], data[14], data[15]);
    let dst = Ipv4Addr::new(data[16], data[17], data[18], data[19]);
    Some(IpPacket {
        src: IpAddr::V4(src),
        dst: IpAddr::V4(dst),
        proto: data[9],
        payload,
        fragment: (more || offset > 0).then_some(FragInfo { id, offset, more }),
    })
}

fn parse_ipv6(data: &[u8]) -> Option<IpPacket<'_>> {
    if data.len() < 40 {
        return None;
    }
    let payload_len = u16::from_be_bytes([data[4], data[5]]) as usize;
    let end = (40 + payload_len).min(data.len());
    let src: [u8; 16] = data[8..24].try_into().ok()?;
    let dst: [u8; 16] = data[24..40].try_into().ok()?;
    let mut next = data[6];
    let mut off = 40;
    let mut fragment = None;
    loop {
        match next {
            // hop-by-hop, routing, destination options
            0 | 43 | 60 => {
                let h = data.get(off..off + 2)?;
                next = h[0];
                off += (h[1] as usize + 1) * 8;
            }
            // authentication header
            51 => {
                let h = data.get(off..off + 2)?;
                next = h[0];
                off += (h[1] as usize + 2) * 4;
            }
            44 => {
                let h = data.get(off..off + 8)?;
                next = h[0];
                let fo = u16::from_be_bytes([h[2], h[3]]);
                fragment = Some(FragInfo {
                    id: u32::from_be_bytes([h[4], h[5], h[6], h[7]]),
                    offset: (fo >> 3) as usize * 8,
                    more: fo & 1 != 0,
                });
                off += 8;
            }
            _ => break,
        }
    }
    Some(IpPacket {
        src: IpAddr::V6(Ipv6Addr::from(src)),
        dst: IpAddr::V6(Ipv6Addr::from(dst)),
        proto: next,
        payload: data.get(off..end)?,
        fragment,
    })
}

fn parse_tcp(data: &[u8]) -> Option<(u16, u16, TcpMeta, &[u8])> {
    if data.len() < 20 {
        return None;
    }
    let data_off = (data[12] >> 4) as usize * 4;
    if data_off < 20 || data_off > data.len() {
        return None;
    }
    Some((
        u16::from_be_bytes([data[0], data[1]]),
        u16::from_be_bytes([data[2], data[3]]),
        TcpMeta {
            seq: u32::from_be_bytes([data[4], data[5], data[6], data[7]]),
            ack: u32::from_be_bytes([data[8], data[9], data[10], data[11]]),
            flags: data[13],
        },
        &data[data_off..],
    ))
}

fn parse_udp(data: &[u8]) -> Option<(u16, u16, &[u8])> {
    if data.len() < 8 {
        return None;
    }
    let len = u16::from_be_bytes([data[4], data[5]]) as usize;
    // A zero length field is legal for jumbograms; fall back to what we have.
    let end = if len >= 8 { len.min(data.len()) } else { data.len() };
    Some((
        u16::from_be_bytes([data[0], data[1]]),
        u16::from_be_bytes([data[2], data[3]]),
        &data[8..end],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct FragKey {
    src: IpAddr,
    dst: IpAddr,
    proto: u8,
    id: u32,
}

#[derive(Default)]
struct FragBuffer {
    first_ts: f64,
    pieces: Vec<(usize, Vec<u8>)>,
    total: Option<usize>,
}

impl FragBuffer {
    fn assemble(&self) -> Option<Vec<u8>> {
        let total = self.total?;
        let mut buf = vec![0u8; total];
        let mut have = vec![false; total];
        for (off, bytes) in &self.pieces {
            for (i, &b) in bytes.iter().enumerate() {
                let at = off + i;
                if at < total && !have[at] {
                    buf[at] = b;
                    have[at] = true;
                }
            }
        }
        have.iter().all(|&h| h).then_some(buf)
    }
}

/// Maximum reassembled IP datagram.
const MAX_DATAGRAM: usize = 65_535 + 8;

#[derive(Default)]
struct Defragmenter {
    buffers: HashMap<FragKey, FragBuffer>,
}

impl Defragmenter {
    fn push(
        &mut self,
        key: FragKey,
        offset: usize,
        more: bool,
        payload: &[u8],
        ts: f64,
    ) -> Option<(Vec<u8>, f64)> {
        if offset + payload.len() > MAX_DATAGRAM {
            return None;
        }
        let buf = self.buffers.entry(key).or_insert_with(|| FragBuffer {
            first_ts: ts,
            ..Default::default()
        });
        buf.pieces.push((offset, payload.to_vec()));
        if !more {
            buf.total = Some(offset + payload.len());
        }
        let whole = buf.assemble()?;
        let ts = buf.first_ts;
        self.buffers.remove(&key);
        Some((whole, ts))
    }

    fn pending(&self) -> usize {
        self.buffers.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ipv4(proto: u8, id: u16, frag_field: u16, payload: &[u8]) -> Vec<u8> {
        let mut p = vec![0x45, 0];
        p.extend_from_slice(&((20 + payload.len()) as u16).to_be_bytes());
        p.extend_from_slice(&id.to_be_bytes());
        p.extend_from_slice(&frag_field.to_be_bytes());
        p.extend_from_slice(&[64, proto, 0, 0, 10, 0, 0, 2, 8, 8, 4, 4]);
        p.extend_from_slice(payload);
        p
    }

    fn udp(sport: u16, dport: u16, data: &[u8]) -> Vec<u8> {
        let mut u = Vec::new();
        u.extend_from_slice(&sport.to_be_bytes());
        u.extend_from_slice(&dport.to_be_bytes());
        u.extend_from_slice(&((8 + data.len()) as u16).to_be_bytes());
        u.extend_from_slice(&[0, 0]);
        u.extend_from_slice(data);
        u
    }

    fn frames(packets: Vec<Vec<u8>>) -> ParsedCapture {
        let mut out = ParsedCapture::default();
        let mut d = Defragmenter::default();
        for (i, data) in packets.into_iter().enumerate() {
            let f = Frame {
                ts: i as f64,
                link_type: 101,
                data,
            };
            decode_frame(&f, &mut d, &mut out);
        }
        out
    }

    #[test]
    fn dns_query_passthrough() {
        let out = frames(vec![ipv4(17, 1, 0, &udp(40000, 53, b"\x12\x34query"))]);
        assert_eq!(out.datagrams.len(), 1);
        assert_eq!(out.datagrams[0].dst.port(), 53);
        assert_eq!(out.datagrams[0].transport, Transport::Udp);
    }

    #[test]
    fn fragmented_udp_reassembles_once() {
        let data: Vec<u8> = (0..3000u32).map(|i| (i % 251) as u8).collect();
        let whole = udp(40000, 9999, &data);
        let cut = 1480;
        let f1 = ipv4(17, 7, 0x2000, &whole[..cut]);
        let f2 = ipv4(17, 7, (cut / 8) as u16, &whole[cut..]);
        // out of order delivery
        let out = frames(vec![f2, f1]);
        assert_eq!(out.datagrams.len(), 1);
        assert_eq!(out.datagrams[0].payload, data);
        // timestamp of the first fragment seen
        assert_eq!(out.datagrams[0].ts, 0.0);
    }

    #[test]
    fn incomplete_fragments_are_not_emitted() {
        let whole = udp(1, 2, &[7u8; 2000]);
        let out = frames(vec![ipv4(17, 9, 0x2000, &whole[..1480])]);
        assert!(out.datagrams.is_empty());
    }

    #[test]
    fn ethernet_vlan_is_stripped() {
        let mut eth = vec![0u8; 12];
        eth.extend_from_slice(&[0x81, 0x00, 0x00, 0x05, 0x08, 0x00]);
        eth.extend(ipv4(17, 1, 0, &udp(5, 6, b"hello")));
        assert!(network_layer(1, &eth).is_some());
        let mut out = ParsedCapture::default();
        decode_frame(
            &Frame {
                ts: 0.0,
                link_type: 1,
                data: eth,
            },
            &mut Defragmenter::default(),
            &mut out,
        );
        assert_eq!(out.datagrams[0].payload, b"hello");
    }
}
