//! Synthetic Ethernet/IPv4 traffic and pcap output.
//!
//! TCP conversations get a full handshake, MSS segmentation and a FIN
//! exchange. Packets larger than the MTU are split into IP fragments. The
//! segmentation policy can reorder and duplicate what goes on the wire;
//! retransmitted TCP segments get a fresh IP id, as a real stack would.

use std::net::SocketAddrV4;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

const ETHERTYPE_IPV4: u16 = 0x0800;
const PROTO_TCP: u8 = 6;
const PROTO_UDP: u8 = 17;
const IP_HEADER: usize = 20;
const TCP_HEADER: usize = 20;

pub const FIN: u8 = 0x01;
pub const SYN: u8 = 0x02;
pub const PSH: u8 = 0x08;
pub const ACK: u8 = 0x10;

/// How packets are cut and ordered on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segmentation {
    #[serde(default = "default_mtu")]
    pub mtu: usize,
    /// TCP payload per segment; defaults to the MTU minus headers. A larger
    /// value forces IP fragmentation of TCP segments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mss: Option<usize>,
    #[serde(default)]
    pub reorder: bool,
    #[serde(default)]
    pub duplicate: bool,
    /// Random segment sizes up to the MSS instead of full segments.
    #[serde(default)]
    pub vary_sizes: bool,
}

fn default_mtu() -> usize {
    1500
}

impl Default for Segmentation {
    fn default() -> Self {
        Segmentation { mtu: default_mtu(), mss: None, reorder: false, duplicate: false, vary_sizes: false }
    }
}

impl Segmentation {
    pub fn mss(&self) -> usize {
        self.mss.unwrap_or(self.mtu - IP_HEADER - TCP_HEADER).max(1)
    }

    /// Fragment payload size: the largest multiple of 8 that fits the MTU.
    fn fragment_payload(&self) -> usize {
        ((self.mtu - IP_HEADER) / 8 * 8).max(8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Client,
    Server,
}

/// Allocates IPv4 identification values.
#[derive(Debug, Default)]
pub struct IpIds(u16);

impl IpIds {
    pub fn next(&mut self) -> u16 {
        self.0 = self.0.wrapping_add(1);
        self.0
    }
}

fn checksum(chunks: &[&[u8]]) -> u16 {
    let mut sum = 0u32;
    let mut odd: Option<u8> = None;
    for chunk in chunks {
        for &b in chunk.iter() {
            match odd.take() {
                Some(hi) => sum += u32::from(u16::from_be_bytes([hi, b])),
                None => odd = Some(b),
            }
        }
    }
    if let Some(hi) = odd {
        sum += u32::from(u16::from_be_bytes([hi, 0]));
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn pseudo_header(src: SocketAddrV4, dst: SocketAddrV4, proto: u8, len: usize) -> Vec<u8> {
    let mut p = Vec::with_capacity(12);
    p.extend_from_slice(&src.ip().octets());
    p.extend_from_slice(&dst.ip().octets());
    p.push(0);
    p.push(proto);
    p.extend_from_slice(&(len as u16).to_be_bytes());
    p
}

pub fn tcp_segment(src: SocketAddrV4, dst: SocketAddrV4, seq: u32, ack: u32, flags: u8, payload: &[u8]) -> Vec<u8> {
    let mut t = Vec::with_capacity(TCP_HEADER + payload.len());
    t.extend_from_slice(&src.port().to_be_bytes());
    t.extend_from_slice(&dst.port().to_be_bytes());
    t.extend_from_slice(&seq.to_be_bytes());
    t.extend_from_slice(&ack.to_be_bytes());
    t.push((TCP_HEADER as u8 / 4) << 4);
    t.push(flags);
    t.extend_from_slice(&65535u16.to_be_bytes());
    t.extend_from_slice(&[0, 0, 0, 0]);
    t.extend_from_slice(payload);
    let sum = checksum(&[&pseudo_header(src, dst, PROTO_TCP, t.len()), &t]);
    t[16..18].copy_from_slice(&sum.to_be_bytes());
    t
}

pub fn udp_datagram(src: SocketAddrV4, dst: SocketAddrV4, payload: &[u8]) -> Vec<u8> {
    let len = 8 + payload.len();
    let mut u = Vec::with_capacity(len);
    u.extend_from_slice(&src.port().to_be_bytes());
    u.extend_from_slice(&dst.port().to_be_bytes());
    // lengths past 65535 cannot be expressed; receivers rely on the IP length
    u.extend_from_slice(&(len.min(0xffff) as u16).to_be_bytes());
    u.extend_from_slice(&[0, 0]);
    u.extend_from_slice(payload);
    let sum = checksum(&[&pseudo_header(src, dst, PROTO_UDP, len.min(0xffff)), &u]);
    u[6..8].copy_from_slice(&(if sum == 0 { 0xffff } else { sum }).to_be_bytes());
    u
}

fn ipv4_header(src: SocketAddrV4, dst: SocketAddrV4, proto: u8, id: u16, frag_field: u16, payload_len: usize) -> Vec<u8> {
    let mut h = vec![0x45, 0];
    h.extend_from_slice(&((IP_HEADER + payload_len) as u16).to_be_bytes());
    h.extend_from_slice(&id.to_be_bytes());
    h.extend_from_slice(&frag_field.to_be_bytes());
    h.push(64);
    h.push(proto);
    h.extend_from_slice(&[0, 0]);
    h.extend_from_slice(&src.ip().octets());
    h.extend_from_slice(&dst.ip().octets());
    let sum = checksum(&[&h]);
    h[10..12].copy_from_slice(&sum.to_be_bytes());
    h
}

/// One transport payload as IPv4 packets, fragmented when it exceeds the MTU.
pub fn ipv4_packets(src: SocketAddrV4, dst: SocketAddrV4, proto: u8, id: u16, l4: &[u8], policy: &Segmentation) -> Vec<Vec<u8>> {
    if IP_HEADER + l4.len() <= policy.mtu {
        let mut p = ipv4_header(src, dst, proto, id, 0x4000, l4.len());
        p.extend_from_slice(l4);
        return vec![p];
    }
    let step = policy.fragment_payload();
    let mut out = Vec::new();
    let mut off = 0;
    while off < l4.len() {
        let end = (off + step).min(l4.len());
        let more = end < l4.len();
        let field = ((off / 8) as u16) | if more { 0x2000 } else { 0 };
        let mut p = ipv4_header(src, dst, proto, id, field, end - off);
        p.extend_from_slice(&l4[off..end]);
        out.push(p);
        off = end;
    }
    out
}

/// Ethernet framing for an IPv4 packet; the MAC pair encodes direction.
pub fn ethernet(packet: &[u8], from_device: bool) -> Vec<u8> {
    let device = [0x02, 0x00, 0x00, 0x00, 0x00, 0x57];
    let gateway = [0x02, 0x00, 0x00, 0x00, 0x00, 0x01];
    let (dst, src) = if from_device { (gateway, device) } else { (device, gateway) };
    let mut f = Vec::with_capacity(14 + packet.len());
    f.extend_from_slice(&dst);
    f.extend_from_slice(&src);
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
    f.extend_from_slice(packet);
    f
}

/// A packet on the wire plus its direction, before timestamps are known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WirePacket {
    pub from_client: bool,
    pub ip: Vec<u8>,
}

fn chunk_sizes<R: Rng>(len: usize, policy: &Segmentation, rng: &mut R) -> Vec<usize> {
    let mss = policy.mss();
    let mut out = Vec::new();
    let mut left = len;
    while left > 0 {
        let n = if policy.vary_sizes { rng.gen_range(1..=mss.min(left)) } else { mss.min(left) };
        out.push(n);
        left -= n;
    }
    out
}

/// A complete TCP conversation: handshake, the messages in order (each cut
/// into segments), then FIN/ACK teardown.
pub fn tcp_conversation<R: Rng>(
    client: SocketAddrV4,
    server: SocketAddrV4,
    messages: &[(Side, Vec<u8>)],
    policy: &Segmentation,
    ids: &mut IpIds,
    rng: &mut R,
) -> Vec<WirePacket> {
    let isn_c: u32 = rng.gen();
    let isn_s: u32 = rng.gen();
    let mut next = [isn_c.wrapping_add(1), isn_s.wrapping_add(1)];
    let ends = |side: Side| match side {
        Side::Client => (client, server, true),
        Side::Server => (server, client, false),
    };
    let build = |side: Side, seq: u32, ack: u32, flags: u8, payload: &[u8], ids: &mut IpIds| {
        let (src, dst, from_client) = ends(side);
        let seg = tcp_segment(src, dst, seq, ack, flags, payload);
        ipv4_packets(src, dst, PROTO_TCP, ids.next(), &seg, policy)
            .into_iter()
            .map(|ip| WirePacket { from_client, ip })
            .collect::<Vec<_>>()
    };

    let mut head = Vec::new();
    head.extend(build(Side::Client, isn_c, 0, SYN, &[], ids));
    head.extend(build(Side::Server, isn_s, isn_c.wrapping_add(1), SYN | ACK, &[], ids));
    head.extend(build(Side::Client, next[0], next[1], ACK, &[], ids));

    // each data segment as its list of fragments
    let mut data: Vec<Vec<WirePacket>> = Vec::new();
    for (side, bytes) in messages {
        let me = usize::from(*side == Side::Server);
        let mut off = 0;
        for n in chunk_sizes(bytes.len(), policy, rng) {
            let seq = next[me].wrapping_add(off as u32);
            let chunk = &bytes[off..off + n];
            data.push(build(*side, seq, next[1 - me], ACK | PSH, chunk, ids));
            if policy.duplicate && rng.gen_bool(0.25) {
                data.push(build(*side, seq, next[1 - me], ACK | PSH, chunk, ids));
            }
            off += n;
        }
        next[me] = next[me].wrapping_add(bytes.len() as u32);
    }
    let mut body: Vec<WirePacket> = if policy.reorder {
        let mut flat: Vec<WirePacket> = data.into_iter().flatten().collect();
        flat.shuffle(rng);
        flat
    } else {
        data.into_iter().flatten().collect()
    };

    let mut tail = Vec::new();
    tail.extend(build(Side::Client, next[0], next[1], FIN | ACK, &[], ids));
    tail.extend(build(Side::Server, next[1], next[0].wrapping_add(1), FIN | ACK, &[], ids));
    tail.extend(build(Side::Client, next[0].wrapping_add(1), next[1].wrapping_add(1), ACK, &[], ids));

    head.append(&mut body);
    head.append(&mut tail);
    head
}

/// UDP datagrams in order. With reordering or duplication enabled only the
/// fragments of one datagram are shuffled or repeated, so datagram order
/// (and with it each side's byte stream) is preserved.
pub fn udp_exchange<R: Rng>(
    client: SocketAddrV4,
    server: SocketAddrV4,
    datagrams: &[(Side, Vec<u8>)],
    policy: &Segmentation,
    ids: &mut IpIds,
    rng: &mut R,
) -> Vec<WirePacket> {
    let mut out = Vec::new();
    for (side, payload) in datagrams {
        let (src, dst, from_client) = match side {
            Side::Client => (client, server, true),
            Side::Server => (server, client, false),
        };
        let l4 = udp_datagram(src, dst, payload);
        let mut frags = ipv4_packets(src, dst, PROTO_UDP, ids.next(), &l4, policy);
        if frags.len() > 1 {
            if policy.reorder {
                frags.shuffle(rng);
            }
            if policy.duplicate {
                // the last fragment completes the datagram and is never repeated
                let last = frags.pop().expect("fragmented datagram");
                let copies: Vec<Vec<u8>> = frags.iter().filter(|_| rng.gen_bool(0.25)).cloned().collect();
                for c in copies {
                    let at = rng.gen_range(0..=frags.len());
                    frags.insert(at, c);
                }
                frags.push(last);
            }
        }
        out.extend(frags.into_iter().map(|ip| WirePacket { from_client, ip }));
    }
    out
}

/// Timestamped frames in capture order.
#[derive(Debug, Default, Clone)]
pub struct Capture {
    frames: Vec<(f64, Vec<u8>)>,
}

impl Capture {
    /// Appends packets spaced `step` seconds apart from `start`; returns the
    /// timestamp of the last one.
    pub fn push(&mut self, packets: Vec<WirePacket>, start: f64, step: f64) -> f64 {
        let mut ts = start;
        let n = packets.len();
        for (i, p) in packets.into_iter().enumerate() {
            ts = start + step * i as f64;
            self.frames.push((ts, ethernet(&p.ip, p.from_client)));
        }
        if n == 0 {
            start
        } else {
            ts
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Little-endian microsecond pcap, Ethernet link type. Frames are
    /// written in timestamp order; ties keep insertion order.
    pub fn to_pcap(&self) -> Vec<u8> {
        let mut frames: Vec<&(f64, Vec<u8>)> = self.frames.iter().collect();
        frames.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = Vec::new();
        out.extend_from_slice(&0xa1b2_c3d4u32.to_le_bytes());
        out.extend_from_slice(&2u16.to_le_bytes());
        out.extend_from_slice(&4u16.to_le_bytes());
        out.extend_from_slice(&0i32.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&262_144u32.to_le_bytes());
        out.extend_from_slice(&1u32.to_le_bytes());
        for (ts, data) in frames {
            let micros = (ts * 1e6).round() as u64;
            out.extend_from_slice(&((micros / 1_000_000) as u32).to_le_bytes());
            out.extend_from_slice(&((micros % 1_000_000) as u32).to_le_bytes());
            out.extend_from_slice(&(data.len() as u32).to_le_bytes());
            out.extend_from_slice(&(data.len() as u32).to_le_bytes());
            out.extend_from_slice(data);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ipv4_header_checksum_verifies() {
        let h = ipv4_header("10.0.0.1:1".parse().unwrap(), "10.0.0.2:2".parse().unwrap(), PROTO_TCP, 7, 0, 40);
        assert_eq!(checksum(&[&h]), 0);
    }

    #[test]
    fn fragments_cover_payload_on_8_byte_boundaries() {
        let policy = Segmentation::default();
        let l4 = vec![0xabu8; 4000];
        let frags = ipv4_packets("10.0.0.1:1".parse().unwrap(), "10.0.0.2:2".parse().unwrap(), PROTO_UDP, 1, &l4, &policy);
        assert_eq!(frags.len(), 3);
        let mut total = 0;
        for f in &frags {
            assert!(f.len() <= 1500);
            let field = u16::from_be_bytes([f[6], f[7]]);
            assert_eq!(usize::from(field & 0x1fff) * 8, total);
            total += f.len() - IP_HEADER;
        }
        assert_eq!(total, 4000);
    }
}
