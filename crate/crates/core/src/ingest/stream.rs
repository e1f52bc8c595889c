//! Transport conversation assembly.
//!
//! TCP segments are grouped per connection (five-tuple plus SYN epoch) and
//! each direction is rebuilt by sequence offset. Retransmitted bytes land on
//! already-covered offsets and are dropped; when a retransmission disagrees
//! with what was seen first, the first-seen bytes win and a warning is
//! recorded. UDP datagrams are grouped per five-tuple, keeping datagram
//! boundaries of the outbound side.

use std::collections::HashMap;
use std::net::SocketAddr;

use super::packet::{tcp_flags, Datagram, Transport};

/// Segments claiming offsets beyond this are treated as garbage.
const MAX_STREAM: i64 = 256 * 1024 * 1024;

/// A reassembled conversation before classification and attribution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowSkeleton {
    pub transport: Option<Transport>,
    /// Connection initiator (the device side for app traffic).
    pub client: Option<SocketAddr>,
    pub server: Option<SocketAddr>,
    pub first_ts: f64,
    pub last_ts: f64,
    pub payload_out: Vec<u8>,
    pub payload_in: Vec<u8>,
    /// Lengths of the individual outbound messages (UDP only).
    pub out_messages: Vec<usize>,
    /// Some sequence range was never observed.
    pub truncated: bool,
}

#[derive(Debug, Default)]
pub struct Assembly {
    pub flows: Vec<FlowSkeleton>,
    pub warnings: Vec<String>,
}

#[derive(Default)]
struct Direction {
    isn: Option<u32>,
    segments: Vec<(u32, Vec<u8>)>,
}

struct Connection {
    client: SocketAddr,
    server: SocketAddr,
    first_ts: f64,
    last_ts: f64,
    dirs: [Direction; 2],
}

fn pair_key(a: SocketAddr, b: SocketAddr) -> (SocketAddr, SocketAddr) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Rebuilds TCP streams and UDP conversations from transport datagrams.
/// Output is ordered by first timestamp, then by endpoints.
pub fn reassemble_streams(datagrams: &[Datagram]) -> Assembly {
    let mut out = Assembly::default();
    let mut tcp_conns: Vec<Connection> = Vec::new();
    let mut active: HashMap<(SocketAddr, SocketAddr), usize> = HashMap::new();
    let mut udp: Vec<FlowSkeleton> = Vec::new();
    let mut udp_index: HashMap<(SocketAddr, SocketAddr), usize> = HashMap::new();

    for d in datagrams {
        let key = pair_key(d.src, d.dst);
        match (d.transport, d.tcp) {
            (Transport::Tcp, Some(meta)) => {
                let syn_only = meta.has(tcp_flags::SYN) && !meta.has(tcp_flags::ACK);
                let existing = active.get(&key).copied();
                let idx = match existing {
                    Some(i) if !syn_only => i,
                    // retransmitted SYN
                    Some(i) if tcp_conns[i].client == d.src && tcp_conns[i].dirs[0].isn == Some(meta.seq) => i,
                    // bare ACKs preceded the handshake: adopt the connection
                    Some(i) if tcp_conns[i].dirs.iter().all(|s| s.isn.is_none() && s.segments.is_empty()) => {
                        tcp_conns[i].client = d.src;
                        tcp_conns[i].server = d.dst;
                        i
                    }
                    _ => {
                        let (client, server) = if meta.has(tcp_flags::SYN) && meta.has(tcp_flags::ACK) {
                            (d.dst, d.src)
                        } else {
                            (d.src, d.dst)
                        };
                        tcp_conns.push(Connection {
                            client,
                            server,
                            first_ts: d.ts,
                            last_ts: d.ts,
                            dirs: Default::default(),
                        });
                        active.insert(key, tcp_conns.len() - 1);
                        tcp_conns.len() - 1
                    }
                };
                let conn = &mut tcp_conns[idx];
                conn.first_ts = conn.first_ts.min(d.ts);
                conn.last_ts = conn.last_ts.max(d.ts);
                let dir = usize::from(d.src != conn.client);
                let side = &mut conn.dirs[dir];
                if meta.has(tcp_flags::SYN) {
                    side.isn.get_or_insert(meta.seq);
                }
                if !d.payload.is_empty() {
                    let seq = if meta.has(tcp_flags::SYN) {
                        meta.seq.wrapping_add(1)
                    } else {
                        meta.seq
                    };
                    side.segments.push((seq, d.payload.clone()));
                }
            }
            (Transport::Udp, _) => {
                let idx = *udp_index.entry(key).or_insert_with(|| {
                    udp.push(FlowSkeleton {
                        transport: Some(Transport::Udp),
                        client: Some(d.src),
                        server: Some(d.dst),
                        first_ts: d.ts,
                        last_ts: d.ts,
                        ..Default::default()
                    });
                    udp.len() - 1
                });
                let flow = &mut udp[idx];
                flow.first_ts = flow.first_ts.min(d.ts);
                flow.last_ts = flow.last_ts.max(d.ts);
                if Some(d.src) == flow.client {
                    flow.payload_out.extend_from_slice(&d.payload);
                    flow.out_messages.push(d.payload.len());
                } else {
                    flow.payload_in.extend_from_slice(&d.payload);
                }
            }
            _ => {}
        }
    }

    for conn in tcp_conns {
        let label = format!("{} -> {}", conn.client, conn.server);
        let (payload_out, trunc_out) = rebuild(&conn.dirs[0], &label, &mut out.warnings);
        let (payload_in, trunc_in) = rebuild(&conn.dirs[1], &label, &mut out.warnings);
        out.flows.push(FlowSkeleton {
            transport: Some(Transport::Tcp),
            client: Some(conn.client),
            server: Some(conn.server),
            first_ts: conn.first_ts,
            last_ts: conn.last_ts,
            payload_out,
            payload_in,
            out_messages: Vec::new(),
            truncated: trunc_out || trunc_in,
        });
    }
    out.flows.extend(udp);
    out.flows.sort_by(|a, b| {
        a.first_ts
            .total_cmp(&b.first_ts)
            .then_with(|| a.transport.cmp(&b.transport))
            .then_with(|| a.client.cmp(&b.client))
            .then_with(|| a.server.cmp(&b.server))
    });
    out
}

/// Rebuilds one direction. Returns the stream and whether any gap remained.
fn rebuild(dir: &Direction, label: &str, warnings: &mut Vec<String>) -> (Vec<u8>, bool) {
    if dir.segments.is_empty() {
        return (Vec::new(), false);
    }
    // Offsets relative to the byte after the ISN when the handshake was
    // seen, otherwise relative to the lowest sequence number observed.
    let offsets: Vec<i64> = match dir.isn {
        Some(isn) => {
            let base = isn.wrapping_add(1);
            dir.segments
                .iter()
                .map(|(seq, _)| seq.wrapping_sub(base) as i32 as i64)
                .collect()
        }
        None => {
            let reference = dir.segments[0].0;
            let rel: Vec<i64> = dir
                .segments
                .iter()
                .map(|(seq, _)| seq.wrapping_sub(reference) as i32 as i64)
                .collect();
            let min = rel.iter().copied().min().unwrap_or(0);
            rel.into_iter().map(|r| r - min).collect()
        }
    };

    let mut end = 0i64;
    for ((_, data), &off) in dir.segments.iter().zip(&offsets) {
        if off >= 0 && off + (data.len() as i64) <= MAX_STREAM {
            end = end.max(off + data.len() as i64);
        }
    }
    let mut buf = vec![0u8; end as usize];
    let mut have = vec![false; end as usize];
    let mut conflicts = 0usize;
    for ((_, data), &off) in dir.segments.iter().zip(&offsets) {
        if off < 0 || off + (data.len() as i64) > MAX_STREAM {
            warnings.push(format!("{label}: segment outside stream window dropped"));
            continue;
        }
        let off = off as usize;
        for (i, &b) in data.iter().enumerate() {
            if have[off + i] {
                if buf[off + i] != b {
                    conflicts += 1;
                }
            } else {
                buf[off + i] = b;
                have[off + i] = true;
            }
        }
    }
    if conflicts > 0 {
        warnings.push(format!(
            "{label}: {conflicts} overlapping byte(s) disagreed with first-seen data; kept first"
        ));
    }
    let gaps = have.iter().any(|h| !h);
    if !gaps {
        return (buf, false);
    }
    warnings.push(format!("{label}: sequence gap, stream flagged truncated"));
    let stream = buf
        .into_iter()
        .zip(have)
        .filter_map(|(b, h)| h.then_some(b))
        .collect();
    (stream, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::packet::TcpMeta;

    fn seg(seq: u32, flags: u8, data: &[u8], outbound: bool, ts: f64) -> Datagram {
        let c: SocketAddr = "10.0.0.2:40000".parse().unwrap();
        let s: SocketAddr = "1.2.3.4:80".parse().unwrap();
        let (src, dst) = if outbound { (c, s) } else { (s, c) };
        Datagram {
            transport: Transport::Tcp,
            src,
            dst,
            ts,
            payload: data.to_vec(),
            tcp: Some(TcpMeta { seq, ack: 0, flags }),
        }
    }

    #[test]
    fn in_order_segments_concatenate() {
        let a = reassemble_streams(&[
            seg(100, tcp_flags::ACK, b"AB", true, 1.0),
            seg(102, tcp_flags::ACK, b"CD", true, 2.0),
        ]);
        assert_eq!(a.flows.len(), 1);
        assert_eq!(a.flows[0].payload_out, b"ABCD");
        assert!(!a.flows[0].truncated);
    }

    #[test]
    fn reversed_segments_follow_sequence_order() {
        // oracle: sort by seq then concatenate
        let segs = [(0u32, b"AB"), (2u32, b"CD")];
        let mut sorted = segs.to_vec();
        sorted.sort_by_key(|s| s.0);
        let expected: Vec<u8> = sorted.iter().flat_map(|s| s.1.to_vec()).collect();
        let a = reassemble_streams(&[
            seg(2, tcp_flags::ACK, b"CD", true, 1.0),
            seg(0, tcp_flags::ACK, b"AB", true, 2.0),
        ]);
        assert_eq!(a.flows[0].payload_out, expected);
    }

    #[test]
    fn retransmission_counted_once() {
        let a = reassemble_streams(&[
            seg(0, tcp_flags::SYN, b"", true, 0.0),
            seg(1, tcp_flags::ACK, b"hello", true, 1.0),
            seg(1, tcp_flags::ACK, b"hello", true, 1.5),
            seg(6, tcp_flags::ACK, b" world", true, 2.0),
        ]);
        assert_eq!(a.flows[0].payload_out, b"hello world");
        assert!(a.warnings.is_empty());
    }

    #[test]
    fn conflicting_overlap_keeps_first_and_warns() {
        let a = reassemble_streams(&[
            seg(0, tcp_flags::ACK, b"abcd", true, 1.0),
            seg(2, tcp_flags::ACK, b"XYef", true, 2.0),
        ]);
        assert_eq!(a.flows[0].payload_out, b"abcdef");
        assert_eq!(a.warnings.len(), 1);
    }

    #[test]
    fn gap_flags_truncated() {
        let a = reassemble_streams(&[
            seg(0, tcp_flags::SYN, b"", true, 0.0),
            seg(1, tcp_flags::ACK, b"ab", true, 1.0),
            seg(10, tcp_flags::ACK, b"yz", true, 2.0),
        ]);
        assert!(a.flows[0].truncated);
        assert_eq!(a.flows[0].payload_out, b"abyz");
    }

    #[test]
    fn new_syn_epoch_starts_new_flow() {
        let a = reassemble_streams(&[
            seg(0, tcp_flags::SYN, b"", true, 0.0),
            seg(1, tcp_flags::ACK, b"first", true, 1.0),
            seg(0, tcp_flags::SYN, b"", true, 1.2),
            seg(5000, tcp_flags::SYN, b"", true, 5.0),
            seg(5001, tcp_flags::ACK, b"second", true, 6.0),
        ]);
        assert_eq!(a.flows.len(), 2);
        assert_eq!(a.flows[0].payload_out, b"first");
        assert_eq!(a.flows[1].payload_out, b"second");
    }

    #[test]
    fn syn_ack_marks_server_side() {
        let a = reassemble_streams(&[
            seg(900, tcp_flags::SYN | tcp_flags::ACK, b"", false, 0.0),
            seg(901, tcp_flags::ACK, b"banner", false, 0.5),
            seg(1, tcp_flags::ACK, b"req", true, 1.0),
        ]);
        let f = &a.flows[0];
        assert_eq!(f.client.unwrap().port(), 40000);
        assert_eq!(f.payload_in, b"banner");
        assert_eq!(f.payload_out, b"req");
    }

    #[test]
    fn udp_keeps_direction_and_boundaries() {
        let c: SocketAddr = "10.0.0.2:5000".parse().unwrap();
        let s: SocketAddr = "1.2.3.4:9000".parse().unwrap();
        let dg = |src, dst, p: &[u8], ts| Datagram {
            transport: Transport::Udp,
            src,
            dst,
            ts,
            payload: p.to_vec(),
            tcp: None,
        };
        let a = reassemble_streams(&[dg(c, s, b"ping", 1.0), dg(s, c, b"pongpong", 1.1), dg(c, s, b"x", 2.0)]);
        assert_eq!(a.flows[0].payload_out, b"pingx");
        assert_eq!(a.flows[0].out_messages, vec![4, 1]);
        assert_eq!(a.flows[0].payload_in, b"pongpong");
    }
}
