//! UDP amplification measurement, from the capture (offline) or by
//! replaying recorded payloads (active).

use std::collections::{BTreeMap, BTreeSet};
use std::io::ErrorKind;
use std::net::{IpAddr, SocketAddr, UdpSocket};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::ingest::{Flow, Transport};

/// DNS, NTP and QUIC destinations are never measured.
pub const EXCLUDED_PORTS: [u16; 3] = [53, 123, 443];
pub const DEFAULT_THRESHOLD: f64 = 10.0;
pub const DEFAULT_WAIT: Duration = Duration::from_secs(5);
pub const DEFAULT_CONCURRENCY: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmpMode {
    Offline,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmpStatus {
    Measured,
    NoResponse,
    Unreachable,
    /// Destination outside the private ranges or the allow-list.
    Refused,
}

/// Reduced fraction received/sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
}

impl Ratio {
    pub fn new(received: u64, sent: u64) -> Option<Ratio> {
        if sent == 0 || received == 0 {
            return None;
        }
        let g = gcd(received, sent);
        Some(Ratio { numerator: received / g, denominator: sent / g })
    }

    pub fn value(self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    /// The ratio as an integer when it is one.
    pub fn as_integer(self) -> Option<u64> {
        (self.denominator == 1).then_some(self.numerator)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AmplificationResult {
    pub destination: SocketAddr,
    pub sent_bytes: u64,
    pub received_bytes: u64,
    pub ratio: Option<Ratio>,
    pub mode: AmpMode,
    pub status: AmpStatus,
    pub flagged: bool,
}

fn result(destination: SocketAddr, sent: u64, received: u64, mode: AmpMode, status: AmpStatus, threshold: f64) -> AmplificationResult {
    let ratio = Ratio::new(received, sent);
    let status = if status == AmpStatus::Measured && ratio.is_none() {
        AmpStatus::NoResponse
    } else {
        status
    };
    AmplificationResult {
        destination,
        sent_bytes: sent,
        received_bytes: received,
        ratio,
        mode,
        status,
        flagged: ratio.is_some_and(|r| r.value() >= threshold),
    }
}

pub fn is_excluded(dest: SocketAddr) -> bool {
    EXCLUDED_PORTS.contains(&dest.port())
}

fn measured_udp(flows: &[Flow]) -> impl Iterator<Item = &Flow> {
    flows
        .iter()
        .filter(|f| f.transport == Transport::Udp && f.app_attributed && !is_excluded(f.server))
}

/// Per destination: inbound bytes over outbound bytes across the app's UDP
/// flows. Destinations the app never sent to are skipped.
pub fn compute_amplification_offline(flows: &[Flow], threshold: f64) -> Vec<AmplificationResult> {
    let mut totals: BTreeMap<SocketAddr, (u64, u64)> = BTreeMap::new();
    for f in measured_udp(flows) {
        let t = totals.entry(f.server).or_default();
        t.0 += f.payload_out.len() as u64;
        t.1 += f.payload_in.len() as u64;
    }
    totals
        .into_iter()
        .filter(|(_, (sent, _))| *sent > 0)
        .map(|(dest, (sent, recv))| result(dest, sent, recv, AmpMode::Offline, AmpStatus::Measured, threshold))
        .collect()
}

/// Payloads recorded toward one destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayItem {
    pub destination: SocketAddr,
    pub payloads: Vec<Vec<u8>>,
}

/// Outbound UDP datagrams of the app, grouped by destination.
pub fn replay_set_from_flows(flows: &[Flow]) -> Vec<ReplayItem> {
    let mut by_dest: BTreeMap<SocketAddr, Vec<Vec<u8>>> = BTreeMap::new();
    for f in measured_udp(flows) {
        let entry = by_dest.entry(f.server).or_default();
        let mut pos = 0;
        for &len in &f.out_messages {
            let end = (pos + len).min(f.payload_out.len());
            entry.push(f.payload_out[pos..end].to_vec());
            pos = end;
        }
        if pos < f.payload_out.len() {
            entry.push(f.payload_out[pos..].to_vec());
        }
    }
    by_dest
        .into_iter()
        .map(|(destination, payloads)| ReplayItem { destination, payloads })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    /// How long to collect replies after the last payload was resent.
    pub wait: Duration,
    pub concurrency: usize,
    pub threshold: f64,
    /// Permit public destinations.
    pub allow_public: bool,
    /// When set, only these destinations are probed.
    pub allow_list: Option<BTreeSet<SocketAddr>>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            wait: DEFAULT_WAIT,
            concurrency: DEFAULT_CONCURRENCY,
            threshold: DEFAULT_THRESHOLD,
            allow_public: false,
            allow_list: None,
        }
    }
}

/// Loopback, RFC 1918, link-local and IPv6 unique-local addresses.
pub fn is_private(ip: IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => v4.is_private() || v4.is_loopback() || v4.is_link_local(),
        IpAddr::V6(v6) => {
            let seg = v6.segments()[0];
            v6.is_loopback() || (seg & 0xfe00) == 0xfc00 || (seg & 0xffc0) == 0xfe80
        }
    }
}

fn probe_one(item: &ReplayItem, wait: Duration, threshold: f64) -> AmplificationResult {
    let sent: u64 = item.payloads.iter().map(|p| p.len() as u64).sum();
    let bind: SocketAddr = if item.destination.is_ipv4() {
        "0.0.0.0:0".parse().expect("literal address")
    } else {
        "[::]:0".parse().expect("literal address")
    };
    let mut sockets = Vec::new();
    for payload in &item.payloads {
        let sock = match UdpSocket::bind(bind).and_then(|s| s.set_nonblocking(true).map(|_| s)) {
            Ok(s) => s,
            Err(_) => return result(item.destination, sent, 0, AmpMode::Active, AmpStatus::Unreachable, threshold),
        };
        if sock.send_to(payload, item.destination).is_err() {
            return result(item.destination, sent, 0, AmpMode::Active, AmpStatus::Unreachable, threshold);
        }
        sockets.push(sock);
    }
    let deadline = Instant::now() + wait;
    let mut received = 0u64;
    let mut buf = vec![0u8; 65536];
    loop {
        for sock in &sockets {
            loop {
                match sock.recv_from(&mut buf) {
                    Ok((n, from)) if from == item.destination => received += n as u64,
                    Ok(_) => {}
                    Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                    // ICMP errors surface here on some platforms
                    Err(_) => break,
                }
            }
        }
        if Instant::now() >= deadline {
            break;
        }
        thread::sleep(Duration::from_millis(2));
    }
    result(item.destination, sent, received, AmpMode::Active, AmpStatus::Measured, threshold)
}

/// Resends each recorded payload once from a fresh socket and sums the
/// replies that arrive within `cfg.wait`. Excluded ports are skipped;
/// destinations outside the private ranges are refused unless
/// `cfg.allow_public` is set, and anything missing from a configured
/// allow-list is refused.
pub fn probe_amplification_active(items: &[ReplayItem], cfg: &ProbeConfig) -> Vec<AmplificationResult> {
    let mut out = Vec::new();
    let mut todo = Vec::new();
    for item in items {
        if is_excluded(item.destination) || item.payloads.is_empty() {
            continue;
        }
        let listed = cfg.allow_list.as_ref().map_or(true, |l| l.contains(&item.destination));
        if !listed || (!cfg.allow_public && !is_private(item.destination.ip())) {
            let sent = item.payloads.iter().map(|p| p.len() as u64).sum();
            out.push(result(item.destination, sent, 0, AmpMode::Active, AmpStatus::Refused, cfg.threshold));
        } else {
            todo.push(item);
        }
    }
    for batch in todo.chunks(cfg.concurrency.max(1)) {
        thread::scope(|s| {
            let handles: Vec<_> = batch.iter().map(|item| s.spawn(|| probe_one(item, cfg.wait, cfg.threshold))).collect();
            for h in handles {
                out.push(h.join().expect("probe thread panicked"));
            }
        });
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::ProtocolClass;

    fn udp(server: &str, out: usize, inbound: usize) -> Flow {
        Flow {
            flow_id: 0,
            transport: Transport::Udp,
            client: "10.0.0.2:4000".parse().unwrap(),
            server: server.parse().unwrap(),
            first_ts: 0.0,
            last_ts: 0.0,
            protocol_class: ProtocolClass::NonHttp,
            payload_out: vec![1; out],
            payload_in: vec![2; inbound],
            host: server.into(),
            sni: None,
            app_attributed: true,
            truncated: false,
            out_messages: vec![out],
        }
    }

    #[test]
    fn arithmetic() {
        let r = compute_amplification_offline(&[udp("198.51.100.7:9000", 10, 120)], DEFAULT_THRESHOLD);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].ratio.unwrap().as_integer(), Some(12));
        assert!(r[0].flagged);
    }

    #[test]
    fn excluded_ports_never_measured() {
        let flows = [udp("8.8.8.8:53", 30, 500), udp("1.2.3.4:123", 48, 48), udp("1.2.3.4:443", 1200, 9000)];
        assert!(compute_amplification_offline(&flows, DEFAULT_THRESHOLD).is_empty());
        assert!(replay_set_from_flows(&flows).is_empty());
    }

    #[test]
    fn zero_outbound_skipped_and_unattributed_ignored() {
        let mut other = udp("198.51.100.8:9000", 10, 1000);
        other.app_attributed = false;
        let r = compute_amplification_offline(&[udp("198.51.100.7:9000", 0, 120), other], DEFAULT_THRESHOLD);
        assert!(r.is_empty());
    }

    #[test]
    fn ratio_reduces() {
        let r = Ratio::new(193140, 10).unwrap();
        assert_eq!(r.as_integer(), Some(19314));
        assert_eq!(Ratio::new(3, 2).unwrap().as_integer(), None);
        assert_eq!(Ratio::new(0, 2), None);
    }

    #[test]
    fn public_destination_refused_by_default() {
        let items = [ReplayItem { destination: "93.184.216.34:7777".parse().unwrap(), payloads: vec![vec![0; 4]] }];
        let r = probe_amplification_active(&items, &ProbeConfig::default());
        assert_eq!(r[0].status, AmpStatus::Refused);
    }

    #[test]
    fn silent_sink_gives_no_response() {
        let sink = UdpSocket::bind("127.0.0.1:0").unwrap();
        let items = [ReplayItem { destination: sink.local_addr().unwrap(), payloads: vec![b"ping".to_vec()] }];
        let cfg = ProbeConfig { wait: Duration::from_millis(100), ..Default::default() };
        let r = probe_amplification_active(&items, &cfg);
        assert_eq!(r[0].status, AmpStatus::NoResponse);
        assert_eq!(r[0].ratio, None);
    }

    #[test]
    fn private_ranges() {
        assert!(is_private("127.0.0.1".parse().unwrap()));
        assert!(is_private("192.168.1.1".parse().unwrap()));
        assert!(is_private("fd00::1".parse().unwrap()));
        assert!(!is_private("8.8.8.8".parse().unwrap()));
    }
}
