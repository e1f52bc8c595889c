//! Turns a manifest into a bundle directory plus its sidecar.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use covertscope::cryptolog::{CipherEvent, Method, OpKind};
use covertscope::ingest::bundle::{
    FlowLogRecord, ProfileDocument, CAPTURE_FILE, CIPHERLOG_FILE, FILEOPS_FILE, FLOWS_FILE, PACKAGE_DIR, PROFILE_FILE,
    TUPLES_FILE,
};
use covertscope::ingest::{normalize_path, FileOp, FileOpKind, HookedTuple, HttpRequest, HttpResponse, Transport};
use covertscope::needles::{Coordinate, DataType, GpsFix, KnownType, MediaSample, PiiEntry, PiiProfile};
use flate2::write::{GzEncoder, ZlibEncoder};
use rand::distributions::Alphanumeric;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::ciphers::{self, CipherSpec, Family, KeyMaterial};
use crate::error::{FixtureError, Result};
use crate::expected::*;
use crate::manifest::*;
use crate::net::{tcp_conversation, udp_exchange, Capture, IpIds, Side, WirePacket};
use crate::transform;

/// First timestamp of a generated capture.
pub const BASE_TS: f64 = 1_700_000_000.0;

/// Address of the device in generated captures.
pub const DEVICE_IP: Ipv4Addr = Ipv4Addr::new(192, 168, 7, 57);

/// Largest reply datagram of the amplification exchange.
pub const MAX_REPLY_DATAGRAM: usize = 16 * 1024;

/// Built-in profile values, chosen so that no value contains another.
pub const DEFAULT_VALUES: &[(KnownType, &str)] = &[
    (KnownType::DeviceId, "356938035643809"),
    (KnownType::AdvertisingId, "38400000-8cf0-11bd-b23e-10b96e40000d"),
    (KnownType::Bootloader, "slider-1.2-8739948"),
    (KnownType::BuildFingerprint, "google/raven/raven:13/TP1A.221005.002/9012097:user/release-keys"),
    (KnownType::CpuModel, "Google Tensor GS101"),
    (KnownType::DisplayId, "TQ3A.230805.001"),
    (KnownType::DeviceName, "Workbench Phone 7"),
    (KnownType::DeviceResolution, "1440x3120"),
    (KnownType::DeviceAbi, "arm64-v8a"),
    (KnownType::DeviceModel, "Pixel 6 Pro"),
    (KnownType::Dummy0Interface, "fe80::6c2e:91ff:fe3a:7b10"),
    (KnownType::Operator, "Vodafone DE"),
    (KnownType::WifiIp, "192.168.7.57"),
    (KnownType::WifiIp6, "fe80::a8bb:ccff:fedd:eeff"),
    (KnownType::ProxyIp, "10.31.0.2"),
    (KnownType::GatewayIp, "192.168.7.254"),
    (KnownType::WifiMac, "3c:28:6d:11:a4:9e"),
    (KnownType::RouterEssid, "HomeNet-5G-Kessler"),
    (KnownType::RouterBssid, "a0:63:91:2b:7c:d4"),
    (KnownType::NeighborRouterEssid, "CafeCorner-Guest"),
    (KnownType::NeighborRouterBssid, "f4:f2:6d:88:13:5a"),
    (KnownType::ListOfApps, "com.whatsapp,com.spotify.music,org.telegram.messenger"),
    (KnownType::Sms, "Your verification code is 482913"),
    (KnownType::PhoneNumber, "+4915123456789"),
    (KnownType::Contacts, "Margarete Okonkwo"),
    (KnownType::DeviceEmail, "workbench.tester@example.org"),
];

pub const DEFAULT_GPS: (&str, &str) = ("48.858372", "2.294481");

const MEDIA_SAMPLE_LEN: usize = 96;

/// Files of a generated bundle keyed by relative path, plus the sidecar.
#[derive(Debug, Clone)]
pub struct Generated {
    pub files: BTreeMap<String, Vec<u8>>,
    pub expected: Expected,
}

impl Generated {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (rel, bytes) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| FixtureError::io(parent, e))?;
            }
            std::fs::write(&path, bytes).map_err(|e| FixtureError::io(&path, e))?;
        }
        let path = dir.join(EXPECTED_FILE);
        let text = serde_json::to_string_pretty(&self.expected)?;
        std::fs::write(&path, text + "\n").map_err(|e| FixtureError::io(&path, e))
    }
}

/// Generates the bundle into `out_dir` (created if missing) and returns
/// the sidecar, which is also written as `expected.json`.
pub fn generate_bundle(manifest: &FixtureManifest, out_dir: &Path) -> Result<Expected> {
    let generated = build(manifest)?;
    std::fs::create_dir_all(out_dir).map_err(|e| FixtureError::io(out_dir, e))?;
    generated.write_to(out_dir)?;
    Ok(generated.expected)
}

pub fn load_manifest(path: &Path) -> Result<FixtureManifest> {
    FixtureManifest::load(path)
}

/// Builds the bundle in memory.
pub fn build(manifest: &FixtureManifest) -> Result<Generated> {
    let mut g = Gen::new(manifest)?;
    g.run()?;
    g.finish()
}

fn invalid(msg: impl Into<String>) -> FixtureError {
    FixtureError::InvalidManifest(msg.into())
}

/// Payload bytes of one item before it is placed into a carrier.
#[derive(Debug, Clone)]
enum Content {
    /// Printable text that must appear verbatim.
    Text(String),
    /// Arbitrary bytes.
    Binary(Vec<u8>),
}

impl Content {
    fn bytes(&self) -> Vec<u8> {
        match self {
            Content::Text(t) => t.clone().into_bytes(),
            Content::Binary(b) => b.clone(),
        }
    }
}

/// One delivery: the bytes the app emits and where they go.
#[derive(Debug, Clone)]
enum Wire {
    Http { host: String, request: HttpRequest },
    Raw { server: SocketAddrV4, transport: TransportKind, payload: Vec<u8> },
    File { path: String, buffer: Vec<u8> },
}

struct OpRecord {
    label: String,
    depth: u32,
    plaintext_len: usize,
    ciphertext_len: usize,
    update_calls: usize,
}

struct Gen<'m> {
    m: &'m FixtureManifest,
    rng: ChaCha8Rng,
    values: BTreeMap<KnownType, String>,
    gps: (String, String),
    media: Vec<u8>,
    capture: Capture,
    ids: IpIds,
    clock: f64,
    next_port: u16,
    next_event: u64,
    next_object: u64,
    events: Vec<CipherEvent>,
    flow_log: Vec<FlowLogRecord>,
    file_ops: Vec<FileOp>,
    tuples: Vec<HookedTuple>,
    package: BTreeMap<String, Vec<u8>>,
    hardcoded: BTreeSet<Vec<u8>>,
    ops: Vec<OpRecord>,
    flows: usize,
    exp: Expected,
}

impl<'m> Gen<'m> {
    fn new(m: &'m FixtureManifest) -> Result<Self> {
        let mut values: BTreeMap<KnownType, String> = DEFAULT_VALUES.iter().map(|(k, v)| (*k, v.to_string())).collect();
        for (label, value) in &m.profile {
            let t: DataType = label.parse().map_err(invalid)?;
            let DataType::Known(k) = t else {
                return Err(invalid(format!("profile override `{label}` is not a device data type")));
            };
            if t.is_gps() || k == KnownType::UserFiles {
                return Err(invalid(format!("`{label}` cannot be overridden in `profile`; use `gps`")));
            }
            if value.len() < 4 {
                return Err(invalid(format!("profile value for `{label}` is shorter than 4 bytes")));
            }
            values.insert(k, value.clone());
        }
        let gps = match &m.gps {
            Some(g) => (g.lat.clone(), g.lon.clone()),
            None => (DEFAULT_GPS.0.to_string(), DEFAULT_GPS.1.to_string()),
        };
        for c in [&gps.0, &gps.1] {
            if truncate_coordinate(c, 5).is_none() {
                return Err(invalid(format!("coordinate `{c}` needs at least five decimals")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
        let mut media = vec![0xFF, 0xD8, 0xFF, 0xE0, 0x00, 0x10, b'J', b'F', b'I', b'F', 0x00, 0x01, 0x01, 0x00];
        while media.len() < MEDIA_SAMPLE_LEN {
            media.push(rng.gen());
        }
        Ok(Gen {
            m,
            rng,
            values,
            gps,
            media,
            capture: Capture::default(),
            ids: IpIds::default(),
            clock: BASE_TS,
            next_port: 40000,
            next_event: 1,
            next_object: 0,
            events: Vec::new(),
            flow_log: Vec::new(),
            file_ops: Vec::new(),
            tuples: Vec::new(),
            package: BTreeMap::new(),
            hardcoded: BTreeSet::new(),
            ops: Vec::new(),
            flows: 0,
            exp: Expected {
                app_id: m.app_id.clone(),
                run_id: m.run_id.clone(),
                device_id: m.device_id.clone(),
                ..Expected::default()
            },
        })
    }

    fn run(&mut self) -> Result<()> {
        if self.m.package {
            let mut dex = b"dex\n035\0".to_vec();
            let mut body = vec![0u8; 2048];
            self.rng.fill_bytes(&mut body);
            dex.extend(body);
            self.package.insert("classes.dex".into(), dex);
            self.package.insert(
                "AndroidManifest.xml".into(),
                format!("<manifest package=\"{}\"/>\n", self.m.app_id).into_bytes(),
            );
        }
        if self.m.system_traffic {
            self.system_traffic();
        }
        for i in 0..self.m.planted_leaks.len() {
            self.plant_leak(i)?;
        }
        for i in 0..self.m.planted_credentials.len() {
            self.plant_credential(i)?;
        }
        for i in 0..self.m.planted_key_transmissions.len() {
            self.plant_key_transmission(i)?;
        }
        for i in 0..self.m.planted_covert_files.len() {
            self.plant_covert_file(i);
        }
        for i in 0..self.m.planted_operations.len() {
            self.plant_operation(i)?;
        }
        if let Some(factor) = self.m.amplification_factor {
            self.plant_amplification(factor)?;
        }
        Ok(())
    }

    // ---- time, ports and addresses

    fn slot(&mut self) -> f64 {
        let t = self.clock;
        self.clock += 1.0;
        t
    }

    fn port(&mut self) -> u16 {
        let p = self.next_port;
        self.next_port = self.next_port.checked_add(1).unwrap_or(40000);
        p
    }

    fn device(&mut self) -> SocketAddrV4 {
        SocketAddrV4::new(DEVICE_IP, self.port())
    }

    // ---- deliveries

    /// Emits one delivery at `ts`. `attributed` adds the hooked tuple that
    /// ties the flow to the app.
    fn deliver(&mut self, protocol: Protocol, wire: Wire, ts: f64, attributed: bool) -> Result<()> {
        match (protocol, wire) {
            (Protocol::Http, Wire::Http { host, request }) => {
                let client = self.device();
                let server = SocketAddrV4::new(server_ip(&host), 80);
                let mut out = request.head_bytes();
                out.extend_from_slice(&request.body);
                let resp = ok_response();
                let mut back = resp.head_bytes();
                back.extend_from_slice(&resp.body);
                let packets =
                    tcp_conversation(client, server, &[(Side::Client, out), (Side::Server, back)], &self.m.segmentation, &mut self.ids, &mut self.rng);
                self.emit_flow(Transport::Tcp, client, server, packets, ts, attributed);
            }
            (Protocol::Https, Wire::Http { host, request }) => {
                let client = self.device();
                let server = SocketAddrV4::new(server_ip(&host), 443);
                let plain_len = request.head_bytes().len() + request.body.len();
                let hello = client_hello(&host, &mut self.rng);
                let mut server_hello = vec![0x16, 0x03, 0x03, 0x00, 0x50];
                server_hello.extend((0..0x50).map(|_| self.rng.gen::<u8>()));
                let out_record = tls_record(0x17, plain_len + 22, &mut self.rng);
                let back_record = tls_record(0x17, 96, &mut self.rng);
                let packets = tcp_conversation(
                    client,
                    server,
                    &[(Side::Client, hello), (Side::Server, server_hello), (Side::Client, out_record), (Side::Server, back_record)],
                    &self.m.segmentation,
                    &mut self.ids,
                    &mut self.rng,
                );
                self.emit_flow(Transport::Tcp, client, server, packets, ts, attributed);
                self.flow_log.push(FlowLogRecord {
                    ts: ts + 0.01,
                    client: client.into(),
                    server: server.into(),
                    request,
                    response: Some(ok_response()),
                });
            }
            (Protocol::NonHttp, Wire::Raw { server, transport, payload }) => {
                let client = self.device();
                let framed = frame(&payload);
                let ack = frame(b"ok");
                let msgs = [(Side::Client, framed), (Side::Server, ack)];
                let (proto, packets) = match transport {
                    TransportKind::Tcp => {
                        (Transport::Tcp, tcp_conversation(client, server, &msgs, &self.m.segmentation, &mut self.ids, &mut self.rng))
                    }
                    TransportKind::Udp => {
                        if attributed {
                            self.exp.amplification.push(ExpectedAmplification {
                                destination: SocketAddr::V4(server),
                                sent: msgs[0].1.len() as u64,
                                received: msgs[1].1.len() as u64,
                            });
                        }
                        (Transport::Udp, udp_exchange(client, server, &msgs, &self.m.segmentation, &mut self.ids, &mut self.rng))
                    }
                };
                self.emit_flow(proto, client, server, packets, ts, attributed);
            }
            (Protocol::File, Wire::File { path, buffer }) => {
                // no open record: the hooks log opens as reads
                self.file_ops.push(FileOp { ts, kind: FileOpKind::Write, path, buffer: Some(buffer), target: None });
            }
            (p, w) => return Err(invalid(format!("{p:?} cannot carry {w:?}"))),
        }
        Ok(())
    }

    fn emit_flow(&mut self, proto: Transport, client: SocketAddrV4, server: SocketAddrV4, packets: Vec<WirePacket>, ts: f64, attributed: bool) {
        let last = self.capture.push(packets, ts, 0.0005);
        self.flows += 1;
        if attributed {
            self.tuples.push(HookedTuple {
                proto,
                src: client.into(),
                dst: server.into(),
                first_ts: ts - 0.05,
                last_ts: last + 0.05,
            });
        }
        if last + 0.5 > self.clock {
            self.clock = (last + 0.5).ceil();
        }
    }

    /// Wire for a payload over `protocol`. HTTP bodies carry text as JSON
    /// built by `json_body` and bytes as `application/octet-stream`.
    fn wire_for(&self, protocol: Protocol, host: &str, body: Vec<u8>, content_type: &str, path: &str) -> Result<Wire> {
        Ok(match protocol {
            Protocol::Http | Protocol::Https => {
                Wire::Http { host: host.to_string(), request: post(host, path, content_type, body) }
            }
            Protocol::NonHttp => Wire::Raw { server: parse_endpoint(host)?, transport: TransportKind::Tcp, payload: body },
            Protocol::File => Wire::File { path: host.to_string(), buffer: body },
        })
    }

    // ---- system traffic

    fn system_traffic(&mut self) {
        let ts = self.slot();
        let id = self.values[&KnownType::DeviceId].clone();
        let host = "connectivitycheck.gstatic.com";
        let request = get(host, &format!("/generate_204?dev={id}"), Vec::new());
        let wire = Wire::Http { host: host.into(), request };
        self.deliver(Protocol::Http, wire, ts, false).expect("http wire");
        let ts = self.slot();
        let wire = Wire::Raw {
            server: SocketAddrV4::new(Ipv4Addr::new(203, 0, 113, 250), 5228),
            transport: TransportKind::Udp,
            payload: format!("{{\"dev\":\"{id}\"}}").into_bytes(),
        };
        self.deliver(Protocol::NonHttp, wire, ts, false).expect("raw wire");
    }

    // ---- leaks

    fn plant_leak(&mut self, item: usize) -> Result<()> {
        let leak = self.m.planted_leaks[item].clone();
        let t: DataType = leak.pii_type.parse().map_err(invalid)?;
        let DataType::Known(kind) = t else {
            return Err(invalid(format!("leak {item}: input fields are not plantable")));
        };
        if !transform::is_searchable(&leak.transform) {
            return Err(invalid(format!("leak {item}: transform chain is not one the inspector searches")));
        }
        let host = self.host_for(leak.protocol, leak.host.as_deref(), item)?;
        let media = kind == KnownType::UserFiles;
        if media && !leak.transform.is_empty() {
            return Err(invalid(format!("leak {item}: media is sent untransformed")));
        }

        // payload and what the needle search sees
        let (content, value) = if media {
            let mut bytes = self.media.clone();
            bytes.extend((0..200).map(|_| self.rng.gen::<u8>()));
            (Content::Binary(bytes), String::new())
        } else if t.is_gps() {
            let decimals = match kind {
                KnownType::Gps7m => 5,
                KnownType::Gps78m => 4,
                _ => 3,
            };
            let lat = truncate_coordinate(&self.gps.0, decimals).expect("checked");
            let lon = truncate_coordinate(&self.gps.1, decimals).expect("checked");
            let tl = transform::apply(&leak.transform, lat.as_bytes());
            let tn = transform::apply(&leak.transform, lon.as_bytes());
            if !transform::is_text(&tl) {
                return Err(invalid(format!("leak {item}: GPS needs a text transform")));
            }
            let (tl, tn) = (String::from_utf8(tl).expect("ascii"), String::from_utf8(tn).expect("ascii"));
            let text = match (leak.placement, &leak.channel) {
                (Placement::Query, Channel::Regular) => format!("lat={tl}&lon={tn}"),
                (Placement::Header, Channel::Regular) => format!("{tl},{tn}"),
                _ => json!({"event": "loc", "lat": tl, "lon": tn}).to_string(),
            };
            (Content::Text(text), lat)
        } else {
            let value = self.values[&kind].clone();
            let out = transform::apply(&leak.transform, value.as_bytes());
            if transform::is_text(&out) {
                let s = String::from_utf8(out).expect("ascii");
                let text = match (leak.placement, &leak.channel) {
                    (Placement::Query, Channel::Regular) => {
                        if !s.bytes().all(|b| b.is_ascii_alphanumeric() || b"-._~:,+@/=".contains(&b)) {
                            return Err(invalid(format!("leak {item}: value is not query safe")));
                        }
                        format!("v={s}")
                    }
                    (Placement::Header, Channel::Regular) => s,
                    _ => {
                        let body = json!({"event": "sync", "v": s}).to_string();
                        if !body.contains(&s) {
                            return Err(invalid(format!("leak {item}: value changes under JSON escaping")));
                        }
                        body
                    }
                };
                (Content::Text(text), value)
            } else {
                let mut b = b"SYNC".to_vec();
                b.extend(out);
                (Content::Binary(b), value)
            }
        };
        if matches!(content, Content::Binary(_)) && leak.placement != Placement::Body && matches!(leak.channel, Channel::Regular) {
            return Err(invalid(format!("leak {item}: binary payloads need body placement")));
        }

        let ts = self.slot();
        let (wire, chain_algorithms) = match &leak.channel {
            Channel::Regular => {
                let wire = match (&content, leak.protocol) {
                    (_, Protocol::NonHttp) => Wire::Raw {
                        server: parse_endpoint(&host)?,
                        transport: leak.transport,
                        payload: content.bytes(),
                    },
                    (_, Protocol::File) => Wire::File { path: host.clone(), buffer: content.bytes() },
                    (Content::Binary(b), _) => {
                        let ct = if media { "image/jpeg" } else { "application/octet-stream" };
                        Wire::Http { host: host.clone(), request: post(&host, "/v1/upload", ct, b.clone()) }
                    }
                    (Content::Text(text), _) => match leak.placement {
                        Placement::Body => Wire::Http {
                            host: host.clone(),
                            request: post(&host, "/v1/events", "application/json", text.clone().into_bytes()),
                        },
                        Placement::Query => Wire::Http { host: host.clone(), request: get(&host, &format!("/v1/ping?{text}"), Vec::new()) },
                        Placement::Header => Wire::Http {
                            host: host.clone(),
                            request: get(&host, "/v1/ping", vec![("X-Client-Info".into(), text.clone())]),
                        },
                    },
                };
                (wire, Vec::new())
            }
            Channel::Custom(chain) => {
                let (carried, labels) = self.encrypt_chain(chain, &content.bytes(), ts)?;
                let wire = self.carrier_wire(leak.protocol, &host, leak.placement, leak.transport, chain.encoding, &carried)?;
                (wire, labels)
            }
        };
        self.deliver(leak.protocol, wire, ts, true)?;

        let custom = !chain_algorithms.is_empty();
        let reported_type = if media { KnownType::UserFiles.label().to_string() } else { t.label() };
        let exp_host = if leak.protocol == Protocol::File { normalize_path(&host) } else { host.to_ascii_lowercase() };
        self.exp.leaks.push(ExpectedLeak {
            item,
            detector: if media { "detect_media_exfil" } else { "search_needles" }.into(),
            pii_type: reported_type.clone(),
            channel: leak.protocol.channel().into(),
            host: exp_host.clone(),
            custom_encrypted: custom,
            chain_algorithms,
            value,
            needle_chain: leak.transform.clone(),
        });
        if leak.protocol == Protocol::File && !exp_host.starts_with('/') {
            let app = self.m.app_id.clone();
            let entry = self.covert_entry(&exp_host);
            entry.writers.insert(app);
            entry.pii_types.insert(reported_type);
            entry.custom_encrypted |= custom;
        }
        Ok(())
    }

    fn covert_entry(&mut self, path: &str) -> &mut ExpectedCovertFile {
        if let Some(i) = self.exp.covert_files.iter().position(|c| c.path == path) {
            return &mut self.exp.covert_files[i];
        }
        self.exp.covert_files.push(ExpectedCovertFile {
            path: path.to_string(),
            writers: BTreeSet::new(),
            readers: BTreeSet::new(),
            pii_types: BTreeSet::new(),
            custom_encrypted: false,
        });
        self.exp.covert_files.last_mut().expect("just pushed")
    }

    fn host_for(&self, protocol: Protocol, host: Option<&str>, item: usize) -> Result<String> {
        match (protocol, host) {
            (_, Some(h)) => {
                if protocol == Protocol::NonHttp {
                    parse_endpoint(h)?;
                }
                Ok(h.to_string())
            }
            (Protocol::Http | Protocol::Https, None) => Ok(format!("api{item}.tracker.example")),
            (Protocol::NonHttp, None) => Ok(format!("203.0.113.{}:{}", 10 + item % 200, 9000 + item % 1000)),
            (Protocol::File, None) => Ok(format!("/sdcard/.cache{item}/.state.dat")),
        }
    }

    /// Wire carrying custom ciphertext, encoded as requested.
    fn carrier_wire(
        &self,
        protocol: Protocol,
        host: &str,
        placement: Placement,
        transport: TransportKind,
        encoding: CarrierEncoding,
        ct: &[u8],
    ) -> Result<Wire> {
        let encoded: Option<String> = match encoding {
            CarrierEncoding::Raw => None,
            CarrierEncoding::Base64 => Some(STANDARD.encode(ct)),
            CarrierEncoding::Hex => Some(hex::encode(ct)),
        };
        Ok(match protocol {
            Protocol::Http | Protocol::Https => match (placement, &encoded) {
                (Placement::Body, None) => {
                    Wire::Http { host: host.into(), request: post(host, "/v1/data", "application/octet-stream", ct.to_vec()) }
                }
                (Placement::Body, Some(e)) => Wire::Http {
                    host: host.into(),
                    request: post(host, "/v1/data", "application/json", json!({ "d": e }).to_string().into_bytes()),
                },
                (Placement::Query, Some(e)) => Wire::Http { host: host.into(), request: get(host, &format!("/v1/data?d={e}"), Vec::new()) },
                (Placement::Header, Some(e)) => {
                    Wire::Http { host: host.into(), request: get(host, "/v1/data", vec![("X-Payload".into(), e.clone())]) }
                }
                (_, None) => return Err(invalid("raw ciphertext needs body placement")),
            },
            Protocol::NonHttp => Wire::Raw {
                server: parse_endpoint(host)?,
                transport,
                payload: encoded.map(String::into_bytes).unwrap_or_else(|| ct.to_vec()),
            },
            Protocol::File => Wire::File { path: host.into(), buffer: encoded.map(String::into_bytes).unwrap_or_else(|| ct.to_vec()) },
        })
    }

    // ---- cipher operations

    fn resolve_key(&mut self, spec: &CipherSpec, policy: &KeyPolicy) -> Result<KeyMaterial> {
        match policy {
            KeyPolicy::Random => ciphers::generate_key(spec, &mut self.rng),
            KeyPolicy::Fixed { key } | KeyPolicy::Hardcoded { key, .. } => {
                if spec.family == Family::Rsa {
                    return Err(invalid("RSA keys are always generated"));
                }
                let bytes = hex::decode(key).map_err(|e| invalid(format!("key `{key}`: {e}")))?;
                ciphers::check_key(spec, &bytes)?;
                if let KeyPolicy::Hardcoded { encoding, path, .. } = policy {
                    if !self.m.package {
                        return Err(invalid("hardcoded keys need `package`"));
                    }
                    let embedded = match encoding {
                        BlobEncoding::Plain => {
                            let mut b: Vec<u8> = (0..24).map(|_| self.rng.gen()).collect();
                            b.extend_from_slice(&bytes);
                            b.extend((0..24).map(|_| self.rng.gen::<u8>()));
                            b
                        }
                        BlobEncoding::Base64 => format!("static final String K = \"{}\";\n", STANDARD.encode(&bytes)).into_bytes(),
                        BlobEncoding::HexLower => format!("static final String K = \"{}\";\n", hex::encode(&bytes)).into_bytes(),
                        BlobEncoding::HexUpper => format!("static final String K = \"{}\";\n", hex::encode_upper(&bytes)).into_bytes(),
                    };
                    self.package.entry(path.clone()).or_default().extend(embedded);
                    self.hardcoded.insert(bytes.clone());
                }
                Ok(KeyMaterial { logged: bytes, rsa_private: None })
            }
        }
    }

    /// Encrypts `plaintext` and logs init, update and final events starting
    /// at `ts`. Returns the ciphertext.
    fn run_op(&mut self, spec: &CipherSpec, key: &KeyMaterial, plaintext: &[u8], updates: usize, depth: u32, ts: f64) -> Result<Vec<u8>> {
        if let Some(max) = spec.max_plaintext() {
            if plaintext.len() > max {
                return Err(invalid(format!("{} takes at most {max} plaintext bytes, got {}", spec.label(), plaintext.len())));
            }
            if plaintext.first() == Some(&0) {
                return Err(invalid("RSA plaintext must not start with a zero byte"));
            }
        }
        let mut iv = vec![0u8; spec.iv_len()];
        self.rng.fill_bytes(&mut iv);
        let ct = ciphers::encrypt(spec, &key.logged, &iv, plaintext)?;
        let cuts = ciphers::split_points(spec, plaintext.len(), updates, &mut self.rng);
        let object = format!("0x{:x}", 0x7f3a_1000 + self.next_object * 0x40);
        self.next_object += 1;
        let mut t = ts;
        let mut tick = || {
            t += 0.001;
            t
        };
        let push = |g: &mut Self, method: Method, ts: f64, input: Option<&[u8]>, output: Option<&[u8]>| {
            let first = method == Method::Init;
            g.events.push(CipherEvent {
                event_id: g.next_event,
                object_id: object.clone(),
                ts,
                method,
                op_kind: OpKind::Encrypt,
                algorithm: first.then(|| spec.transformation.clone()),
                key: first.then(|| key.logged.clone()),
                iv: (first && !iv.is_empty()).then(|| iv.clone()),
                key_bits: (first && spec.family == Family::Rsa).then_some(spec.key_bits),
                input: input.map(<[u8]>::to_vec),
                output: output.map(<[u8]>::to_vec),
                args: Vec::new(),
                name: None,
            });
            g.next_event += 1;
        };
        push(self, Method::Init, tick(), None, None);
        let mut prev = 0;
        for &c in &cuts {
            push(self, Method::Update, tick(), Some(&plaintext[prev..c]), Some(&ct[prev..c]));
            prev = c;
        }
        push(self, Method::DoFinal, tick(), Some(&plaintext[prev..]), Some(&ct[prev..]));
        self.ops.push(OpRecord {
            label: spec.label(),
            depth,
            plaintext_len: plaintext.len(),
            ciphertext_len: ct.len(),
            update_calls: cuts.len(),
        });
        self.exp.weaknesses.extend(spec.weaknesses().into_iter().map(String::from));
        Ok(ct)
    }

    /// Runs a nested chain, innermost layer first, ending before `ts`.
    /// Returns the outermost ciphertext and the labels outermost first.
    fn encrypt_chain(&mut self, chain: &CustomChain, plaintext: &[u8], ts: f64) -> Result<(Vec<u8>, Vec<String>)> {
        if chain.layers.is_empty() {
            return Err(invalid("custom chain without layers"));
        }
        if let Some(c) = chain.compression {
            if c.layer >= chain.layers.len() {
                return Err(invalid(format!("compression layer {} out of range", c.layer)));
            }
        }
        let mut specs = Vec::new();
        for l in &chain.layers {
            specs.push(CipherSpec::parse(l.algorithm(), l.key_bits())?);
        }
        let mut data = plaintext.to_vec();
        let mut t = ts - 0.5;
        for i in (0..specs.len()).rev() {
            if let Some(c) = chain.compression.filter(|c| c.layer == i) {
                data = compress(c.codec, &data);
            }
            let policy = chain.layers[i].key_policy().cloned().unwrap_or_else(|| chain.key_policy.clone());
            let key = self.resolve_key(&specs[i], &policy)?;
            data = self.run_op(&specs[i], &key, &data, chain.updates, i as u32 + 1, t)?;
            t += 0.05;
        }
        Ok((data, specs.iter().map(CipherSpec::label).collect()))
    }

    // ---- credentials

    fn plant_credential(&mut self, item: usize) -> Result<()> {
        let c = self.m.planted_credentials[item].clone();
        let key_name = c.key_name.clone().unwrap_or_else(|| c.kind.default_key().to_string());
        let value = match &c.value {
            Some(v) => v.clone(),
            None => (&mut self.rng).sample_iter(&Alphanumeric).take(24).map(char::from).collect(),
        };
        if value.len() < 8 || !value.bytes().all(|b| b.is_ascii_alphanumeric() || b"-._~".contains(&b)) {
            return Err(invalid(format!("credential {item}: value must be 8+ URL-safe characters")));
        }
        let first_https = c.send.protocol == Protocol::Https && matches!(c.send.channel, Channel::Regular);
        self.send_credential(item, c.kind, &key_name, &value, &c.send)?;
        if let Some(again) = &c.resend {
            self.send_credential(item, c.kind, &key_name, &value, again)?;
            if first_https && matches!(again.protocol, Protocol::Http | Protocol::NonHttp) {
                self.exp.downgrades.push(ExpectedDowngrade {
                    item,
                    kind: c.kind.name().into(),
                    key_name: key_name.clone(),
                    later_channel: again.protocol.channel().into(),
                    later_custom: matches!(again.channel, Channel::Custom(_)),
                });
            }
        }
        Ok(())
    }

    fn send_credential(&mut self, item: usize, kind: CredentialKind, key: &str, value: &str, send: &CredentialSend) -> Result<()> {
        if send.protocol == Protocol::File {
            return Err(invalid(format!("credential {item}: files are not searched for credentials")));
        }
        let host = self.host_for(send.protocol, send.host.as_deref(), item + 500)?;
        let json_text = json!({ key: value, "client": "android" }).to_string();
        let form_text = format!("{key}={value}&lang=en");
        let ts = self.slot();
        let custom = matches!(send.channel, Channel::Custom(_));
        let (wire, structure, reported_key) = match &send.channel {
            Channel::Custom(chain) => {
                let (pt, structure) = match send.placement {
                    CredentialPlacement::Json => (json_text, "json"),
                    CredentialPlacement::Form => (form_text, "form_urlencoded"),
                    _ => return Err(invalid(format!("credential {item}: custom channels carry json or form payloads"))),
                };
                let (ct, _) = self.encrypt_chain(chain, pt.as_bytes(), ts)?;
                let wire = self.carrier_wire(send.protocol, &host, Placement::Body, send.transport, chain.encoding, &ct)?;
                (wire, structure, key.to_string())
            }
            Channel::Regular if send.protocol == Protocol::NonHttp => {
                let payload = match send.placement {
                    CredentialPlacement::Json => json_text,
                    CredentialPlacement::Form => form_text,
                    _ => return Err(invalid(format!("credential {item}: non_http carries json or form payloads"))),
                };
                (Wire::Raw { server: parse_endpoint(&host)?, transport: send.transport, payload: payload.into_bytes() }, "raw", key.to_string())
            }
            Channel::Regular => {
                let (request, structure, reported) = match send.placement {
                    CredentialPlacement::Json => (post(&host, "/v1/auth", "application/json", json_text.into_bytes()), "json", key.to_string()),
                    CredentialPlacement::Form => {
                        (post(&host, "/v1/auth", "application/x-www-form-urlencoded", form_text.into_bytes()), "form_urlencoded", key.to_string())
                    }
                    CredentialPlacement::Query => (get(&host, &format!("/v1/session?{key}={value}&lang=en"), Vec::new()), "query", key.to_string()),
                    CredentialPlacement::Header => {
                        let v = if key.eq_ignore_ascii_case("authorization") { format!("Bearer {value}") } else { value.to_string() };
                        (get(&host, "/v1/profile", vec![(key.to_string(), v)]), "http_header", key.to_string())
                    }
                    CredentialPlacement::Cookie => {
                        (get(&host, "/v1/profile", vec![("Cookie".into(), format!("{key}={value}; theme=dark"))]), "cookie", key.to_string())
                    }
                };
                (Wire::Http { host: host.clone(), request }, structure, reported)
            }
        };
        self.deliver(send.protocol, wire, ts, true)?;
        self.exp.credentials.push(ExpectedCredential {
            item,
            kind: kind.name().into(),
            key_name: reported_key,
            structure: structure.into(),
            channel: send.protocol.channel().into(),
            host: host.to_ascii_lowercase(),
            custom_encrypted: custom,
        });
        Ok(())
    }

    // ---- keys, files, bare operations

    fn plant_key_transmission(&mut self, item: usize) -> Result<()> {
        let k = self.m.planted_key_transmissions[item].clone();
        if matches!(k.protocol, Protocol::File) {
            return Err(invalid(format!("key transmission {item}: keys are searched in network traffic only")));
        }
        let spec = CipherSpec::parse(&k.algorithm, k.key_bits)?;
        if spec.family == Family::Rsa {
            return Err(invalid(format!("key transmission {item}: RSA public keys are not secrets")));
        }
        let key = self.resolve_key(&spec, &k.key_policy)?;
        let host = self.host_for(k.protocol, k.host.as_deref(), item + 700)?;
        let ts = self.slot();
        let pt: String = (&mut self.rng).sample_iter(&Alphanumeric).take(40).map(char::from).collect();
        self.run_op(&spec, &key, pt.as_bytes(), 1, 1, ts - 0.5)?;
        let body = match k.encoding {
            KeyEncoding::Plain => {
                let mut b = b"KEYX".to_vec();
                b.extend_from_slice(&key.logged);
                b
            }
            KeyEncoding::Base64 => json!({ "blob": STANDARD.encode(&key.logged) }).to_string().into_bytes(),
            KeyEncoding::Hex => json!({ "blob": hex::encode(&key.logged) }).to_string().into_bytes(),
        };
        let ct = if k.encoding == KeyEncoding::Plain { "application/octet-stream" } else { "application/json" };
        let mut wire = self.wire_for(k.protocol, &host, body, ct, "/v1/register")?;
        if let Wire::Raw { transport, .. } = &mut wire {
            *transport = k.transport;
        }
        self.deliver(k.protocol, wire, ts, true)?;
        self.exp.key_transmissions.push(ExpectedKeyTransmission {
            item,
            channel: k.protocol.channel().into(),
            host: host.to_ascii_lowercase(),
            encoding: match k.encoding {
                KeyEncoding::Plain => "plain",
                KeyEncoding::Base64 => "base64",
                KeyEncoding::Hex => "hex",
            }
            .into(),
        });
        Ok(())
    }

    fn plant_covert_file(&mut self, item: usize) {
        let f = self.m.planted_covert_files[item].clone();
        let ts = self.slot();
        let mut id = [0u8; 16];
        self.rng.fill_bytes(&mut id);
        let content = json!({ "uuid": hex::encode(id) }).to_string().into_bytes();
        let app = self.m.app_id.clone();
        self.deliver(Protocol::File, Wire::File { path: f.path.clone(), buffer: content.clone() }, ts, true).expect("file wire");
        let path = normalize_path(&f.path);
        if !path.starts_with('/') {
            self.covert_entry(&path).writers.insert(app.clone());
        }
        if f.read_back {
            self.file_ops.push(FileOp { ts: ts + 0.2, kind: FileOpKind::Open, path: f.path.clone(), buffer: None, target: None });
            self.file_ops.push(FileOp { ts: ts + 0.201, kind: FileOpKind::Read, path: f.path.clone(), buffer: Some(content), target: None });
            if !path.starts_with('/') {
                self.covert_entry(&path).readers.insert(app.clone());
            }
        }
        if let Some(to) = &f.rename_to {
            self.file_ops.push(FileOp { ts: ts + 0.3, kind: FileOpKind::Rename, path: f.path.clone(), buffer: None, target: Some(to.clone()) });
            let target = normalize_path(to);
            if !target.starts_with('/') {
                self.covert_entry(&target).writers.insert(app);
            }
        }
    }

    fn plant_operation(&mut self, item: usize) -> Result<()> {
        let o = self.m.planted_operations[item].clone();
        let spec = CipherSpec::parse(&o.algorithm, o.key_bits)?;
        let key = self.resolve_key(&spec, &o.key_policy)?;
        let ts = self.slot();
        let pt: String = (&mut self.rng).sample_iter(&Alphanumeric).take(o.plaintext_len.max(1)).map(char::from).collect();
        let ct = self.run_op(&spec, &key, pt.as_bytes(), o.updates, 1, ts - 0.5)?;
        if let Some(sent) = &o.sent {
            let host = self.host_for(sent.protocol, sent.host.as_deref(), item + 900)?;
            let wire = self.carrier_wire(sent.protocol, &host, Placement::Body, sent.transport, sent.encoding, &ct)?;
            self.deliver(sent.protocol, wire, ts, true)?;
        }
        Ok(())
    }

    // ---- amplification

    fn plant_amplification(&mut self, factor: u64) -> Result<()> {
        let dest = self.m.amplification_destination.unwrap_or_else(|| SocketAddrV4::new(Ipv4Addr::new(198, 51, 100, 77), 7777));
        if matches!(dest.port(), 53 | 123 | 443) {
            return Err(invalid("amplification destination uses an excluded port"));
        }
        let mut request = b"\x01AMP".to_vec();
        request.extend((0..28).map(|_| self.rng.gen::<u8>()));
        let mut msgs = vec![(Side::Client, request.clone())];
        msgs.extend(amplify(&request, factor).into_iter().map(|d| (Side::Server, d)));
        self.udp_flow(dest, msgs)?;
        self.exp.amplification.push(ExpectedAmplification {
            destination: SocketAddr::V4(dest),
            sent: request.len() as u64,
            received: request.len() as u64 * factor,
        });

        // large replies on excluded service ports
        let mut dns = vec![0x1a, 0x2b, 0x01, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00];
        dns.extend_from_slice(b"\x07example\x03com\x00\x00\x01\x00\x01");
        let mut dns_reply = dns.clone();
        dns_reply.resize(900, 0);
        self.udp_flow(SocketAddrV4::new(Ipv4Addr::new(8, 8, 8, 8), 53), vec![(Side::Client, dns), (Side::Server, dns_reply)])?;
        let mut ntp = vec![0x23];
        ntp.resize(48, 0);
        let ntp_reply = vec![0x24; 48 * 12];
        self.udp_flow(SocketAddrV4::new(Ipv4Addr::new(129, 6, 15, 28), 123), vec![(Side::Client, ntp), (Side::Server, ntp_reply)])?;
        let mut quic = vec![0xC3];
        quic.extend((0..1199).map(|_| self.rng.gen::<u8>()));
        let mut msgs = vec![(Side::Client, quic)];
        for _ in 0..20 {
            let mut d = vec![0x40];
            d.extend((0..1199).map(|_| self.rng.gen::<u8>()));
            msgs.push((Side::Server, d));
        }
        self.udp_flow(SocketAddrV4::new(Ipv4Addr::new(142, 250, 0, 1), 443), msgs)
    }

    fn udp_flow(&mut self, server: SocketAddrV4, msgs: Vec<(Side, Vec<u8>)>) -> Result<()> {
        let ts = self.slot();
        let client = self.device();
        let packets = udp_exchange(client, server, &msgs, &self.m.segmentation, &mut self.ids, &mut self.rng);
        self.emit_flow(Transport::Udp, client, server, packets, ts, true);
        Ok(())
    }

    // ---- output

    fn finish(mut self) -> Result<Generated> {
        let mut files = BTreeMap::new();
        files.insert(CAPTURE_FILE.to_string(), self.capture.to_pcap());
        files.insert(FLOWS_FILE.to_string(), jsonl(&self.flow_log)?);
        files.insert(CIPHERLOG_FILE.to_string(), jsonl(&self.events)?);
        files.insert(FILEOPS_FILE.to_string(), jsonl(&self.file_ops)?);
        files.insert(TUPLES_FILE.to_string(), jsonl(&self.tuples)?);

        let entries = self
            .values
            .iter()
            .map(|(k, v)| PiiEntry { data_type: DataType::Known(*k), category: None, purpose: None, values: vec![v.clone()] })
            .collect();
        let profile = ProfileDocument {
            app_id: self.m.app_id.clone(),
            run_id: self.m.run_id.clone(),
            device_id: self.m.device_id.clone(),
            app_version: self.m.app_version.clone(),
            profile: PiiProfile {
                entries,
                gps: Some(GpsFix { lat: Coordinate(self.gps.0.clone()), lon: Coordinate(self.gps.1.clone()) }),
                media_samples: vec![MediaSample { name: "IMG_0001.jpg".into(), leading_bytes: self.media.clone() }],
            },
        };
        files.insert(PROFILE_FILE.to_string(), (serde_json::to_string_pretty(&profile)? + "\n").into_bytes());

        let package_blobs = self.m.package.then_some(self.package.len());
        for (rel, bytes) in std::mem::take(&mut self.package) {
            files.insert(format!("{PACKAGE_DIR}/{rel}"), bytes);
        }

        self.exp.weaknesses.extend(self.hardcoded.iter().map(|_| "hardcoded_key".to_string()));
        self.exp.weaknesses.sort();
        self.exp.operations = self
            .ops
            .iter()
            .map(|o| ExpectedOperation {
                label: o.label.clone(),
                depth: o.depth,
                plaintext_len: o.plaintext_len,
                ciphertext_len: o.ciphertext_len,
                update_calls: o.update_calls,
            })
            .collect();
        self.exp.counts = ExpectedCounts {
            flows: self.flows,
            decrypted_http: self.flow_log.len(),
            cipher_events: self.events.len(),
            file_ops: self.file_ops.len(),
            hooked_tuples: self.tuples.len(),
            package_blobs,
        };
        Ok(Generated { files, expected: self.exp })
    }
}

// ---- helpers

fn jsonl<T: serde::Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for i in items {
        out.extend(serde_json::to_vec(i)?);
        out.push(b'\n');
    }
    Ok(out)
}

/// Truncates a decimal coordinate to `decimals` places.
pub fn truncate_coordinate(c: &str, decimals: usize) -> Option<String> {
    let (int, frac) = c.split_once('.')?;
    (frac.len() >= decimals && frac.bytes().all(|b| b.is_ascii_digit())).then(|| format!("{int}.{}", &frac[..decimals]))
}

/// Stable documentation-range address for a host name.
pub fn server_ip(host: &str) -> Ipv4Addr {
    let mut h: u32 = 0x811c_9dc5;
    for b in host.to_ascii_lowercase().bytes() {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    let last = (h % 254 + 1) as u8;
    if h & 0x100 == 0 {
        Ipv4Addr::new(198, 51, 100, last)
    } else {
        Ipv4Addr::new(203, 0, 113, last)
    }
}

fn parse_endpoint(host: &str) -> Result<SocketAddrV4> {
    host.parse().map_err(|_| invalid(format!("`{host}` is not an IPv4 ip:port endpoint")))
}

/// Non-HTTP framing: magic, big-endian length, payload.
fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = vec![0xC5, 0x01];
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    out
}

fn compress(codec: Codec, data: &[u8]) -> Vec<u8> {
    match codec {
        Codec::Gzip => {
            let mut e = GzEncoder::new(Vec::new(), flate2::Compression::default());
            e.write_all(data).expect("in-memory write");
            e.finish().expect("in-memory write")
        }
        Codec::Zlib => {
            let mut e = ZlibEncoder::new(Vec::new(), flate2::Compression::default());
            e.write_all(data).expect("in-memory write");
            e.finish().expect("in-memory write")
        }
    }
}

/// Reply datagrams totalling `factor` times the request.
pub fn amplify(request: &[u8], factor: u64) -> Vec<Vec<u8>> {
    let total = request.len() * factor as usize;
    let stream: Vec<u8> = request.iter().copied().cycle().take(total).collect();
    stream.chunks(MAX_REPLY_DATAGRAM).map(<[u8]>::to_vec).collect()
}

fn base_headers(host: &str) -> Vec<(String, String)> {
    vec![("Host".into(), host.to_string()), ("User-Agent".into(), "okhttp/4.12.0".into())]
}

fn post(host: &str, path: &str, content_type: &str, body: Vec<u8>) -> HttpRequest {
    let mut headers = base_headers(host);
    headers.push(("Content-Type".into(), content_type.into()));
    headers.push(("Content-Length".into(), body.len().to_string()));
    HttpRequest { method: "POST".into(), url: path.into(), http_version: "HTTP/1.1".into(), headers, body }
}

fn get(host: &str, path: &str, extra: Vec<(String, String)>) -> HttpRequest {
    let mut headers = base_headers(host);
    headers.extend(extra);
    HttpRequest { method: "GET".into(), url: path.into(), http_version: "HTTP/1.1".into(), headers, body: Vec::new() }
}

fn ok_response() -> HttpResponse {
    let body = b"{\"ok\":true}".to_vec();
    HttpResponse {
        status: 200,
        reason: "OK".into(),
        headers: vec![("Content-Type".into(), "application/json".into()), ("Content-Length".into(), body.len().to_string())],
        body,
    }
}

fn tls_record<R: Rng>(content_type: u8, len: usize, rng: &mut R) -> Vec<u8> {
    let mut out = vec![content_type, 0x03, 0x03];
    out.extend_from_slice(&(len as u16).to_be_bytes());
    out.extend((0..len).map(|_| rng.gen::<u8>()));
    out
}

/// Minimal TLS 1.2 ClientHello carrying a server name.
fn client_hello<R: Rng>(host: &str, rng: &mut R) -> Vec<u8> {
    let name = host.as_bytes();
    let mut sni = Vec::new();
    sni.extend_from_slice(&((name.len() + 3) as u16).to_be_bytes());
    sni.push(0);
    sni.extend_from_slice(&(name.len() as u16).to_be_bytes());
    sni.extend_from_slice(name);
    let mut ext = vec![0x00, 0x00];
    ext.extend_from_slice(&(sni.len() as u16).to_be_bytes());
    ext.extend(sni);

    let mut body = vec![0x03, 0x03];
    body.extend((0..32).map(|_| rng.gen::<u8>()));
    body.push(0);
    body.extend_from_slice(&[0x00, 0x02, 0x13, 0x01]);
    body.extend_from_slice(&[0x01, 0x00]);
    body.extend_from_slice(&(ext.len() as u16).to_be_bytes());
    body.extend(ext);

    let mut hs = vec![0x01];
    hs.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    hs.extend(body);
    let mut rec = vec![0x16, 0x03, 0x01];
    rec.extend_from_slice(&(hs.len() as u16).to_be_bytes());
    rec.extend(hs);
    rec
}
