//! Application protocol classification.

use serde::{Deserialize, Serialize};

use super::http;
use super::stream::FlowSkeleton;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolClass {
    Http,
    TlsOpaque,
    HttpsDecrypted,
    NonHttp,
}

/// TLS record content type for handshake messages.
const TLS_HANDSHAKE: u8 = 0x16;

/// True when `payload` opens with a TLS handshake record header
/// (`0x16 0x03 0x0X`).
pub fn is_tls_record(payload: &[u8]) -> bool {
    payload.len() >= 3 && payload[0] == TLS_HANDSHAKE && payload[1] == 0x03 && payload[2] <= 0x04
}

/// Classifies a reassembled flow from its bytes alone. Flows linked to a
/// decrypted HTTPS record are promoted to `HttpsDecrypted` by the bundle
/// loader, which is the only place that knows about those records.
pub fn classify_protocol(flow: &FlowSkeleton) -> ProtocolClass {
    classify_payloads(&flow.payload_out, &flow.payload_in)
}

pub fn classify_payloads(out: &[u8], inbound: &[u8]) -> ProtocolClass {
    if http::starts_with_request(out) {
        return ProtocolClass::Http;
    }
    if is_tls_record(out) || (out.is_empty() && is_tls_record(inbound)) {
        return ProtocolClass::TlsOpaque;
    }
    if out.is_empty() && http::first_line(inbound).is_some_and(http::is_status_line) {
        return ProtocolClass::Http;
    }
    ProtocolClass::NonHttp
}

/// Extracts the server name from a TLS ClientHello at the start of `payload`.
pub fn parse_sni(payload: &[u8]) -> Option<String> {
    if !is_tls_record(payload) {
        return None;
    }
    let record_len = u16::from_be_bytes([*payload.get(3)?, *payload.get(4)?]) as usize;
    let record = payload.get(5..(5 + record_len).min(payload.len()))?;
    // handshake header: type(1) length(3)
    if *record.first()? != 0x01 {
        return None;
    }
    let mut p = 4;
    p += 2 + 32; // client_version, random
    let sid_len = *record.get(p)? as usize;
    p += 1 + sid_len;
    let suites_len = u16::from_be_bytes([*record.get(p)?, *record.get(p + 1)?]) as usize;
    p += 2 + suites_len;
    let comp_len = *record.get(p)? as usize;
    p += 1 + comp_len;
    let ext_total = u16::from_be_bytes([*record.get(p)?, *record.get(p + 1)?]) as usize;
    p += 2;
    let ext_end = (p + ext_total).min(record.len());
    while p + 4 <= ext_end {
        let ext_type = u16::from_be_bytes([record[p], record[p + 1]]);
        let ext_len = u16::from_be_bytes([record[p + 2], record[p + 3]]) as usize;
        let body = record.get(p + 4..p + 4 + ext_len)?;
        if ext_type == 0 {
            // server_name_list: len(2) then entries of type(1) len(2) name
            let mut q = 2;
            while q + 3 <= body.len() {
                let name_type = body[q];
                let name_len = u16::from_be_bytes([body[q + 1], body[q + 2]]) as usize;
                let name = body.get(q + 3..q + 3 + name_len)?;
                if name_type == 0 {
                    return std::str::from_utf8(name).ok().map(str::to_string);
                }
                q += 3 + name_len;
            }
            return None;
        }
        p += 4 + ext_len;
    }
    None
}

/// Builds a minimal ClientHello record carrying `server_name`. Used by test
/// fixtures that need opaque TLS flows with a recoverable SNI.
pub fn client_hello(server_name: &str, random: [u8; 32]) -> Vec<u8> {
    let name = server_name.as_bytes();
    let mut sni = Vec::new();
    sni.extend_from_slice(&((name.len() + 3) as u16).to_be_bytes());
    sni.push(0);
    sni.extend_from_slice(&(name.len() as u16).to_be_bytes());
    sni.extend_from_slice(name);
    let mut ext = Vec::new();
    ext.extend_from_slice(&0u16.to_be_bytes());
    ext.extend_from_slice(&(sni.len() as u16).to_be_bytes());
    ext.extend_from_slice(&sni);

    let mut hello = vec![0x03, 0x03];
    hello.extend_from_slice(&random);
    hello.push(0); // session id
    hello.extend_from_slice(&[0x00, 0x02, 0x13, 0x01]); // one cipher suite
    hello.extend_from_slice(&[0x01, 0x00]); // null compression
    hello.extend_from_slice(&(ext.len() as u16).to_be_bytes());
    hello.extend_from_slice(&ext);

    let mut hs = vec![0x01];
    hs.extend_from_slice(&(hello.len() as u32).to_be_bytes()[1..]);
    hs.extend_from_slice(&hello);
    let mut rec = vec![TLS_HANDSHAKE, 0x03, 0x01];
    rec.extend_from_slice(&(hs.len() as u16).to_be_bytes());
    rec.extend_from_slice(&hs);
    rec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn http_request() {
        assert_eq!(
            classify_payloads(b"GET / HTTP/1.1\r\nHost: a\r\n\r\n", b""),
            ProtocolClass::Http
        );
    }

    #[test]
    fn tls_record_layer_constants() {
        // content type 22 (handshake), legacy record version 3.1
        assert_eq!(classify_payloads(&[0x16, 0x03, 0x01, 0, 5], b""), ProtocolClass::TlsOpaque);
        assert_eq!(classify_payloads(&[0x16, 0x03, 0x03], b""), ProtocolClass::TlsOpaque);
        assert_eq!(classify_payloads(&[0x17, 0x03, 0x03], b""), ProtocolClass::NonHttp);
    }

    #[test]
    fn binary_payload_is_non_http() {
        assert_eq!(
            classify_payloads(&[0x00, 0x00, 0x01, 0x2c, 0xde, 0xad], b"\x01"),
            ProtocolClass::NonHttp
        );
        assert_eq!(classify_payloads(b"", b""), ProtocolClass::NonHttp);
    }

    #[test]
    fn sni_roundtrip() {
        let hello = client_hello("api.example.net", [7; 32]);
        assert_eq!(parse_sni(&hello).as_deref(), Some("api.example.net"));
        assert_eq!(parse_sni(&hello[..20]), None);
    }

    #[test]
    fn classification_is_deterministic_and_total() {
        for bytes in [&b""[..], b"\x16", b"GET", b"HTTP/1.1 200 OK\r\n"] {
            let a = classify_payloads(bytes, bytes);
            assert_eq!(a, classify_payloads(bytes, bytes));
        }
    }
}
