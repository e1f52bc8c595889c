//! Minimal HTTP/1.x message splitting for plaintext HTTP streams.
//!
//! Only what the inspector needs: request/status lines, ordered headers and
//! bodies framed by Content-Length, chunked coding or connection close.

/// Request methods accepted as the start of an HTTP/1.x request line.
const METHODS: &[&str] = &[
    "GET", "POST", "PUT", "DELETE", "HEAD", "OPTIONS", "PATCH", "CONNECT", "TRACE",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpMessage {
    /// Request line or status line, without CRLF.
    pub start_line: String,
    pub headers: Vec<(String, String)>,
    /// Body after transfer decoding (chunks joined).
    pub body: Vec<u8>,
    /// Offset of the message within the stream.
    pub offset: usize,
    /// True when the body was chunk-coded on the wire.
    pub chunked: bool,
}

impl HttpMessage {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// True when `line` is `METHOD SP target SP HTTP/1.0|1.1`.
pub fn is_request_line(line: &[u8]) -> bool {
    let Ok(line) = std::str::from_utf8(line) else {
        return false;
    };
    let mut parts = line.split(' ');
    let (Some(method), Some(target), Some(version), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return false;
    };
    METHODS.contains(&method)
        && !target.is_empty()
        && !target.bytes().any(|b| b.is_ascii_control())
        && (version == "HTTP/1.1" || version == "HTTP/1.0")
}

pub fn is_status_line(line: &[u8]) -> bool {
    let Ok(line) = std::str::from_utf8(line) else {
        return false;
    };
    let mut parts = line.splitn(3, ' ');
    matches!(
        (parts.next(), parts.next()),
        (Some("HTTP/1.1" | "HTTP/1.0"), Some(code)) if code.len() == 3 && code.bytes().all(|b| b.is_ascii_digit())
    )
}

/// First line of `stream` (without the line terminator), if one exists
/// within the first 8 KiB.
pub fn first_line(stream: &[u8]) -> Option<&[u8]> {
    let window = &stream[..stream.len().min(8192)];
    let end = window.iter().position(|&b| b == b'\n')?;
    let line = &window[..end];
    Some(line.strip_suffix(b"\r").unwrap_or(line))
}

pub fn starts_with_request(stream: &[u8]) -> bool {
    first_line(stream).is_some_and(is_request_line)
}

/// Splits a plaintext HTTP stream into messages. Parsing stops at the first
/// byte that does not start a well-formed message.
pub fn parse_messages(stream: &[u8], requests: bool) -> Vec<HttpMessage> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < stream.len() {
        let rest = &stream[pos..];
        let Some(line) = first_line(rest) else { break };
        let ok = if requests {
            is_request_line(line)
        } else {
            is_status_line(line)
        };
        if !ok {
            break;
        }
        let Some(head_end) = find(rest, b"\r\n\r\n").map(|i| i + 4).or_else(|| find(rest, b"\n\n").map(|i| i + 2)) else {
            break;
        };
        let head = String::from_utf8_lossy(&rest[..head_end]);
        let mut lines = head.lines();
        let start_line = lines.next().unwrap_or_default().to_string();
        let headers: Vec<(String, String)> = lines
            .filter_map(|l| {
                let (n, v) = l.split_once(':')?;
                Some((n.trim().to_string(), v.trim().to_string()))
            })
            .collect();
        let mut msg = HttpMessage {
            start_line,
            headers,
            body: Vec::new(),
            offset: pos,
            chunked: false,
        };
        let body_start = head_end;
        let consumed;
        if msg
            .header("transfer-encoding")
            .is_some_and(|v| v.to_ascii_lowercase().contains("chunked"))
        {
            let (body, used) = dechunk(&rest[body_start..]);
            msg.body = body;
            msg.chunked = true;
            consumed = body_start + used;
        } else if let Some(len) = msg.header("content-length").and_then(|v| v.parse::<usize>().ok()) {
            let end = (body_start + len).min(rest.len());
            msg.body = rest[body_start..end].to_vec();
            consumed = end;
        } else if requests {
            consumed = body_start;
        } else {
            msg.body = rest[body_start..].to_vec();
            consumed = rest.len();
        }
        out.push(msg);
        pos += consumed.max(1);
    }
    out
}

fn dechunk(data: &[u8]) -> (Vec<u8>, usize) {
    let mut body = Vec::new();
    let mut pos = 0;
    loop {
        let Some(nl) = data[pos..].iter().position(|&b| b == b'\n') else {
            return (body, data.len());
        };
        let size_line = String::from_utf8_lossy(&data[pos..pos + nl]);
        let size_text = size_line.trim().split(';').next().unwrap_or("");
        let Ok(size) = usize::from_str_radix(size_text, 16) else {
            return (body, data.len());
        };
        pos += nl + 1;
        if size == 0 {
            // trailer section ends with an empty line
            let rest = &data[pos..];
            let used = if rest.starts_with(b"\r\n") {
                2
            } else {
                find(rest, b"\r\n\r\n").map_or(rest.len(), |i| i + 4)
            };
            return (body, pos + used);
        }
        let end = (pos + size).min(data.len());
        body.extend_from_slice(&data[pos..end]);
        pos = end;
        if data[pos..].starts_with(b"\r\n") {
            pos += 2;
        } else if data[pos..].starts_with(b"\n") {
            pos += 1;
        }
        if pos >= data.len() {
            return (body, data.len());
        }
    }
}

pub(crate) fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    if needle.is_empty() || hay.len() < needle.len() {
        return None;
    }
    hay.windows(needle.len()).position(|w| w == needle)
}
