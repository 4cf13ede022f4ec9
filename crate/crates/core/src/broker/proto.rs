//! Framing for the NATS text protocol subset used here.
//!
//! Both directions are CRLF-delimited control lines; `PUB` and `MSG` are followed by a
//! payload of the announced length and another CRLF. Operation names are matched
//! case-insensitively.

use bytes::{Buf, BufMut, Bytes, BytesMut};

/// Longest control line accepted before the peer is considered broken.
pub const MAX_CONTROL_LINE: usize = 4096;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("protocol error: {0}")]
pub struct ProtocolError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ProtocolError> {
    Err(ProtocolError(msg.into()))
}

/// Operations sent by the broker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerOp {
    Info(String),
    Msg {
        subject: String,
        sid: u64,
        reply: Option<String>,
        payload: Bytes,
    },
    Ping,
    Pong,
    Ok,
    Err(String),
}

/// Operations sent by a client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientOp {
    Connect(String),
    Pub {
        subject: String,
        reply: Option<String>,
        payload: Bytes,
    },
    Sub {
        subject: String,
        queue: Option<String>,
        sid: u64,
    },
    Unsub {
        sid: u64,
        max: Option<u64>,
    },
    Ping,
    Pong,
}

fn find_crlf(buf: &[u8]) -> Option<usize> {
    buf.windows(2).position(|w| w == b"\r\n")
}

/// Splits the next control line off `buf`, without its CRLF. `None` means more bytes are needed.
fn control_line(buf: &BytesMut) -> Result<Option<(String, usize)>, ProtocolError> {
    match find_crlf(buf) {
        Some(end) => {
            let line = std::str::from_utf8(&buf[..end])
                .map_err(|_| ProtocolError("control line is not UTF-8".into()))?;
            Ok(Some((line.to_owned(), end + 2)))
        }
        None if buf.len() > MAX_CONTROL_LINE => err("control line too long"),
        None => Ok(None),
    }
}

fn split_op(line: &str) -> (String, &str) {
    let trimmed = line.trim_start();
    match trimmed.find([' ', '\t']) {
        Some(i) => (trimmed[..i].to_ascii_uppercase(), trimmed[i..].trim()),
        None => (trimmed.to_ascii_uppercase(), ""),
    }
}

fn parse_num(s: &str, what: &str) -> Result<u64, ProtocolError> {
    s.parse()
        .map_err(|_| ProtocolError(format!("invalid {what} {s:?}")))
}

/// Takes `len` payload bytes plus the trailing CRLF once they are all buffered.
fn take_payload(
    buf: &mut BytesMut,
    header_len: usize,
    len: usize,
) -> Result<Option<Bytes>, ProtocolError> {
    if buf.len() < header_len + len + 2 {
        return Ok(None);
    }
    if &buf[header_len + len..header_len + len + 2] != b"\r\n" {
        return err("payload not terminated by CRLF");
    }
    buf.advance(header_len);
    let payload = buf.split_to(len).freeze();
    buf.advance(2);
    Ok(Some(payload))
}

/// Parses one broker operation from the front of `buf`, consuming it.
pub fn parse_server_op(buf: &mut BytesMut) -> Result<Option<ServerOp>, ProtocolError> {
    let Some((line, header_len)) = control_line(buf)? else {
        return Ok(None);
    };
    let (op, args) = split_op(&line);
    let parsed = match op.as_str() {
        "MSG" => {
            let parts: Vec<&str> = args.split_whitespace().collect();
            let (subject, sid, reply, len) = match parts.as_slice() {
                [s, sid, len] => (*s, *sid, None, *len),
                [s, sid, reply, len] => (*s, *sid, Some((*reply).to_owned()), *len),
                _ => return err(format!("malformed MSG: {line:?}")),
            };
            let sid = parse_num(sid, "sid")?;
            let len = parse_num(len, "payload length")? as usize;
            let Some(payload) = take_payload(buf, header_len, len)? else {
                return Ok(None);
            };
            return Ok(Some(ServerOp::Msg {
                subject: subject.to_owned(),
                sid,
                reply,
                payload,
            }));
        }
        "INFO" => ServerOp::Info(args.to_owned()),
        "PING" => ServerOp::Ping,
        "PONG" => ServerOp::Pong,
        "+OK" => ServerOp::Ok,
        "-ERR" => ServerOp::Err(args.trim_matches('\'').to_owned()),
        _ => return err(format!("unknown server operation {line:?}")),
    };
    buf.advance(header_len);
    Ok(Some(parsed))
}

/// Parses one client operation from the front of `buf`, consuming it.
///
/// Payloads longer than `max_payload` are rejected before they are buffered.
pub fn parse_client_op(
    buf: &mut BytesMut,
    max_payload: usize,
) -> Result<Option<ClientOp>, ProtocolError> {
    let Some((line, header_len)) = control_line(buf)? else {
        return Ok(None);
    };
    let (op, args) = split_op(&line);
    let parsed = match op.as_str() {
        "PUB" => {
            let parts: Vec<&str> = args.split_whitespace().collect();
            let (subject, reply, len) = match parts.as_slice() {
                [s, len] => (*s, None, *len),
                [s, reply, len] => (*s, Some((*reply).to_owned()), *len),
                _ => return err(format!("malformed PUB: {line:?}")),
            };
            let len = parse_num(len, "payload length")? as usize;
            if len > max_payload {
                return err("Maximum Payload Violation");
            }
            let Some(payload) = take_payload(buf, header_len, len)? else {
                return Ok(None);
            };
            return Ok(Some(ClientOp::Pub {
                subject: subject.to_owned(),
                reply,
                payload,
            }));
        }
        "SUB" => {
            let parts: Vec<&str> = args.split_whitespace().collect();
            match parts.as_slice() {
                [s, sid] => ClientOp::Sub {
                    subject: (*s).to_owned(),
                    queue: None,
                    sid: parse_num(sid, "sid")?,
                },
                [s, q, sid] => ClientOp::Sub {
                    subject: (*s).to_owned(),
                    queue: Some((*q).to_owned()),
                    sid: parse_num(sid, "sid")?,
                },
                _ => return err(format!("malformed SUB: {line:?}")),
            }
        }
        "UNSUB" => {
            let parts: Vec<&str> = args.split_whitespace().collect();
            match parts.as_slice() {
                [sid] => ClientOp::Unsub {
                    sid: parse_num(sid, "sid")?,
                    max: None,
                },
                [sid, max] => ClientOp::Unsub {
                    sid: parse_num(sid, "sid")?,
                    max: Some(parse_num(max, "max messages")?),
                },
                _ => return err(format!("malformed UNSUB: {line:?}")),
            }
        }
        "CONNECT" => ClientOp::Connect(args.to_owned()),
        "PING" => ClientOp::Ping,
        "PONG" => ClientOp::Pong,
        _ => return err(format!("Unknown Protocol Operation {line:?}")),
    };
    buf.advance(header_len);
    Ok(Some(parsed))
}

pub fn write_pub(out: &mut BytesMut, subject: &str, payload: &[u8]) {
    out.reserve(subject.len() + payload.len() + 32);
    out.put_slice(b"PUB ");
    out.put_slice(subject.as_bytes());
    out.put_slice(format!(" {}\r\n", payload.len()).as_bytes());
    out.put_slice(payload);
    out.put_slice(b"\r\n");
}

pub fn write_msg(out: &mut BytesMut, subject: &str, sid: u64, payload: &[u8]) {
    out.reserve(subject.len() + payload.len() + 48);
    out.put_slice(b"MSG ");
    out.put_slice(subject.as_bytes());
    out.put_slice(format!(" {sid} {}\r\n", payload.len()).as_bytes());
    out.put_slice(payload);
    out.put_slice(b"\r\n");
}

pub fn sub_frame(subject: &str, sid: u64) -> Bytes {
    Bytes::from(format!("SUB {subject} {sid}\r\n"))
}

pub fn unsub_frame(sid: u64) -> Bytes {
    Bytes::from(format!("UNSUB {sid}\r\n"))
}

pub const PING: &[u8] = b"PING\r\n";
pub const PONG: &[u8] = b"PONG\r\n";
