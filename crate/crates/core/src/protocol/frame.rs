//! `MBT1` frames: `"MBT1" | version u8 | type u8 | payload length u64 | payload | crc32(payload)`.

use std::io::{ErrorKind, Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MBT1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
/// Default payload cap; key provisioning is the largest message.
pub const DEFAULT_MAX_FRAME: u64 = 2 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    Keys = 2,
    Upload = 3,
    Train = 4,
    RefreshRequest = 5,
    RefreshResponse = 6,
    EpochReport = 7,
    InferRequest = 8,
    InferResponse = 9,
    Error = 15,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MsgType::Hello,
            2 => MsgType::Keys,
            3 => MsgType::Upload,
            4 => MsgType::Train,
            5 => MsgType::RefreshRequest,
            6 => MsgType::RefreshResponse,
            7 => MsgType::EpochReport,
            8 => MsgType::InferRequest,
            9 => MsgType::InferResponse,
            15 => MsgType::Error,
            _ => return None,
        })
    }
}

/// Codes carried by error frames.
pub mod codes {
    pub const BAD_FRAME: u8 = 1;
    pub const UNKNOWN_TYPE: u8 = 2;
    pub const PARAMS_MISMATCH: u8 = 3;
    pub const UNEXPECTED: u8 = 4;
    pub const OVERSIZED: u8 = 5;
    pub const BAD_PAYLOAD: u8 = 6;
    pub const TRAINING_FAILED: u8 = 7;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

/// Outcome of reading one frame.
#[derive(Debug)]
pub enum Incoming {
    Frame(Frame),
    /// Checksum mismatch; the stream is still aligned on the next frame.
    Corrupt(String),
    /// Orderly end of stream at a frame boundary.
    Closed,
}

pub fn encode_frame(msg_type: u8, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(msg_type);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out
}

pub fn write_frame<W: Write>(w: &mut W, msg_type: u8, payload: &[u8]) -> Result<()> {
    let mut head = Vec::with_capacity(HEADER_LEN);
    head.extend_from_slice(MAGIC);
    head.push(VERSION);
    head.push(msg_type);
    head.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    w.write_all(&head)?;
    w.write_all(payload)?;
    w.write_all(&crc32fast::hash(payload).to_le_bytes())?;
    w.flush()?;
    Ok(())
}

fn fatal(code: u8, detail: impl Into<String>) -> Error {
    Error::Protocol {
        code,
        detail: detail.into(),
    }
}

/// Reads one frame. Errors are fatal for the stream: I/O failures, truncation,
/// bad magic or version, and payloads above `max_payload` (code 5).
pub fn read_frame<R: Read>(r: &mut R, max_payload: u64) -> Result<Incoming> {
    let mut head = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut head[got..]) {
            Ok(0) if got == 0 => return Ok(Incoming::Closed),
            Ok(0) => return Err(fatal(codes::BAD_FRAME, "stream ended inside a frame header")),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if &head[..4] != MAGIC {
        return Err(fatal(codes::BAD_FRAME, "bad frame magic"));
    }
    if head[4] != VERSION {
        return Err(fatal(codes::BAD_FRAME, format!("unsupported frame version {}", head[4])));
    }
    let len = u64::from_le_bytes(head[6..14].try_into().unwrap());
    if len > max_payload {
        return Err(fatal(codes::OVERSIZED, format!("payload of {len} bytes exceeds the {max_payload} byte cap")));
    }
    let mut payload = vec![0u8; len as usize];
    let mut crc = [0u8; 4];
    let body = r.read_exact(&mut payload).and_then(|_| r.read_exact(&mut crc));
    if let Err(e) = body {
        return Err(if e.kind() == ErrorKind::UnexpectedEof {
            fatal(codes::BAD_FRAME, "stream ended inside a frame")
        } else {
            e.into()
        });
    }
    if u32::from_le_bytes(crc) != crc32fast::hash(&payload) {
        return Ok(Incoming::Corrupt(format!("checksum mismatch on a type {} frame", head[5])));
    }
    Ok(Incoming::Frame(Frame {
        msg_type: head[5],
        payload,
    }))
}
