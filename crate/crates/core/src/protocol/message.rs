//! Typed message payloads.
//!
//! Every payload except `Hello` and `Error` starts with the 8-byte parameter
//! hash agreed in the hello exchange. Lists are a u32 count followed by items;
//! JSON sections are u32-length-prefixed.

use serde::{Deserialize, Serialize};

use super::frame::{codes, Frame, MsgType};
use crate::ckks::serialize::{ciphertext_to_bytes, read_ciphertext, Reader};
use crate::ckks::{Ciphertext, CkksContext, CkksParams, ParamsHash};
use crate::error::{Error, Result};
use crate::linalg::{read_packed, write_packed, PackedMatrix};
use crate::trainer::{EpochLog, Hyperparams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DataRole {
    Train = 0,
    Val = 1,
    Test = 2,
}

/// Encrypted features, with one-hot labels for the training role.
#[derive(Clone, Debug, PartialEq)]
pub struct UploadBatch {
    pub x: PackedMatrix,
    pub y: Option<PackedMatrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub hyperparams: Hyperparams,
    pub init_seed: u64,
    /// Continue from the cloud's last checkpoint for this key, if any.
    pub resume: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub log: EpochLog,
    pub total_epochs: usize,
    pub step: u64,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Hello {
        params: CkksParams,
    },
    /// Serialized public key, relinearization key and rotation keys.
    Keys {
        material: Vec<u8>,
    },
    /// Acknowledges a `Keys` or `Upload` message.
    Ack(MsgType),
    Upload {
        role: DataRole,
        batches: Vec<UploadBatch>,
    },
    Train(TrainRequest),
    RefreshRequest {
        id: u64,
        cts: Vec<(u32, Ciphertext)>,
    },
    RefreshResponse {
        id: u64,
        cts: Vec<(u32, Ciphertext)>,
    },
    EpochReport {
        summary: EpochSummary,
        val_logits: Vec<PackedMatrix>,
        /// Final encrypted weights, sent with the last report.
        weights: Option<PackedMatrix>,
    },
    InferRequest {
        x: Vec<PackedMatrix>,
    },
    InferResponse {
        logits: Vec<PackedMatrix>,
    },
    Error {
        code: u8,
        detail: String,
    },
}

fn proto(code: u8, detail: impl Into<String>) -> Error {
    Error::Protocol {
        code,
        detail: detail.into(),
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_json<T: Serialize>(out: &mut Vec<u8>, v: &T) {
    let j = serde_json::to_vec(v).expect("message serializes");
    put_u32(out, j.len());
    out.extend_from_slice(&j);
}

fn put_matrices(ctx: &CkksContext, out: &mut Vec<u8>, ms: &[PackedMatrix]) {
    put_u32(out, ms.len());
    for m in ms {
        write_packed(ctx, m, out);
    }
}

fn put_cts(ctx: &CkksContext, out: &mut Vec<u8>, id: u64, cts: &[(u32, Ciphertext)]) {
    out.extend_from_slice(&id.to_le_bytes());
    put_u32(out, cts.len());
    for (i, ct) in cts {
        out.extend_from_slice(&i.to_le_bytes());
        ciphertext_to_bytes(ctx, ct, out);
    }
}

/// Upper bound on list lengths, far above any legitimate message.
const MAX_ITEMS: usize = 1 << 20;

fn get_count(r: &mut Reader<'_>) -> Result<usize> {
    let n = r.u32()? as usize;
    if n > MAX_ITEMS || n > r.remaining() {
        return Err(Error::format("list length out of range"));
    }
    Ok(n)
}

fn get_json<T: for<'de> Deserialize<'de>>(r: &mut Reader<'_>) -> Result<T> {
    let n = r.u32()? as usize;
    serde_json::from_slice(r.take(n)?).map_err(|e| Error::format(e.to_string()))
}

fn get_matrices(ctx: &CkksContext, r: &mut Reader<'_>) -> Result<Vec<PackedMatrix>> {
    (0..get_count(r)?).map(|_| read_packed(ctx, r)).collect()
}

fn get_cts(ctx: &CkksContext, r: &mut Reader<'_>) -> Result<(u64, Vec<(u32, Ciphertext)>)> {
    let id = r.u64()?;
    let cts = (0..get_count(r)?)
        .map(|_| Ok((r.u32()?, read_ciphertext(ctx, r)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((id, cts))
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello { .. } => MsgType::Hello,
            Message::Keys { .. } => MsgType::Keys,
            Message::Ack(t) => *t,
            Message::Upload { .. } => MsgType::Upload,
            Message::Train(_) => MsgType::Train,
            Message::RefreshRequest { .. } => MsgType::RefreshRequest,
            Message::RefreshResponse { .. } => MsgType::RefreshResponse,
            Message::EpochReport { .. } => MsgType::EpochReport,
            Message::InferRequest { .. } => MsgType::InferRequest,
            Message::InferResponse { .. } => MsgType::InferResponse,
            Message::Error { .. } => MsgType::Error,
        }
    }

    /// Payload bytes. Messages other than `Hello` and `Error` need the session context.
    pub fn encode(&self, ctx: Option<&CkksContext>) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::Hello { params } => {
                out.extend_from_slice(&params.hash());
                out.extend_from_slice(&params.canonical_bytes());
                return out;
            }
            Message::Error { code, detail } => {
                out.push(*code);
                out.extend_from_slice(detail.as_bytes());
                return out;
            }
            _ => {}
        }
        let ctx = ctx.expect("session context for a keyed message");
        out.extend_from_slice(&ctx.hash());
        match self {
            Message::Keys { material } => out.extend_from_slice(material),
            Message::Ack(_) => {}
            Message::Upload { role, batches } => {
                out.push(*role as u8);
                put_u32(&mut out, batches.len());
                for b in batches {
                    write_packed(ctx, &b.x, &mut out);
                    match &b.y {
                        Some(y) => {
                            out.push(1);
                            write_packed(ctx, y, &mut out);
                        }
                        None => out.push(0),
                    }
                }
            }
            Message::Train(req) => put_json(&mut out, req),
            Message::RefreshRequest { id, cts } | Message::RefreshResponse { id, cts } => {
                put_cts(ctx, &mut out, *id, cts)
            }
            Message::EpochReport {
                summary,
                val_logits,
                weights,
            } => {
                put_json(&mut out, summary);
                put_matrices(ctx, &mut out, val_logits);
                put_matrices(ctx, &mut out, weights.as_slice());
            }
            Message::InferRequest { x } => put_matrices(ctx, &mut out, x),
            Message::InferResponse { logits } => put_matrices(ctx, &mut out, logits),
            Message::Hello { .. } | Message::Error { .. } => unreachable!(),
        }
        out
    }

    /// Parses a frame. Failures are `Error::Protocol` with the code to report.
    pub fn decode(frame: &Frame, ctx: Option<&CkksContext>) -> Result<Self> {
        let t = MsgType::from_u8(frame.msg_type)
            .ok_or_else(|| proto(codes::UNKNOWN_TYPE, format!("unknown message type {}", frame.msg_type)))?;
        let p = &frame.payload;
        match t {
            MsgType::Hello => {
                if p.len() < 8 {
                    return Err(proto(codes::BAD_PAYLOAD, "short hello"));
                }
                let params = CkksParams::from_canonical_bytes(&p[8..])
                    .map_err(|e| proto(codes::BAD_PAYLOAD, e.to_string()))?;
                if params.hash()[..] != p[..8] {
                    return Err(proto(codes::PARAMS_MISMATCH, "hello hash does not match its parameters"));
                }
                return Ok(Message::Hello { params });
            }
            MsgType::Error => {
                let (&code, detail) = p
                    .split_first()
                    .ok_or_else(|| proto(codes::BAD_PAYLOAD, "empty error frame"))?;
                return Ok(Message::Error {
                    code,
                    detail: String::from_utf8_lossy(detail).into_owned(),
                });
            }
            _ => {}
        }
        let ctx = ctx.ok_or_else(|| proto(codes::UNEXPECTED, "message before hello"))?;
        let hash: ParamsHash = ctx.hash();
        if p.len() < 8 {
            return Err(proto(codes::BAD_PAYLOAD, "payload shorter than the parameter hash"));
        }
        if p[..8] != hash {
            return Err(proto(codes::PARAMS_MISMATCH, "parameter hash differs from the session"));
        }
        let body = &p[8..];
        if body.is_empty() && matches!(t, MsgType::Keys | MsgType::Upload) {
            return Ok(Message::Ack(t));
        }
        let mut r = Reader::new(body);
        let parsed = (|| -> Result<Self> {
            let m = match t {
                MsgType::Keys => {
                    r.take(body.len())?;
                    Message::Keys { material: body.to_vec() }
                }
                MsgType::Upload => {
                    let role = match r.u8()? {
                        0 => DataRole::Train,
                        1 => DataRole::Val,
                        2 => DataRole::Test,
                        v => return Err(Error::format(format!("unknown data role {v}"))),
                    };
                    let batches = (0..get_count(&mut r)?)
                        .map(|_| {
                            let x = read_packed(ctx, &mut r)?;
                            let y = match r.u8()? {
                                0 => None,
                                1 => Some(read_packed(ctx, &mut r)?),
                                _ => return Err(Error::format("bad label flag")),
                            };
                            Ok(UploadBatch { x, y })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Message::Upload { role, batches }
                }
                MsgType::Train => Message::Train(get_json(&mut r)?),
                MsgType::RefreshRequest => {
                    let (id, cts) = get_cts(ctx, &mut r)?;
                    Message::RefreshRequest { id, cts }
                }
                MsgType::RefreshResponse => {
                    let (id, cts) = get_cts(ctx, &mut r)?;
                    Message::RefreshResponse { id, cts }
                }
                MsgType::EpochReport => {
                    let summary = get_json(&mut r)?;
                    let val_logits = get_matrices(ctx, &mut r)?;
                    let mut w = get_matrices(ctx, &mut r)?;
                    if w.len() > 1 {
                        return Err(Error::format("more than one weight matrix"));
                    }
                    Message::EpochReport {
                        summary,
                        val_logits,
                        weights: w.pop(),
                    }
                }
                MsgType::InferRequest => Message::InferRequest {
                    x: get_matrices(ctx, &mut r)?,
                },
                MsgType::InferResponse => Message::InferResponse {
                    logits: get_matrices(ctx, &mut r)?,
                },
                MsgType::Hello | MsgType::Error => unreachable!(),
            };
            r.finish()?;
            Ok(m)
        })();
        parsed.map_err(|e| match e {
            Error::ParamsHashMismatch => proto(codes::PARAMS_MISMATCH, "embedded object under different parameters"),
            Error::Protocol { .. } => e,
            other => proto(codes::BAD_PAYLOAD, other.to_string()),
        })
    }
}
