//! `MBTC` checkpoints: a JSON header, then `W`, `V`, `W_prev` as PMX1 blocks,
//! then `lambda` (f64 bits) and the step counter (u64), little-endian.

use serde::{Deserialize, Serialize};

use super::{EpochLog, Hyperparams, ModelState};
use crate::ckks::serialize::Reader;
use crate::ckks::CkksContext;
use crate::error::{Error, Result};
use crate::linalg::{read_packed, write_packed};

const MAGIC: &[u8; 4] = b"MBTC";
const VERSION: u8 = 1;

/// Everything needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub hyperparams: Hyperparams,
    pub log: Vec<EpochLog>,
    pub state: ModelState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    hyperparams: Hyperparams,
    log: Vec<EpochLog>,
}

pub fn checkpoint_to_bytes(ctx: &CkksContext, cp: &Checkpoint) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        hyperparams: cp.hyperparams.clone(),
        log: cp.log.clone(),
    })
    .expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for pm in [&cp.state.w, &cp.state.v, &cp.state.w_prev] {
        write_packed(ctx, pm, &mut out);
    }
    out.extend_from_slice(&cp.state.lambda.to_bits().to_le_bytes());
    out.extend_from_slice(&cp.state.step.to_le_bytes());
    out
}

pub fn checkpoint_from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::format("not a checkpoint"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::format(format!("checkpoint header: {e}")))?;
    header.hyperparams.validate()?;
    let w = read_packed(ctx, &mut r)?;
    let v = read_packed(ctx, &mut r)?;
    let w_prev = read_packed(ctx, &mut r)?;
    if v.plan() != w.plan() || w_prev.plan() != w.plan() || v.layout() != w.layout() || w_prev.layout() != w.layout() {
        return Err(Error::format("checkpoint weights disagree on layout"));
    }
    let lambda = f64::from_bits(u64::from_le_bytes(r.take(8)?.try_into().unwrap()));
    let step = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    r.finish()?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::format("invalid momentum state"));
    }
    Ok(Checkpoint {
        hyperparams: header.hyperparams,
        log: header.log,
        state: ModelState {
            w,
            v,
            w_prev,
            lambda,
            step,
        },
    })
}
