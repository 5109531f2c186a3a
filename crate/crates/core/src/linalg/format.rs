//! PMX1: a plan header followed by the tile ciphertexts in CKX1 form.
//!
//! ```text
//! "PMX1" | layout u8 | rows u32 | cols u32 | R u32 | C u32 | frame_cols u32 |
//! row_tiles u32 | col_tiles u32 | CKX1 ciphertext x tiles
//! ```

use super::{plan_class_replicated, plan_packing_with_width, Layout, PackedMatrix};
use crate::ckks::serialize::{ciphertext_to_bytes, read_ciphertext, Reader};
use crate::ckks::CkksContext;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PMX1";

pub fn write_packed(ctx: &CkksContext, pm: &PackedMatrix, out: &mut Vec<u8>) {
    let p = &pm.plan;
    out.extend_from_slice(MAGIC);
    out.push(pm.layout.tag());
    for v in [p.rows, p.cols, p.padded_rows, p.padded_cols, p.frame_cols, p.row_tiles, p.col_tiles] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for t in &pm.tiles {
        ciphertext_to_bytes(ctx, t, out);
    }
}

pub fn packed_to_bytes(ctx: &CkksContext, pm: &PackedMatrix) -> Vec<u8> {
    let mut out = Vec::new();
    write_packed(ctx, pm, &mut out);
    out
}

pub(crate) fn read_packed(ctx: &CkksContext, r: &mut Reader<'_>) -> Result<PackedMatrix> {
    if r.take(4)? != MAGIC {
        return Err(Error::format("bad PMX1 magic"));
    }
    let layout = Layout::from_tag(r.u8()?)?;
    let mut f = [0usize; 7];
    for v in &mut f {
        *v = r.u32()? as usize;
    }
    let [rows, cols, padded_rows, padded_cols, frame_cols, row_tiles, col_tiles] = f;
    let slots = ctx.slot_count();
    let plan = match layout {
        Layout::RowMajor => plan_packing_with_width(rows, cols, slots, frame_cols),
        Layout::ClassReplicated => plan_class_replicated(rows, cols, slots, frame_cols),
    }
    .map_err(|e| Error::format(format!("invalid PMX1 plan: {e}")))?;
    if (plan.padded_rows, plan.padded_cols, plan.row_tiles, plan.col_tiles)
        != (padded_rows, padded_cols, row_tiles, col_tiles)
    {
        return Err(Error::format("PMX1 header disagrees with its own plan"));
    }
    let count = plan.tile_count();
    let tiles = (0..count).map(|_| read_ciphertext(ctx, r)).collect::<Result<Vec<_>>>()?;
    PackedMatrix::new(plan, layout, tiles).map_err(|e| Error::format(e.to_string()))
}

pub fn packed_from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<PackedMatrix> {
    let mut r = Reader::new(bytes);
    let pm = read_packed(ctx, &mut r)?;
    r.finish()?;
    Ok(pm)
}
