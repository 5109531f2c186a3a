use ndarray::{s, Array2};
use rand::Rng;

use super::oracle::{batch_ranges, one_hot};
use crate::ckks::{CkksContext, PublicKey};
use crate::error::{Error, Result};
use crate::linalg::{pack, plan_packing_with_width, Layout, PackedMatrix};

/// Features and one-hot labels of one mini-batch, both row-major on the same frame.
#[derive(Clone, Debug, PartialEq)]
pub struct EncryptedBatch {
    pub x: PackedMatrix,
    pub y: PackedMatrix,
}

fn pack_rows<R: Rng>(
    ctx: &CkksContext,
    m: &Array2<f64>,
    width: usize,
    pk: &PublicKey,
    rng: &mut R,
) -> Result<PackedMatrix> {
    let plan = plan_packing_with_width(m.nrows(), m.ncols(), ctx.slot_count(), width)?;
    pack(ctx, m, &plan, Layout::RowMajor, pk, ctx.max_level(), rng)
}

/// Splits rows into consecutive mini-batches and encrypts each at the top level.
#[allow(clippy::too_many_arguments)]
pub fn pack_batches<R: Rng>(
    ctx: &CkksContext,
    x: &Array2<f64>,
    labels: &[usize],
    classes: usize,
    batch_size: usize,
    width: usize,
    pk: &PublicKey,
    rng: &mut R,
) -> Result<Vec<EncryptedBatch>> {
    if x.nrows() != labels.len() || x.nrows() == 0 || batch_size == 0 {
        return Err(Error::InvalidParameter(format!(
            "{} feature rows, {} labels, batch {batch_size}",
            x.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidParameter(format!("label {bad} out of range for {classes} classes")));
    }
    let y = one_hot(labels, classes);
    batch_ranges(x.nrows(), batch_size)
        .into_iter()
        .map(|r| {
            Ok(EncryptedBatch {
                x: pack_rows(ctx, &x.slice(s![r.clone(), ..]).to_owned(), width, pk, rng)?,
                y: pack_rows(ctx, &y.slice(s![r, ..]).to_owned(), width, pk, rng)?,
            })
        })
        .collect()
}

/// Encrypts features in chunks of one ciphertext each, for inference.
pub fn pack_features<R: Rng>(
    ctx: &CkksContext,
    x: &Array2<f64>,
    width: usize,
    pk: &PublicKey,
    rng: &mut R,
) -> Result<Vec<PackedMatrix>> {
    let chunk = (ctx.slot_count() / width).max(1);
    batch_ranges(x.nrows(), chunk)
        .into_iter()
        .map(|r| pack_rows(ctx, &x.slice(s![r, ..]).to_owned(), width, pk, rng))
        .collect()
}
