//! Matrices packed into CKKS slots and the encrypted operations on them.
//!
//! Every ciphertext holds a frame of `slots / W` rows of width `W`; matrix
//! element `(i, j)` of a tile sits at slot `i * W + j`. Two layouts exist:
//!
//! * [`Layout::RowMajor`]: the matrix itself, split into row tiles when it has
//!   more rows than a frame, or into column tiles when a row exceeds `slots`.
//! * [`Layout::ClassReplicated`]: one ciphertext per column `j`, holding that
//!   column as a row vector copied into every frame row. Weight matrices use
//!   this layout, which makes both `X * W` and `X^T * E` cheap.

mod format;
mod ops;

use ndarray::Array2;
use rand::Rng;

use crate::ckks::{decrypt_values, encrypt_values, Ciphertext, CkksContext, PublicKey, SecretKey};
use crate::error::{Error, Result};

pub(crate) use format::read_packed;
pub use format::{packed_from_bytes, packed_to_bytes, write_packed};
pub use ops::{mask_slots, MaskKind, MatrixOps};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    RowMajor,
    ClassReplicated,
}

impl Layout {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Layout::RowMajor => 0,
            Layout::ClassReplicated => 1,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Layout::RowMajor),
            1 => Ok(Layout::ClassReplicated),
            _ => Err(Error::format(format!("unknown layout {t}"))),
        }
    }
}

/// Geometry of a packed matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackingPlan {
    pub slot_count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Rows per tile (power of two).
    pub padded_rows: usize,
    /// Padded row length (power of two); for class-replicated plans, the padded column length.
    pub padded_cols: usize,
    /// Row stride inside each ciphertext.
    pub frame_cols: usize,
    pub row_tiles: usize,
    pub col_tiles: usize,
    /// Left-rotation steps in `[0, slot_count)` that operations on this plan may request.
    pub rotation_steps: Vec<usize>,
}

fn declared_steps(slots: usize, width: usize) -> Vec<usize> {
    let mut steps = Vec::new();
    let mut k = 1;
    while k < slots {
        // within a row, or whole-row moves
        if k < width || k % width == 0 {
            steps.push(k);
            steps.push(slots - k);
        }
        k <<= 1;
    }
    steps.sort_unstable();
    steps.dedup();
    steps
}

/// Smallest power-of-two padding for a row-major matrix.
pub fn plan_packing(rows: usize, cols: usize, slot_count: usize) -> Result<PackingPlan> {
    let width = cols.max(1).next_power_of_two().min(slot_count);
    plan_packing_with_width(rows, cols, slot_count, width)
}

/// Row-major plan with an explicit frame width `W >= next_pow2(cols)`.
pub fn plan_packing_with_width(rows: usize, cols: usize, slot_count: usize, width: usize) -> Result<PackingPlan> {
    if rows == 0 || cols == 0 {
        return Err(Error::Layout("matrix must have at least one row and column".into()));
    }
    if !slot_count.is_power_of_two() || !width.is_power_of_two() || width > slot_count {
        return Err(Error::Layout(format!("frame width {width} invalid for {slot_count} slots")));
    }
    if cols > slot_count {
        // one row per ciphertext, split across column tiles
        return Ok(PackingPlan {
            slot_count,
            rows,
            cols,
            padded_rows: 1,
            padded_cols: slot_count,
            frame_cols: slot_count,
            row_tiles: rows,
            col_tiles: cols.div_ceil(slot_count),
            rotation_steps: declared_steps(slot_count, slot_count),
        });
    }
    let padded_cols = cols.next_power_of_two();
    if width < padded_cols {
        return Err(Error::Layout(format!("frame width {width} narrower than {cols} columns")));
    }
    let frame_rows = slot_count / width;
    let padded_rows = rows.next_power_of_two().min(frame_rows);
    Ok(PackingPlan {
        slot_count,
        rows,
        cols,
        padded_rows,
        padded_cols,
        frame_cols: width,
        row_tiles: rows.div_ceil(padded_rows),
        col_tiles: 1,
        rotation_steps: declared_steps(slot_count, width),
    })
}

/// Plan for a `rows x cols` matrix stored one column per ciphertext, replicated across frame rows.
pub fn plan_class_replicated(rows: usize, cols: usize, slot_count: usize, width: usize) -> Result<PackingPlan> {
    if rows == 0 || cols == 0 {
        return Err(Error::Layout("matrix must have at least one row and column".into()));
    }
    if !width.is_power_of_two() || width > slot_count || rows > width {
        return Err(Error::Layout(format!("{rows} entries do not fit frame width {width}")));
    }
    Ok(PackingPlan {
        slot_count,
        rows,
        cols,
        padded_rows: slot_count / width,
        padded_cols: rows.next_power_of_two(),
        frame_cols: width,
        row_tiles: 1,
        col_tiles: cols,
        rotation_steps: declared_steps(slot_count, width),
    })
}

impl PackingPlan {
    pub fn frame_rows(&self) -> usize {
        self.slot_count / self.frame_cols
    }

    pub fn tile_count(&self) -> usize {
        self.row_tiles * self.col_tiles
    }

    pub fn is_column_split(&self) -> bool {
        self.cols > self.slot_count
    }

    /// Logical rows held by row tile `t`.
    pub fn tile_rows(&self, t: usize) -> usize {
        self.padded_rows.min(self.rows.saturating_sub(t * self.padded_rows))
    }

    pub fn allows_rotation(&self, step: usize) -> bool {
        self.rotation_steps.binary_search(&step).is_ok()
    }

    /// Slot vectors for each tile of a row-major matrix, padding zeroed.
    pub fn row_major_slots(&self, m: &Array2<f64>) -> Result<Vec<Vec<f64>>> {
        self.check_dims(m)?;
        let mut tiles = Vec::with_capacity(self.tile_count());
        for rt in 0..self.row_tiles {
            for ct in 0..self.col_tiles {
                let mut v = vec![0.0; self.slot_count];
                for r in 0..self.padded_rows {
                    let i = rt * self.padded_rows + r;
                    if i >= self.rows {
                        break;
                    }
                    for c in 0..self.frame_cols {
                        let j = ct * self.frame_cols + c;
                        if j >= self.cols {
                            break;
                        }
                        v[r * self.frame_cols + c] = m[[i, j]];
                    }
                }
                tiles.push(v);
            }
        }
        Ok(tiles)
    }

    /// Slot vectors for a class-replicated matrix: tile `j` repeats column `j` in every frame row.
    pub fn class_replicated_slots(&self, m: &Array2<f64>) -> Result<Vec<Vec<f64>>> {
        self.check_dims(m)?;
        Ok((0..self.cols)
            .map(|j| {
                let mut v = vec![0.0; self.slot_count];
                for r in 0..self.frame_rows() {
                    for i in 0..self.rows {
                        v[r * self.frame_cols + i] = m[[i, j]];
                    }
                }
                v
            })
            .collect())
    }

    fn check_dims(&self, m: &Array2<f64>) -> Result<()> {
        if m.nrows() != self.rows || m.ncols() != self.cols {
            return Err(Error::Layout(format!(
                "matrix is {}x{}, plan expects {}x{}",
                m.nrows(),
                m.ncols(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }

    pub(crate) fn slots_for(&self, layout: Layout, m: &Array2<f64>) -> Result<Vec<Vec<f64>>> {
        match layout {
            Layout::RowMajor => self.row_major_slots(m),
            Layout::ClassReplicated => self.class_replicated_slots(m),
        }
    }

    /// Inverse of [`slots_for`](Self::slots_for); padding is ignored.
    pub fn matrix_from_slots(&self, layout: Layout, tiles: &[Vec<f64>]) -> Result<Array2<f64>> {
        if tiles.len() != self.tile_count() {
            return Err(Error::Layout("tile count does not match plan".into()));
        }
        let mut m = Array2::zeros((self.rows, self.cols));
        match layout {
            Layout::RowMajor => {
                for rt in 0..self.row_tiles {
                    for ct in 0..self.col_tiles {
                        let v = &tiles[rt * self.col_tiles + ct];
                        for r in 0..self.padded_rows {
                            let i = rt * self.padded_rows + r;
                            if i >= self.rows {
                                break;
                            }
                            for c in 0..self.frame_cols {
                                let j = ct * self.frame_cols + c;
                                if j >= self.cols {
                                    break;
                                }
                                m[[i, j]] = v[r * self.frame_cols + c];
                            }
                        }
                    }
                }
            }
            Layout::ClassReplicated => {
                for (j, v) in tiles.iter().enumerate() {
                    for i in 0..self.rows {
                        m[[i, j]] = v[i];
                    }
                }
            }
        }
        Ok(m)
    }
}

/// An encrypted matrix: plan, layout and one ciphertext per tile.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedMatrix {
    pub(crate) plan: PackingPlan,
    pub(crate) layout: Layout,
    pub(crate) tiles: Vec<Ciphertext>,
}

impl PackedMatrix {
    pub fn new(plan: PackingPlan, layout: Layout, tiles: Vec<Ciphertext>) -> Result<Self> {
        let expected = match layout {
            Layout::RowMajor => plan.tile_count(),
            Layout::ClassReplicated => plan.cols,
        };
        if tiles.len() != expected || tiles.is_empty() {
            return Err(Error::Layout(format!("{} tiles, plan needs {expected}", tiles.len())));
        }
        let (level, scale) = (tiles[0].level(), tiles[0].scale());
        if tiles.iter().any(|t| t.level() != level || t.scale() != scale) {
            return Err(Error::Layout("tiles disagree on level or scale".into()));
        }
        Ok(Self { plan, layout, tiles })
    }

    pub fn plan(&self) -> &PackingPlan {
        &self.plan
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn tiles(&self) -> &[Ciphertext] {
        &self.tiles
    }

    pub fn rows(&self) -> usize {
        self.plan.rows
    }

    pub fn cols(&self) -> usize {
        self.plan.cols
    }

    pub fn level(&self) -> usize {
        self.tiles[0].level()
    }

    pub fn scale(&self) -> f64 {
        self.tiles[0].scale()
    }
}

/// Encrypts a matrix under `plan` at the canonical scale of `level`.
pub fn pack<R: Rng>(
    ctx: &CkksContext,
    m: &Array2<f64>,
    plan: &PackingPlan,
    layout: Layout,
    pk: &PublicKey,
    level: usize,
    rng: &mut R,
) -> Result<PackedMatrix> {
    if plan.slot_count != ctx.slot_count() {
        return Err(Error::Layout("plan slot count differs from the parameters".into()));
    }
    if layout == Layout::ClassReplicated && plan.col_tiles != plan.cols {
        return Err(Error::Layout("plan is not class-replicated".into()));
    }
    let tiles = plan
        .slots_for(layout, m)?
        .iter()
        .map(|v| encrypt_values(ctx, v, level, pk, rng))
        .collect::<Result<Vec<_>>>()?;
    PackedMatrix::new(plan.clone(), layout, tiles)
}

/// Decrypts every tile to raw slot vectors.
pub fn decrypt_tiles(ctx: &CkksContext, pm: &PackedMatrix, sk: &SecretKey) -> Result<Vec<Vec<f64>>> {
    pm.tiles.iter().map(|t| decrypt_values(ctx, t, sk)).collect()
}

pub fn unpack(ctx: &CkksContext, pm: &PackedMatrix, sk: &SecretKey) -> Result<Array2<f64>> {
    let tiles = decrypt_tiles(ctx, pm, sk)?;
    pm.plan.matrix_from_slots(pm.layout, &tiles)
}
