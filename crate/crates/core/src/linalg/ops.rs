use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ndarray::Array2;

use super::{plan_class_replicated, plan_packing_with_width, Layout, PackedMatrix, PackingPlan};
use crate::ckks::{Ciphertext, CkksContext, Evaluator, Plaintext};
use crate::error::{Error, Result};

/// Selector for a cached 0/value mask over a frame of width `W`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskKind {
    /// Column `k` of every frame row.
    Column(usize),
    /// Every slot of frame row `k`.
    Row(usize),
    /// Columns `0..n` of every frame row.
    Columns(usize),
    /// Columns `0..cols` of frame rows `0..rows`.
    Block { rows: usize, cols: usize },
}

/// Slot vector of a mask: `value` where `kind` selects, zero elsewhere.
pub fn mask_slots(slots: usize, width: usize, kind: MaskKind, value: f64) -> Vec<f64> {
    (0..slots)
        .map(|s| {
            let (r, c) = (s / width, s % width);
            let hit = match kind {
                MaskKind::Column(k) => c == k,
                MaskKind::Row(k) => r == k,
                MaskKind::Columns(n) => c < n,
                MaskKind::Block { rows, cols } => r < rows && c < cols,
            };
            if hit {
                value
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct MaskKey {
    width: usize,
    kind: MaskKind,
    value: u64,
    level: usize,
}

/// Encrypted linear algebra over [`PackedMatrix`] values.
///
/// Level budgets: `matmul`, `matmul_plain` and `matmul_at_b` consume 2 levels,
/// `row_reduce_sum` and `scalar_mult` consume 1, `add`/`sub` consume none.
/// Clones share the mask cache.
#[derive(Clone)]
pub struct MatrixOps {
    eval: Evaluator,
    masks: Arc<Mutex<HashMap<MaskKey, Arc<Plaintext>>>>,
}

impl MatrixOps {
    pub fn new(eval: Evaluator) -> Self {
        Self {
            eval,
            masks: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.eval
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        self.eval.context()
    }

    /// Mask plaintext at the canonical scale of `level`.
    pub fn mask(&self, width: usize, kind: MaskKind, value: f64, level: usize) -> Result<Arc<Plaintext>> {
        let key = MaskKey {
            width,
            kind,
            value: value.to_bits(),
            level,
        };
        if let Some(p) = self.masks.lock().expect("mask cache poisoned").get(&key) {
            return Ok(p.clone());
        }
        let v = mask_slots(self.context().slot_count(), width, kind, value);
        let pt = Arc::new(self.context().encode_at(&v, level)?);
        self.masks.lock().expect("mask cache poisoned").insert(key, pt.clone());
        Ok(pt)
    }

    /// Multiplies every tile by a mask and rescales: one level.
    pub fn apply_mask(&self, ct: &Ciphertext, width: usize, kind: MaskKind, value: f64) -> Result<Ciphertext> {
        let m = self.mask(width, kind, value, ct.level())?;
        self.eval.mult_plain_rescale(ct, &m)
    }

    /// Rotates left by `offset` (right when negative) using only power-of-two steps declared by `plan`.
    pub fn shift(&self, ct: &Ciphertext, plan: &PackingPlan, offset: i64) -> Result<Ciphertext> {
        let slots = plan.slot_count;
        let mut out = ct.clone();
        let mut rest = offset.unsigned_abs() as usize;
        let mut bit = 1usize;
        while rest != 0 {
            if rest & 1 == 1 {
                let step = if offset > 0 { bit % slots } else { (slots - bit % slots) % slots };
                if step != 0 {
                    if !plan.allows_rotation(step) {
                        return Err(Error::Layout(format!("rotation {step} not declared by the plan")));
                    }
                    out = self.eval.rotate(&out, step as i64)?;
                }
            }
            rest >>= 1;
            bit <<= 1;
        }
        Ok(out)
    }

    /// `x + rot(x, s) + rot(x, 2s) + ...` doubling while the stride stays below `span`.
    fn fold(&self, ct: &Ciphertext, plan: &PackingPlan, stride: i64, span: usize) -> Result<Ciphertext> {
        let mut acc = ct.clone();
        let mut s = 1usize;
        while s < span {
            let r = self.shift(&acc, plan, stride * s as i64)?;
            acc = self.eval.add(&acc, &r)?;
            s <<= 1;
        }
        Ok(acc)
    }

    fn aligned(&self, a: &PackedMatrix, b: &PackedMatrix) -> Result<(PackedMatrix, PackedMatrix)> {
        let level = a.level().min(b.level());
        Ok((self.drop_to_level(a, level)?, self.drop_to_level(b, level)?))
    }

    fn check_context(&self, pm: &PackedMatrix) -> Result<()> {
        if pm.plan.slot_count != self.context().slot_count() {
            return Err(Error::Layout("matrix packed for a different slot count".into()));
        }
        if pm.plan.is_column_split() {
            return Err(Error::Layout("column-split matrices only support element-wise ops".into()));
        }
        Ok(())
    }

    /// `A * B` for row-major `A`. `B` may be class-replicated (one product per column)
    /// or a single-tile row-major matrix on the same frame.
    pub fn matmul(&self, a: &PackedMatrix, b: &PackedMatrix) -> Result<PackedMatrix> {
        self.check_context(a)?;
        self.check_context(b)?;
        if a.layout != Layout::RowMajor {
            return Err(Error::Layout("left operand must be row-major".into()));
        }
        if a.cols() != b.rows() {
            return Err(Error::Layout(format!(
                "inner dimensions differ: {}x{} times {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if a.plan.frame_cols != b.plan.frame_cols {
            return Err(Error::Layout("operands use different frame widths".into()));
        }
        let (a, b) = self.aligned(a, b)?;
        match b.layout {
            Layout::ClassReplicated => self.matmul_replicated(&a, |t, j| self.eval.mult_rescale(t, &b.tiles[j]), b.cols()),
            Layout::RowMajor => self.matmul_row_major(&a, &b),
        }
    }

    /// `A * M` with `M` a public plaintext matrix.
    pub fn matmul_plain(&self, a: &PackedMatrix, m: &Array2<f64>) -> Result<PackedMatrix> {
        self.check_context(a)?;
        if a.layout != Layout::RowMajor || a.cols() != m.nrows() {
            return Err(Error::Layout("plaintext factor does not match the left operand".into()));
        }
        let plan = plan_class_replicated(m.nrows(), m.ncols(), a.plan.slot_count, a.plan.frame_cols)?;
        let pts = plan
            .class_replicated_slots(m)?
            .iter()
            .map(|v| self.context().encode_at(v, a.level()))
            .collect::<Result<Vec<_>>>()?;
        self.matmul_replicated(a, |t, j| self.eval.mult_plain_rescale(t, &pts[j]), m.ncols())
    }

    fn matmul_replicated(
        &self,
        a: &PackedMatrix,
        product: impl Fn(&Ciphertext, usize) -> Result<Ciphertext>,
        out_cols: usize,
    ) -> Result<PackedMatrix> {
        let width = a.plan.frame_cols;
        let plan = plan_packing_with_width(a.rows(), out_cols, a.plan.slot_count, width)?;
        let tiles = a
            .tiles
            .iter()
            .map(|t| {
                let mut cols = (0..out_cols)
                    .map(|j| {
                        let p = product(t, j)?;
                        let s = self.fold(&p, &a.plan, 1, a.plan.padded_cols)?;
                        self.apply_mask(&s, width, MaskKind::Column(0), 1.0)
                    })
                    .collect::<Result<Vec<_>>>()?;
                // sum_j rot(cols[j], -j), pairing neighbours so each round shifts by one power of two
                let mut stride = 1i64;
                while cols.len() > 1 {
                    cols = cols
                        .chunks(2)
                        .map(|pair| match pair {
                            [lo, hi] => self.eval.add(lo, &self.shift(hi, &a.plan, -stride)?),
                            [lo] => Ok(lo.clone()),
                            _ => unreachable!(),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    stride *= 2;
                }
                Ok(cols.pop().expect("at least one output column"))
            })
            .collect::<Result<Vec<_>>>()?;
        PackedMatrix::new(plan, Layout::RowMajor, tiles)
    }

    fn matmul_row_major(&self, a: &PackedMatrix, b: &PackedMatrix) -> Result<PackedMatrix> {
        if b.plan.tile_count() != 1 {
            return Err(Error::Layout("row-major right operand must fit one tile".into()));
        }
        let width = a.plan.frame_cols;
        let plan = plan_packing_with_width(a.rows(), b.cols(), a.plan.slot_count, width)?;
        let out_cols = plan.padded_cols;
        // rows of B replicated down the frame, shared by every row tile of A
        let row_reps = (0..b.rows())
            .map(|k| {
                let r = self.apply_mask(&b.tiles[0], width, MaskKind::Row(k), 1.0)?;
                let r = self.shift(&r, &b.plan, (k * width) as i64)?;
                self.fold(&r, &b.plan, -(width as i64), a.plan.padded_rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let tiles = a
            .tiles
            .iter()
            .map(|t| {
                let terms = (0..a.cols())
                    .map(|k| {
                        let c = self.apply_mask(t, width, MaskKind::Column(k), 1.0)?;
                        let c = self.shift(&c, &a.plan, k as i64)?;
                        let c = self.fold(&c, &a.plan, -1, out_cols)?;
                        self.eval.mult_rescale(&c, &row_reps[k])
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.eval.add_many(&terms)
            })
            .collect::<Result<Vec<_>>>()?;
        PackedMatrix::new(plan, Layout::RowMajor, tiles)
    }

    /// `factor * A^T * B` for row-major `A` (n x d) and `B` (n x c) on the same frame and tiling.
    /// The result is class-replicated (d x c).
    pub fn matmul_at_b(&self, a: &PackedMatrix, b: &PackedMatrix, factor: f64) -> Result<PackedMatrix> {
        self.check_context(a)?;
        self.check_context(b)?;
        if a.layout != Layout::RowMajor || b.layout != Layout::RowMajor {
            return Err(Error::Layout("both operands must be row-major".into()));
        }
        if a.rows() != b.rows() || a.plan.frame_cols != b.plan.frame_cols || a.plan.padded_rows != b.plan.padded_rows {
            return Err(Error::Layout(format!(
                "cannot form A^T B from {}x{} and {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        let (a, b) = self.aligned(a, b)?;
        let width = a.plan.frame_cols;
        let plan = plan_class_replicated(a.cols(), b.cols(), a.plan.slot_count, width)?;
        let tiles = (0..b.cols())
            .map(|j| {
                let partial = a
                    .tiles
                    .iter()
                    .zip(&b.tiles)
                    .map(|(ta, tb)| {
                        let c = self.apply_mask(tb, width, MaskKind::Column(j), factor)?;
                        let c = self.shift(&c, &b.plan, j as i64)?;
                        let c = self.fold(&c, &b.plan, -1, a.plan.padded_cols)?;
                        self.eval.mult_rescale(&c, &self.eval.level_down(ta, c.level())?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let sum = self.eval.add_many(&partial)?;
                self.fold(&sum, &plan, width as i64, plan.frame_rows())
            })
            .collect::<Result<Vec<_>>>()?;
        PackedMatrix::new(plan, Layout::ClassReplicated, tiles)
    }

    /// Broadcasts each row's sum across the row's padded columns.
    pub fn row_reduce_sum(&self, pm: &PackedMatrix) -> Result<PackedMatrix> {
        self.row_reduce_sum_scaled(pm, 1.0)
    }

    /// `factor * rowsum`, broadcast; the factor rides on the mask so it costs no extra level.
    pub fn row_reduce_sum_scaled(&self, pm: &PackedMatrix, factor: f64) -> Result<PackedMatrix> {
        self.check_context(pm)?;
        if pm.layout != Layout::RowMajor {
            return Err(Error::Layout("row reduction needs a row-major matrix".into()));
        }
        let span = pm.plan.padded_cols;
        let width = pm.plan.frame_cols;
        let tiles = pm
            .tiles
            .iter()
            .map(|t| {
                let s = self.fold(t, &pm.plan, 1, span)?;
                let s = self.apply_mask(&s, width, MaskKind::Column(0), factor)?;
                self.fold(&s, &pm.plan, -1, span)
            })
            .collect::<Result<Vec<_>>>()?;
        PackedMatrix::new(pm.plan.clone(), pm.layout, tiles)
    }

    pub fn scalar_mult(&self, pm: &PackedMatrix, k: f64) -> Result<PackedMatrix> {
        self.map_tiles(pm, |t| self.eval.mult_const_rescale(t, k))
    }

    pub fn add(&self, a: &PackedMatrix, b: &PackedMatrix) -> Result<PackedMatrix> {
        self.zip_tiles(a, b, |x, y| self.eval.add(x, y))
    }

    pub fn sub(&self, a: &PackedMatrix, b: &PackedMatrix) -> Result<PackedMatrix> {
        self.zip_tiles(a, b, |x, y| self.eval.sub(x, y))
    }

    /// Moves every tile to `level` at its canonical scale (one rescale unless already there).
    pub fn drop_to_level(&self, pm: &PackedMatrix, level: usize) -> Result<PackedMatrix> {
        if pm.level() == level {
            return Ok(pm.clone());
        }
        self.map_tiles(pm, |t| self.eval.level_down(t, level))
    }

    pub fn map_tiles(&self, pm: &PackedMatrix, f: impl Fn(&Ciphertext) -> Result<Ciphertext>) -> Result<PackedMatrix> {
        let tiles = pm.tiles.iter().map(f).collect::<Result<Vec<_>>>()?;
        PackedMatrix::new(pm.plan.clone(), pm.layout, tiles)
    }

    pub fn zip_tiles(
        &self,
        a: &PackedMatrix,
        b: &PackedMatrix,
        f: impl Fn(&Ciphertext, &Ciphertext) -> Result<Ciphertext>,
    ) -> Result<PackedMatrix> {
        if a.layout != b.layout || a.plan != b.plan {
            return Err(Error::Layout("operands have different packings".into()));
        }
        let tiles = a.tiles.iter().zip(&b.tiles).map(|(x, y)| f(x, y)).collect::<Result<Vec<_>>>()?;
        PackedMatrix::new(a.plan.clone(), a.layout, tiles)
    }
}
