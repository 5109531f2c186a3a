use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::chebyshev::{ceil_log2, clenshaw, eval_normalized, ChebyshevPoly};
use super::inverse::goldschmidt_core;
use crate::ckks::Evaluator;
use crate::error::{Error, Result};
use crate::linalg::{mask_slots, Layout, MaskKind, MatrixOps, PackedMatrix};

/// Largest relative error accepted from the reciprocal when picking iteration counts.
const INVERSE_TARGET: f64 = 1e-3;

/// Parameters of the encrypted softmax.
///
/// Each row is shifted by its mean, so only the spread of a row matters:
/// logits must satisfy `|z| <= logit_bound` and `max(z) - min(z) <= logit_bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxConfig {
    pub classes: usize,
    pub logit_bound: f64,
    pub exp_degree: usize,
    pub goldschmidt_iters: usize,
    /// Upper bound on a row's sum of exponentials after centering.
    pub denom_bound: f64,
}

/// Largest `sum_j exp(z_j - mean(z))` over rows with spread at most `bound`.
pub fn worst_case_row_sum(classes: usize, bound: f64) -> f64 {
    if classes <= 1 {
        return 1.0;
    }
    let c = classes as f64;
    // convex in z, so the maximum sits on a vertex: m entries at `bound`, the rest at 0
    (1..classes)
        .map(|m| {
            let m = m as f64;
            let mean = m * bound / c;
            m * (bound - mean).exp() + (c - m) * (-mean).exp()
        })
        .fold(0.0, f64::max)
}

impl SoftmaxConfig {
    pub const DEFAULT_BOUND: f64 = 8.0;
    pub const DEFAULT_DEGREE: usize = 31;

    pub fn for_classes(classes: usize) -> Result<Self> {
        Self::with_bound(classes, Self::DEFAULT_BOUND, Self::DEFAULT_DEGREE)
    }

    /// Derives the denominator bound and the fewest iterations meeting the reciprocal target.
    pub fn with_bound(classes: usize, logit_bound: f64, exp_degree: usize) -> Result<Self> {
        let mut cfg = Self {
            classes,
            logit_bound,
            exp_degree,
            goldschmidt_iters: 1,
            denom_bound: worst_case_row_sum(classes, logit_bound) * 1.02,
        };
        cfg.validate()?;
        while cfg.inverse_error_bound() > INVERSE_TARGET {
            cfg.goldschmidt_iters += 1;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.classes >= 1
            && self.logit_bound.is_finite()
            && self.logit_bound > 0.0
            && self.exp_degree >= 1
            && self.goldschmidt_iters >= 1
            && self.goldschmidt_iters <= 30
            && self.denom_bound.is_finite()
            && self.denom_bound >= self.classes as f64;
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid softmax config {self:?}")));
        }
        Ok(())
    }

    /// Midpoint of the possible row sums `[classes, denom_bound]`.
    pub fn normalizer(&self) -> f64 {
        (self.denom_bound + self.classes as f64) / 2.0
    }

    /// Worst relative error of the reciprocal step.
    pub fn inverse_error_bound(&self) -> f64 {
        let c = self.classes as f64;
        let r = (self.denom_bound - c) / (self.denom_bound + c);
        r.powf(2f64.powi(self.goldschmidt_iters as i32))
    }

    /// Levels consumed: centering, exp, row sum, reciprocal, final product.
    pub fn depth(&self) -> usize {
        ceil_log2(self.exp_degree + 1).max(1) + self.goldschmidt_iters + 4
    }

    pub fn hash(&self) -> [u8; 8] {
        let json = serde_json::to_vec(self).expect("config serializes");
        let d = Sha256::digest(&json);
        d[..8].try_into().expect("digest is 32 bytes")
    }
}

/// Exact softmax of one row.
pub fn softmax_exact(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// A configured softmax with its fitted exponential.
#[derive(Clone, Debug)]
pub struct ApproxSoftmax {
    cfg: SoftmaxConfig,
    exp: ChebyshevPoly,
}

impl ApproxSoftmax {
    pub fn new(cfg: SoftmaxConfig) -> Result<Self> {
        cfg.validate()?;
        let exp = ChebyshevPoly::fit(f64::exp, -cfg.logit_bound, cfg.logit_bound, cfg.exp_degree)?;
        Ok(Self { cfg, exp })
    }

    pub fn config(&self) -> &SoftmaxConfig {
        &self.cfg
    }

    pub fn exp_poly(&self) -> &ChebyshevPoly {
        &self.exp
    }

    /// The encrypted pipeline replayed in floating point.
    pub fn eval_plain(&self, row: &[f64]) -> Vec<f64> {
        let b = self.cfg.logit_bound;
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let e: Vec<f64> = row.iter().map(|z| clenshaw(&self.exp.coeffs, (z - mean) / b)).collect();
        let norm = self.cfg.normalizer();
        let x = e.iter().sum::<f64>() / norm;
        let mut bi = 1.0 - x;
        let mut p = 2.0 - x;
        for _ in 1..self.cfg.goldschmidt_iters {
            bi *= bi;
            p *= 1.0 + bi;
        }
        e.into_iter().map(|v| v * p / norm).collect()
    }

    /// Row-wise softmax of a row-major `n x classes` logit matrix.
    ///
    /// Padding rows and columns of the output are zero.
    pub fn eval_packed(&self, ops: &MatrixOps, z: &PackedMatrix) -> Result<PackedMatrix> {
        let cfg = &self.cfg;
        if z.layout() != Layout::RowMajor || z.cols() != cfg.classes {
            return Err(Error::Layout(format!(
                "softmax configured for {} classes got a {}x{} matrix",
                cfg.classes,
                z.rows(),
                z.cols()
            )));
        }
        let needed = cfg.depth() + 1;
        if z.level() < needed {
            return Err(Error::LevelExhausted {
                needed,
                available: z.level(),
            });
        }
        let eval: &Evaluator = ops.evaluator();
        let plan = z.plan().clone();
        let b = cfg.logit_bound;
        let level = z.level() - 1;
        let mean = ops.row_reduce_sum_scaled(z, 1.0 / (cfg.classes as f64 * b))?;
        let scaled = ops.map_tiles(z, |t| eval.mult_const_to(t, 1.0 / b, level))?;
        let t = ops.sub(&scaled, &mean)?;
        let slots = plan.slot_count;
        let e_tiles = t
            .tiles()
            .iter()
            .enumerate()
            .map(|(i, tt)| {
                let kind = MaskKind::Block {
                    rows: plan.tile_rows(i),
                    cols: cfg.classes,
                };
                let mask = mask_slots(slots, plan.frame_cols, kind, 1.0);
                eval_normalized(eval, tt, &self.exp.coeffs, Some(&mask))
            })
            .collect::<Result<Vec<_>>>()?;
        let e = PackedMatrix::new(plan.clone(), Layout::RowMajor, e_tiles)?;
        let norm = cfg.normalizer();
        let x = ops.row_reduce_sum_scaled(&e, 1.0 / norm)?;
        let out = e
            .tiles()
            .iter()
            .zip(x.tiles())
            .map(|(et, xt)| {
                let neg = eval.neg(xt)?;
                let b0 = eval.add_const(&neg, 1.0)?;
                let p1 = eval.add_const(&neg, 2.0)?;
                let inv = goldschmidt_core(eval, b0, p1, cfg.goldschmidt_iters)?;
                let en = eval.mult_const_to(et, 1.0 / norm, inv.level())?;
                eval.mult_rescale(&en, &inv)
            })
            .collect::<Result<Vec<_>>>()?;
        PackedMatrix::new(plan, Layout::RowMajor, out)
    }
}
