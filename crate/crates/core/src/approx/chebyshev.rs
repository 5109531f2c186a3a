use serde::{Deserialize, Serialize};

use crate::ckks::{Ciphertext, Evaluator};
use crate::error::{Error, Result};

/// Points used to measure the sup-norm error of a fit.
pub const ERROR_GRID: usize = 20_001;

/// A truncated Chebyshev series on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevPoly {
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Vec<f64>,
    /// Largest deviation from the fitted function over [`ERROR_GRID`] points.
    pub max_error: f64,
}

pub(crate) fn ceil_log2(n: usize) -> usize {
    n.next_power_of_two().trailing_zeros() as usize
}

impl ChebyshevPoly {
    /// Interpolates `f` at the `degree + 1` Chebyshev nodes of the first kind.
    pub fn fit(f: impl Fn(f64) -> f64, lo: f64, hi: f64, degree: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!("degenerate interval [{lo}, {hi}]")));
        }
        if degree == 0 {
            return Err(Error::InvalidParameter("degree must be at least 1".into()));
        }
        let n = degree + 1;
        let (mid, half) = ((hi + lo) / 2.0, (hi - lo) / 2.0);
        let nodes: Vec<f64> = (0..n)
            .map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / n as f64).cos())
            .collect();
        let values: Vec<f64> = nodes.iter().map(|&t| f(mid + half * t)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("target is not finite on the interval".into()));
        }
        let coeffs = (0..n)
            .map(|j| {
                let s: f64 = (0..n)
                    .map(|k| values[k] * (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / n as f64).cos())
                    .sum();
                let c = 2.0 * s / n as f64;
                if j == 0 {
                    c / 2.0
                } else {
                    c
                }
            })
            .collect();
        let mut p = Self {
            lo,
            hi,
            coeffs,
            max_error: 0.0,
        };
        p.max_error = (0..ERROR_GRID)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (ERROR_GRID - 1) as f64;
                (p.eval(x) - f(x)).abs()
            })
            .fold(0.0, f64::max);
        Ok(p)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Maps `x` from `[lo, hi]` onto `[-1, 1]`.
    pub fn normalize(&self, x: f64) -> f64 {
        (2.0 * x - (self.lo + self.hi)) / (self.hi - self.lo)
    }

    /// Clenshaw evaluation at `x` in the original interval.
    pub fn eval(&self, x: f64) -> f64 {
        clenshaw(&self.coeffs, self.normalize(x))
    }

    /// Levels consumed by [`eval_poly_enc`].
    pub fn depth(&self) -> usize {
        normalized_depth(self.coeffs.len()) + 1
    }
}

pub(crate) fn clenshaw(coeffs: &[f64], t: f64) -> f64 {
    let (mut b1, mut b2) = (0.0, 0.0);
    for &c in coeffs.iter().skip(1).rev() {
        let b0 = 2.0 * t * b1 - b2 + c;
        b2 = b1;
        b1 = b0;
    }
    t * b1 - b2 + coeffs[0]
}

/// Depth of the baby-step/giant-step evaluation on an input already in `[-1, 1]`.
pub(crate) fn normalized_depth(len: usize) -> usize {
    ceil_log2(len).max(1) + 1
}

/// Evaluates `p` on every slot of `ct`; slots must lie in `[p.lo, p.hi]`.
pub fn eval_poly_enc(eval: &Evaluator, ct: &Ciphertext, p: &ChebyshevPoly) -> Result<Ciphertext> {
    let needed = p.depth() + 1;
    if ct.level() < needed {
        return Err(Error::LevelExhausted {
            needed,
            available: ct.level(),
        });
    }
    let a = 2.0 / (p.hi - p.lo);
    let b = -(p.hi + p.lo) / (p.hi - p.lo);
    let t = eval.add_const(&eval.mult_const_to(ct, a, ct.level() - 1)?, b)?;
    eval_normalized(eval, &t, &p.coeffs, None)
}

/// `sum_j coeffs[j] T_j(t)`, optionally multiplied slot-wise by `mask` at no extra depth.
pub(crate) fn eval_normalized(
    eval: &Evaluator,
    t: &Ciphertext,
    coeffs: &[f64],
    mask: Option<&[f64]>,
) -> Result<Ciphertext> {
    let depth = normalized_depth(coeffs.len());
    if t.level() < depth + 1 {
        return Err(Error::LevelExhausted {
            needed: depth + 1,
            available: t.level(),
        });
    }
    let log_n = ceil_log2(coeffs.len()).max(1);
    let baby = log_n.div_ceil(2);
    let giants_needed = log_n - baby;
    let m = 1usize << baby;
    let powers = chebyshev_powers(eval, t, m)?;
    let giants = giant_steps(eval, &powers, m, giants_needed)?;
    Bsgs {
        eval,
        mask,
        m,
        leaf_level: t.level() - baby - 1,
        powers,
        giants,
    }
    .run(coeffs, giants_needed)
}

/// `T_0` is implicit; entry `j` holds `T_j` for `1 <= j < m`.
fn chebyshev_powers(eval: &Evaluator, t: &Ciphertext, m: usize) -> Result<Vec<Option<Ciphertext>>> {
    let mut pw: Vec<Option<Ciphertext>> = vec![None; m.max(2)];
    pw[1] = Some(t.clone());
    for j in 2..m {
        let half = j / 2;
        let a = pw[half].clone().expect("computed");
        let next = if j % 2 == 0 {
            eval.add_const(&eval.mul_integer(&eval.rescale(&eval.square(&a)?)?, 2)?, -1.0)?
        } else {
            let b = pw[half + 1].clone().expect("computed");
            let lvl = a.level().min(b.level());
            let prod = eval.mult_rescale(&eval.level_down(&a, lvl)?, &eval.level_down(&b, lvl)?)?;
            let prod = eval.mul_integer(&prod, 2)?;
            eval.sub(&prod, &eval.level_down(t, prod.level())?)?
        };
        pw[j] = Some(next);
    }
    Ok(pw)
}

/// `T_m, T_2m, T_4m, ...` (`count` entries) by repeated doubling from `T_{m/2}`.
fn giant_steps(eval: &Evaluator, powers: &[Option<Ciphertext>], m: usize, count: usize) -> Result<Vec<Ciphertext>> {
    let double = |x: &Ciphertext| -> Result<Ciphertext> {
        eval.add_const(&eval.mul_integer(&eval.rescale(&eval.square(x)?)?, 2)?, -1.0)
    };
    let mut out: Vec<Ciphertext> = Vec::with_capacity(count);
    for _ in 0..count {
        let next = match out.last() {
            Some(last) => double(last)?,
            None => double(powers[m / 2].as_ref().expect("baby step"))?,
        };
        out.push(next);
    }
    Ok(out)
}

struct Bsgs<'a> {
    eval: &'a Evaluator,
    mask: Option<&'a [f64]>,
    m: usize,
    leaf_level: usize,
    powers: Vec<Option<Ciphertext>>,
    giants: Vec<Ciphertext>,
}

impl Bsgs<'_> {
    fn scaled(&self, c: f64) -> Option<Vec<f64>> {
        self.mask.map(|m| m.iter().map(|v| v * c).collect())
    }

    fn leaf(&self, coeffs: &[f64]) -> Result<Ciphertext> {
        let ev = self.eval;
        let t1 = self.powers[1].as_ref().expect("T_1");
        let mut acc: Option<Ciphertext> = None;
        for (j, &c) in coeffs.iter().enumerate().skip(1) {
            if c == 0.0 {
                continue;
            }
            let tj = self.powers[j].as_ref().expect("baby step");
            let term = match self.scaled(c) {
                Some(v) => ev.mult_values_to(tj, &v, self.leaf_level)?,
                None => ev.mult_const_to(tj, c, self.leaf_level)?,
            };
            acc = Some(match acc {
                Some(a) => ev.add(&a, &term)?,
                None => term,
            });
        }
        let acc = match acc {
            Some(a) => a,
            None => ev.mult_const_to(t1, 0.0, self.leaf_level)?,
        };
        let c0 = coeffs.first().copied().unwrap_or(0.0);
        match self.scaled(c0) {
            Some(v) => {
                let pt = ev.context().encode_at(&v, self.leaf_level)?;
                ev.add_plain(&acc, &pt)
            }
            None => ev.add_const(&acc, c0),
        }
    }

    /// Output lands exactly `i` levels below the leaves.
    fn run(&self, coeffs: &[f64], i: usize) -> Result<Ciphertext> {
        let ev = self.eval;
        if i == 0 {
            debug_assert!(coeffs.len() <= self.m);
            return self.leaf(coeffs);
        }
        let k = self.m << (i - 1);
        let target = self.leaf_level - i;
        if coeffs.len() <= k {
            return ev.level_down(&self.run(coeffs, i - 1)?, target);
        }
        // p = q * T_k + r, using T_{k+j} = 2 T_j T_k - T_{k-j}
        let hi = &coeffs[k..];
        let mut q = vec![0.0; hi.len()];
        let mut r = coeffs[..k].to_vec();
        q[0] = hi[0];
        for j in 1..hi.len() {
            q[j] = 2.0 * hi[j];
            r[k - j] -= hi[j];
        }
        let qe = self.run(&q, i - 1)?;
        let g = ev.level_down(&self.giants[i - 1], qe.level())?;
        let prod = ev.mult_rescale(&qe, &g)?;
        let re = ev.level_down(&self.run(&r, i - 1)?, target)?;
        ev.add(&prod, &re)
    }
}
