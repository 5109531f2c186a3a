use crate::ckks::{Ciphertext, Evaluator};
use crate::error::{Error, Result};

/// Levels consumed by [`goldschmidt_inverse`].
pub fn goldschmidt_depth(iters: usize) -> usize {
    iters + 1
}

/// Approximates `1 / s` slot-wise for `s` in `(0, 2 * normalizer)`.
///
/// With `x = s / normalizer` and `b_0 = 1 - x`, the result is
/// `(1 / normalizer) * prod_{i<k} (1 + b_0^(2^i))`, whose relative error is `|b_0|^(2^k)`.
pub fn goldschmidt_inverse(eval: &Evaluator, ct: &Ciphertext, normalizer: f64, iters: usize) -> Result<Ciphertext> {
    if iters == 0 || !(normalizer.is_finite() && normalizer > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need iters >= 1 and a positive normalizer, got {iters} and {normalizer}"
        )));
    }
    let needed = goldschmidt_depth(iters) + 1;
    if ct.level() < needed {
        return Err(Error::LevelExhausted {
            needed,
            available: ct.level(),
        });
    }
    let level = ct.level() - 1;
    let x = eval.mult_const_to(ct, 1.0 / normalizer, level)?;
    let b0 = eval.add_const(&eval.neg(&x)?, 1.0)?;
    let p1 = eval.add_const(&eval.mult_const_to(ct, -1.0 / (normalizer * normalizer), level)?, 2.0 / normalizer)?;
    goldschmidt_core(eval, b0, p1, iters)
}

/// Runs the product given `b_0` and `p_1 = (1 + b_0) * w` at the same level;
/// returns `w * prod (1 + b_i)` exactly `iters` levels lower.
pub(crate) fn goldschmidt_core(eval: &Evaluator, b0: Ciphertext, p1: Ciphertext, iters: usize) -> Result<Ciphertext> {
    let target = b0.level() - iters;
    let mut b = b0;
    let mut p = p1;
    for _ in 1..iters {
        b = eval.rescale(&eval.square(&b)?)?;
        let factor = eval.add_const(&b, 1.0)?;
        p = eval.mult_rescale(&eval.level_down(&p, b.level())?, &factor)?;
    }
    eval.level_down(&p, target)
}

/// The same iteration in plaintext.
pub fn goldschmidt_plain(s: f64, normalizer: f64, iters: usize) -> f64 {
    let x = s / normalizer;
    let mut b = 1.0 - x;
    let mut p = (1.0 + b) / normalizer;
    for _ in 1..iters {
        b *= b;
        p *= 1.0 + b;
    }
    p
}
