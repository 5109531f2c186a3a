//! Error bounds for encrypted operations, shared by tests, examples and docs.
//!
//! Bounds are absolute and hold for inputs of magnitude at most 1 at the
//! default scale 2^40 unless stated otherwise.

/// Pack then unpack.
pub const PACK_ROUNDTRIP: f64 = 1.0 / (1u64 << 19) as f64;
/// Add, subtract and scalar multiply.
pub const ELEMENTWISE: f64 = 1e-5;
/// Row sums broadcast along the row.
pub const ROW_SUM: f64 = 1e-4;
/// Each entry of `A * B`.
pub const MATMUL: f64 = 1e-3;
/// Relative error of a dot product computed as a 1 x d by d x 1 product.
pub const DOT_RELATIVE: f64 = 1e-4;
/// Each entry of `A^T * B`.
pub const MATMUL_AT_B: f64 = 1e-3;

/// Sup-norm fit error of exp on [-8, 8] at degree 31, on a dense grid.
pub const EXP_FIT: f64 = 1e-3;
/// Encrypted exp against the plaintext function for inputs in [-4, 4].
pub const EXP_ENCRYPTED: f64 = 2e-3;
/// Encrypted polynomial against the same polynomial evaluated in plaintext, inputs in [-1, 1].
pub const POLY_NOISE: f64 = 1e-5;
/// Relative error of the encrypted reciprocal.
pub const INVERSE_RELATIVE: f64 = 1e-4;
/// Largest entry-wise distance between encrypted and exact softmax.
pub const SOFTMAX: f64 = 1e-2;
/// Distance of a softmax row sum from 1.
pub const SOFTMAX_ROW_SUM: f64 = 1e-2;
/// Entry-wise error for all-equal logits, where the exact answer is `1 / c`.
pub const SOFTMAX_UNIFORM: f64 = 1e-3;

/// Every `(name, bound)` pair, for reports.
pub const TABLE: &[(&str, f64)] = &[
    ("pack_roundtrip", PACK_ROUNDTRIP),
    ("elementwise", ELEMENTWISE),
    ("row_sum", ROW_SUM),
    ("matmul", MATMUL),
    ("dot_relative", DOT_RELATIVE),
    ("matmul_at_b", MATMUL_AT_B),
    ("exp_fit", EXP_FIT),
    ("exp_encrypted", EXP_ENCRYPTED),
    ("poly_noise", POLY_NOISE),
    ("inverse_relative", INVERSE_RELATIVE),
    ("softmax", SOFTMAX),
    ("softmax_row_sum", SOFTMAX_ROW_SUM),
    ("softmax_uniform", SOFTMAX_UNIFORM),
];
