//! Polynomial approximations evaluated on ciphertexts: Chebyshev series,
//! Goldschmidt reciprocal and a row-wise softmax built from both.

mod chebyshev;
mod inverse;
mod softmax;

pub use chebyshev::{eval_poly_enc, ChebyshevPoly, ERROR_GRID};
pub use inverse::{goldschmidt_depth, goldschmidt_inverse, goldschmidt_plain};
pub use softmax::{softmax_exact, worst_case_row_sum, ApproxSoftmax, SoftmaxConfig};
