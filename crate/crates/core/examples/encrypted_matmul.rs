//! Encrypted matrix products in the two packing layouts.

use std::sync::Arc;
use std::time::Instant;

use blindtune::ckks::{keygen, CkksContext, CkksParams, Evaluator};
use blindtune::linalg::{pack, plan_class_replicated, plan_packing_with_width, unpack, Layout, MatrixOps};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn max_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn main() -> blindtune::Result<()> {
    let ctx = CkksContext::new(CkksParams::test_profile())?;
    let keys = keygen(&ctx, 3)?;
    let ops = MatrixOps::new(Evaluator::new(ctx.clone(), Arc::new(keys.eval.clone()))?);
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let slots = ctx.slot_count();
    let top = ctx.max_level();
    let width = 32;

    let a = Array2::from_shape_fn((16, 32), |_| rng.gen_range(-1.0..1.0));
    let b = Array2::from_shape_fn((32, 8), |_| rng.gen_range(-1.0..1.0));
    let pa = pack(&ctx, &a, &plan_packing_with_width(16, 32, slots, width)?, Layout::RowMajor, &keys.public, top, &mut rng)?;
    let pb = pack(&ctx, &b, &plan_class_replicated(32, 8, slots, width)?, Layout::ClassReplicated, &keys.public, top, &mut rng)?;

    let t = Instant::now();
    let c = ops.matmul(&pa, &pb)?;
    println!("A(16x32) * B(32x8): {:.2?}, level {top} -> {}", t.elapsed(), c.level());
    println!("max error vs plaintext: {:.2e}", max_err(&unpack(&ctx, &c, &keys.secret)?, &a.dot(&b)));

    let t = Instant::now();
    let cp = ops.matmul_plain(&pa, &b)?;
    println!("A * plain B: {:.2?}, max error {:.2e}", t.elapsed(), max_err(&unpack(&ctx, &cp, &keys.secret)?, &a.dot(&b)));

    // gradient shape: X^T E with X (n x d) and E (n x c) sharing the row frame
    let e = Array2::from_shape_fn((16, 8), |_| rng.gen_range(-1.0..1.0));
    let pe = pack(&ctx, &e, &plan_packing_with_width(16, 8, slots, width)?, Layout::RowMajor, &keys.public, top, &mut rng)?;
    let t = Instant::now();
    let g = ops.matmul_at_b(&pa, &pe, 0.5)?;
    let want = a.t().dot(&e) * 0.5;
    println!("0.5 * A^T E: {:.2?}, max error {:.2e}", t.elapsed(), max_err(&unpack(&ctx, &g, &keys.secret)?, &want));

    let sums = ops.row_reduce_sum(&pa)?;
    let got = unpack(&ctx, &sums, &keys.secret)?;
    let want: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    let err = (0..16).map(|i| (got[[i, 0]] - want[i]).abs()).fold(0.0, f64::max);
    println!("row sums: max error {err:.2e}");
    Ok(())
}
