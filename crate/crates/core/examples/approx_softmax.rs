//! Polynomial softmax: accuracy on plaintext rows, then on encrypted logits.

use std::sync::Arc;
use std::time::Instant;

use blindtune::approx::{softmax_exact, ApproxSoftmax, SoftmaxConfig};
use blindtune::ckks::{keygen, CkksContext, CkksParams, Evaluator};
use blindtune::linalg::{pack, plan_packing_with_width, unpack, Layout, MatrixOps};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() -> blindtune::Result<()> {
    let classes = 8;
    let cfg = SoftmaxConfig::for_classes(classes)?;
    let sm = ApproxSoftmax::new(cfg.clone())?;
    println!(
        "classes {classes}: |z| <= {}, exp degree {}, {} reciprocal iterations, depth {}",
        cfg.logit_bound,
        cfg.exp_degree,
        cfg.goldschmidt_iters,
        cfg.depth()
    );

    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let half = cfg.logit_bound / 2.0;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let row: Vec<f64> = (0..classes).map(|_| rng.gen_range(-half..half)).collect();
        let got = sm.eval_plain(&row);
        let want = softmax_exact(&row);
        worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    println!("plaintext polynomial vs exact over 1000 rows: max error {worst:.2e}");

    let ctx = CkksContext::new(CkksParams::test_profile())?;
    let keys = keygen(&ctx, 8)?;
    let ops = MatrixOps::new(Evaluator::new(ctx.clone(), Arc::new(keys.eval.clone()))?);
    let z = Array2::from_shape_fn((64, classes), |_| rng.gen_range(-half..half));
    let plan = plan_packing_with_width(64, classes, ctx.slot_count(), classes)?;
    let pz = pack(&ctx, &z, &plan, Layout::RowMajor, &keys.public, ctx.max_level(), &mut rng)?;
    let t = Instant::now();
    let p = sm.eval_packed(&ops, &pz)?;
    let got = unpack(&ctx, &p, &keys.secret)?;
    let mut err: f64 = 0.0;
    for (i, row) in z.rows().into_iter().enumerate() {
        let want = softmax_exact(row.as_slice().unwrap());
        for j in 0..classes {
            err = err.max((got[[i, j]] - want[j]).abs());
        }
    }
    println!(
        "encrypted 64x{classes}: {:.2?}, level {} -> {}, max error {err:.2e}",
        t.elapsed(),
        pz.level(),
        p.level()
    );
    Ok(())
}
