//! Encrypt two vectors, multiply them, rotate the product and decrypt.

use std::sync::Arc;
use std::time::Instant;

use blindtune::ckks::{decrypt_values, encrypt_values, keygen, CkksContext, CkksParams, Evaluator};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> blindtune::Result<()> {
    let t = Instant::now();
    let ctx = CkksContext::new(CkksParams::test_profile())?;
    let keys = keygen(&ctx, 7)?;
    println!("keygen: {:.2?} ({} rotation keys)", t.elapsed(), keys.eval.rotations.len());
    let eval = Evaluator::new(ctx.clone(), Arc::new(keys.eval))?;
    let mut rng = ChaCha20Rng::seed_from_u64(1);

    let slots = ctx.slot_count();
    let a: Vec<f64> = (0..slots).map(|i| (i as f64 * 0.01).sin()).collect();
    let b: Vec<f64> = (0..slots).map(|i| (i as f64 * 0.02).cos()).collect();
    let top = ctx.max_level();

    let t = Instant::now();
    let ca = encrypt_values(&ctx, &a, top, &keys.public, &mut rng)?;
    let cb = encrypt_values(&ctx, &b, top, &keys.public, &mut rng)?;
    println!("encrypt x2: {:.2?}", t.elapsed());

    let t = Instant::now();
    let prod = eval.mult_rescale(&ca, &cb)?;
    println!("mult + rescale: {:.2?}", t.elapsed());

    let t = Instant::now();
    let rotated = eval.rotate(&prod, 3)?;
    println!("rotate by 3: {:.2?}", t.elapsed());

    let t = Instant::now();
    let out = decrypt_values(&ctx, &rotated, &keys.secret)?;
    println!("decrypt: {:.2?}", t.elapsed());

    let err = (0..slots)
        .map(|i| (out[i] - a[(i + 3) % slots] * b[(i + 3) % slots]).abs())
        .fold(0.0, f64::max);
    println!("level {} -> {}, max error {err:.3e}", top, rotated.level());
    Ok(())
}
