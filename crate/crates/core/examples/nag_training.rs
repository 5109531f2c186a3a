//! Encrypted NAG training in one process, checked step by step against a plaintext replay.

use std::sync::Arc;

use blindtune::approx::ApproxSoftmax;
use blindtune::ckks::{keygen, CkksContext, CkksParams, Evaluator};
use blindtune::ingest::{gen_blobs, prepare, SplitSpec};
use blindtune::linalg::{unpack, MatrixOps};
use blindtune::trainer::oracle::{accuracy, plaintext_train, predict, SoftmaxKind};
use blindtune::trainer::{init_model, pack_batches, EncryptedTrainer, Hyperparams, LocalRefresher};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> blindtune::Result<()> {
    let data = prepare(&gen_blobs(3, 16, 200, 1)?, SplitSpec::default(), 1)?;
    let (x, y) = &data.train;
    let mut hp = Hyperparams::new(x.ncols(), 3)?;
    hp.epochs = 3;
    hp.batch_size = 70;

    let ctx = CkksContext::new(CkksParams::test_profile())?;
    let keys = keygen(&ctx, 2)?;
    let ops = MatrixOps::new(Evaluator::new(ctx.clone(), Arc::new(keys.eval.clone()))?);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let batches = pack_batches(&ctx, x, y, 3, hp.batch_size, hp.frame_width(), &keys.public, &mut rng)?;
    println!("{} training rows in {} encrypted batches", x.nrows(), batches.len());

    let trainer = EncryptedTrainer::new(ops, hp.clone())?;
    let mut state = init_model(&ctx, &hp, &keys.public, 4)?;
    let mut refresher = LocalRefresher::new(ctx.clone(), keys.secret.clone(), keys.public.clone(), 5);
    trainer.train(&mut state, &batches, &mut refresher, |e, s| {
        println!(
            "epoch {}: {} steps, {} refreshes, {:.1}s, step counter {}",
            e.epoch + 1,
            e.steps,
            e.refreshes,
            e.seconds,
            s.step
        );
        Ok(())
    })?;

    let w = unpack(&ctx, &state.w, &keys.secret)?;
    let sm = SoftmaxKind::Approximate(Box::new(ApproxSoftmax::new(hp.softmax.clone())?));
    let (replay, _) = plaintext_train(x, y, &hp, &sm);
    let drift = w.iter().zip(replay.w.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |W_enc - W_plain| = {drift:.2e}");

    let (tx, ty) = &data.test;
    println!(
        "test accuracy: encrypted {:.2}%, plaintext {:.2}%",
        100.0 * accuracy(&predict(tx.dot(&w).view()), ty),
        100.0 * accuracy(&predict(tx.dot(&replay.w).view()), ty)
    );
    Ok(())
}
