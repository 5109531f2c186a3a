//! Hospital and cloud over TCP on localhost: upload, train, infer.

use std::net::TcpStream;

use blindtune::ckks::{keygen, CkksContext, CkksParams};
use blindtune::ingest::{gen_blobs, prepare, SplitSpec};
use blindtune::protocol::{run_hospital_session, spawn_server, EncryptedDataset, HospitalOptions, PlainSplits, ServerConfig};
use blindtune::trainer::Hyperparams;

fn main() -> blindtune::Result<()> {
    let (addr, registry) = spawn_server("127.0.0.1:0", ServerConfig::default())?;
    println!("cloud listening on {addr}");

    let ctx = CkksContext::new(CkksParams::test_profile())?;
    let keys = keygen(&ctx, 9)?;
    let p = prepare(&gen_blobs(3, 16, 120, 9)?, SplitSpec::default(), 9)?;
    let splits = PlainSplits {
        train: p.train,
        val: p.val,
        test: p.test,
    };
    let mut hp = Hyperparams::new(splits.train.0.ncols(), 3)?;
    hp.epochs = 2;
    hp.batch_size = 42;
    let data = EncryptedDataset::encrypt(&ctx, &keys, &splits, &hp, 10)?;

    let outcome = run_hospital_session(TcpStream::connect(addr)?, &ctx, &keys, &data, &HospitalOptions::new(hp))?;
    for e in &outcome.epochs {
        println!(
            "epoch {}: {} steps, val accuracy {:?}",
            e.summary.log.epoch + 1,
            e.summary.log.steps,
            e.val_accuracy
        );
    }
    println!(
        "trained in {:.1}s with {} refresh rounds; test accuracy {:?}",
        outcome.train_seconds, outcome.refreshes, outcome.test_accuracy
    );
    println!("weights:\n{:.3}", outcome.weights);
    println!("open sessions after close: {}", registry.active_sessions());
    Ok(())
}
