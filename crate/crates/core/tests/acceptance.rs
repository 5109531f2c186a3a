//! Acceptance run: one PASS/FAIL/SKIP line per criterion, nonzero exit on any FAIL.
//!
//! The dataset accuracy check needs extracted feature files under `$BLINDTUNE_FEATURES`
//! (default `fixtures/features` in this crate), laid out as
//! `<dataset>/{train,val,test}.efv`.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use blindtune::approx::{softmax_exact, ApproxSoftmax, SoftmaxConfig};
use blindtune::ckks::serialize::contains_secret_key_marker;
use blindtune::ckks::{decrypt_values, encrypt_values, keygen, CkksContext, CkksParams, Evaluator, KeySet};
use blindtune::ingest::{gen_blobs, prepare, FeatureFile, SplitSpec, Standardizer};
use blindtune::linalg::{pack, plan_class_replicated, plan_packing_with_width, unpack, Layout, MatrixOps};
use blindtune::protocol::{
    handle_session, run_hospital_session, EncryptedDataset, HospitalOptions, PlainSplits, Registry, ServerConfig,
};
use blindtune::ring::modular::primes_below_power_of_two;
use blindtune::ring::{Domain, Modulus, RingPoly, RnsBasis};
use blindtune::tolerance;
use blindtune::trainer::oracle::{
    accuracy, batch_ranges, cross_entropy, gradient, one_hot, plain_step, plaintext_train, predict, PlainModel,
    SoftmaxKind,
};
use blindtune::trainer::{init_model, pack_batches, EncryptedTrainer, Hyperparams, LocalRefresher, Preset};
use ndarray::{s, Array2};
use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const CKKS_ROUNDTRIP: f64 = 1.0 / (1u64 << 20) as f64;
const CKKS_ADD: f64 = 1.0 / (1u64 << 19) as f64;
const CKKS_MULT: f64 = 1.0 / (1u64 << 15) as f64;
const CKKS_ROTATE: f64 = 1.0 / (1u64 << 18) as f64;
const FD_RELATIVE: f64 = 1e-5;
const LOCKSTEP_WEIGHTS: f64 = 5e-3;
const ACCURACY_GAP: f64 = 0.01;
const PARITY_GAP: f64 = 0.02;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

struct Shared {
    ctx: Arc<CkksContext>,
    keys: KeySet,
    ops: MatrixOps,
}

fn shared() -> Shared {
    let ctx = CkksContext::new(CkksParams::test_profile()).unwrap();
    let keys = keygen(&ctx, 2024).unwrap();
    let ops = MatrixOps::new(Evaluator::new(ctx.clone(), Arc::new(keys.eval.clone())).unwrap());
    Shared { ctx, keys, ops }
}

fn max_abs(a: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().map(f64::abs).fold(0.0, f64::max)
}

fn ckks_suite(s: &Shared, budget: Duration) -> Verdict {
    let t = Instant::now();
    let (ctx, keys) = (&s.ctx, &s.keys);
    let eval = s.ops.evaluator();
    let n = ctx.slot_count();
    let top = ctx.max_level();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let rand_vec = |rng: &mut ChaCha20Rng| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let mut roundtrip: f64 = 0.0;
    for _ in 0..1000 {
        let v = rand_vec(&mut rng);
        let ct = encrypt_values(ctx, &v, top, &keys.public, &mut rng).unwrap();
        let out = decrypt_values(ctx, &ct, &keys.secret).unwrap();
        roundtrip = roundtrip.max(max_abs(out.iter().zip(&v).map(|(a, b)| a - b)));
    }
    let (mut add, mut mult, mut rot): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in [1i64, 7, -3, 100, 2048] {
        let (a, b) = (rand_vec(&mut rng), rand_vec(&mut rng));
        let ca = encrypt_values(ctx, &a, top, &keys.public, &mut rng).unwrap();
        let cb = encrypt_values(ctx, &b, top, &keys.public, &mut rng).unwrap();
        let sum = decrypt_values(ctx, &eval.add(&ca, &cb).unwrap(), &keys.secret).unwrap();
        add = add.max(max_abs((0..n).map(|i| sum[i] - a[i] - b[i])));
        let prod = decrypt_values(ctx, &eval.mult_rescale(&ca, &cb).unwrap(), &keys.secret).unwrap();
        mult = mult.max(max_abs((0..n).map(|i| prod[i] - a[i] * b[i])));
        let r = decrypt_values(ctx, &eval.rotate(&ca, k).unwrap(), &keys.secret).unwrap();
        rot = rot.max(max_abs((0..n).map(|i| r[i] - a[(i as i64 + k).rem_euclid(n as i64) as usize])));
    }
    let el = t.elapsed();
    check(
        roundtrip < CKKS_ROUNDTRIP && add < CKKS_ADD && mult < CKKS_MULT && rot < CKKS_ROTATE && el < budget,
        format!(
            "roundtrip {roundtrip:.2e} (< 2^-20) over 1000 vectors, add {add:.2e}, mult {mult:.2e}, rotate {rot:.2e}, {el:.1?}"
        ),
    )
}

fn schoolbook(a: &[u64], b: &[u64], q: &Modulus) -> Vec<u64> {
    let n = a.len();
    let mut out = vec![0u64; n];
    for i in 0..n {
        for j in 0..n {
            let p = q.mul(a[i], b[j]);
            if i + j < n {
                out[i + j] = q.add(out[i + j], p);
            } else {
                out[i + j - n] = q.sub(out[i + j - n], p);
            }
        }
    }
    out
}

fn crt(rows: &[&[u64]], primes: &[u64], idx: usize) -> BigInt {
    let q: BigInt = primes.iter().map(|&p| BigInt::from(p)).product();
    let mut acc = BigInt::zero();
    for (row, &p) in rows.iter().zip(primes) {
        let bp = BigInt::from(p);
        let hat = &q / &bp;
        let inv = hat.modpow(&(&bp - 2u32), &bp);
        acc += BigInt::from(row[idx]) * hat * inv;
    }
    acc % q
}

fn ring_oracle(budget: Duration) -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut mismatches = 0usize;
    let mut cases = 0usize;
    for &n in &[8usize, 16, 64] {
        let primes = primes_below_power_of_two(50, 2 * n as u64, 3, &[]);
        let basis = Arc::new(RnsBasis::new(n, &primes).unwrap());
        let q: BigInt = primes.iter().map(|&p| BigInt::from(p)).product();
        for _ in 0..500 {
            let mut rand_poly = || {
                let rows = basis.fields().iter().map(|f| (0..n).map(|_| rng.gen_range(0..f.prime())).collect()).collect();
                RingPoly::from_residues(&basis, Domain::Coefficient, rows).unwrap()
            };
            let (x, y) = (rand_poly(), rand_poly());
            let z = x.mul(&y).unwrap();
            cases += 1;
            for (i, f) in basis.fields().iter().enumerate() {
                if z.residue(i) != schoolbook(x.residue(i), y.residue(i), f.modulus()).as_slice() {
                    mismatches += 1;
                }
            }
            if x.ntt_forward().unwrap().ntt_inverse().unwrap() != x {
                mismatches += 1;
            }
            let k = cases % n;
            let xr: Vec<&[u64]> = (0..3).map(|i| x.residue(i)).collect();
            let yr: Vec<&[u64]> = (0..3).map(|i| y.residue(i)).collect();
            let zr: Vec<&[u64]> = (0..3).map(|i| z.residue(i)).collect();
            let mut want = BigInt::zero();
            for i in 0..n {
                let term = crt(&xr, &primes, i) * crt(&yr, &primes, (k + n - i) % n);
                if i <= k {
                    want += term;
                } else {
                    want -= term;
                }
            }
            want %= &q;
            if want.is_negative() {
                want += &q;
            }
            if crt(&zr, &primes, k) != want {
                mismatches += 1;
            }
        }
    }
    let el = t.elapsed();
    check(
        mismatches == 0 && el < budget,
        format!("{cases} products at N in {{8,16,64}}, {mismatches} mismatches vs schoolbook and CRT, {el:.1?}"),
    )
}

fn encrypted_matmul(s: &Shared, budget: Duration) -> Verdict {
    let t = Instant::now();
    let slots = s.ctx.slot_count();
    let top = s.ctx.max_level();
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(1000 + seed);
        let a = Array2::from_shape_fn((16, 32), |_| rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_fn((32, 8), |_| rng.gen_range(-1.0..1.0));
        let pa = pack(&s.ctx, &a, &plan_packing_with_width(16, 32, slots, 32).unwrap(), Layout::RowMajor, &s.keys.public, top, &mut rng).unwrap();
        let pb = pack(&s.ctx, &b, &plan_class_replicated(32, 8, slots, 32).unwrap(), Layout::ClassReplicated, &s.keys.public, top, &mut rng).unwrap();
        let c = unpack(&s.ctx, &s.ops.matmul(&pa, &pb).unwrap(), &s.keys.secret).unwrap();
        worst = worst.max(max_abs((&c - &a.dot(&b)).into_iter()));
    }
    let el = t.elapsed();
    check(
        worst < tolerance::MATMUL && el < budget,
        format!("16x32 * 32x8 over 50 seeds, max error {worst:.2e} (< {:.0e}), {el:.1?}", tolerance::MATMUL),
    )
}

fn approx_softmax(s: &Shared) -> Verdict {
    let c = 8;
    let sm = ApproxSoftmax::new(SoftmaxConfig::for_classes(c).unwrap()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let rows = 1000;
    let z = Array2::from_shape_fn((rows, c), |_| rng.gen_range(-4.0..4.0));
    let plan = plan_packing_with_width(rows, c, s.ctx.slot_count(), c).unwrap();
    let pz = pack(&s.ctx, &z, &plan, Layout::RowMajor, &s.keys.public, s.ctx.max_level(), &mut rng).unwrap();
    let p = unpack(&s.ctx, &sm.eval_packed(&s.ops, &pz).unwrap(), &s.keys.secret).unwrap();
    let mut entry: f64 = 0.0;
    let mut sum: f64 = 0.0;
    for (i, row) in z.rows().into_iter().enumerate() {
        let want = softmax_exact(row.as_slice().unwrap());
        entry = entry.max(max_abs((0..c).map(|j| p[[i, j]] - want[j])));
        sum = sum.max((p.row(i).sum() - 1.0).abs());
    }
    let levels: Vec<f64> = (0..16).map(|i| -4.0 + 8.0 * i as f64 / 15.0).collect();
    let u = Array2::from_shape_fn((16, c), |(i, _)| levels[i]);
    let pu = pack(&s.ctx, &u, &plan_packing_with_width(16, c, s.ctx.slot_count(), c).unwrap(), Layout::RowMajor, &s.keys.public, s.ctx.max_level(), &mut rng).unwrap();
    let q = unpack(&s.ctx, &sm.eval_packed(&s.ops, &pu).unwrap(), &s.keys.secret).unwrap();
    let uniform = max_abs(q.iter().map(|v| v - 1.0 / c as f64));
    check(
        entry < tolerance::SOFTMAX && sum < tolerance::SOFTMAX_ROW_SUM && uniform < tolerance::SOFTMAX_UNIFORM,
        format!("1000 encrypted rows, c=8: entry error {entry:.2e}, row-sum error {sum:.2e}, uniform error {uniform:.2e}"),
    )
}

fn gradient_fd() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (n, d, c) = (rng.gen_range(1..=8), rng.gen_range(1..=6), rng.gen_range(2..=4));
        let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let y = one_hot(&labels, c);
        let w = Array2::from_shape_fn((d, c), |_| rng.gen_range(-0.5..0.5));
        let g = gradient(x.view(), y.view(), &w, &SoftmaxKind::Exact);
        let h = 1e-5;
        let mut fd = Array2::zeros((d, c));
        for i in 0..d {
            for j in 0..c {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[[i, j]] += h;
                wm[[i, j]] -= h;
                fd[[i, j]] = (cross_entropy(x.view(), y.view(), &wp) - cross_entropy(x.view(), y.view(), &wm)) / (2.0 * h);
            }
        }
        let num = (&g - &fd).mapv(|v| v * v).sum().sqrt();
        let den = g.mapv(|v| v * v).sum().sqrt().max(fd.mapv(|v| v * v).sum().sqrt()).max(1e-12);
        worst = worst.max(num / den);
    }
    check(worst < FD_RELATIVE, format!("20 instances, max relative error {worst:.2e} (< 1e-5)"))
}

fn lockstep(s: &Shared, budget: Duration) -> Verdict {
    let t = Instant::now();
    let data = prepare(&gen_blobs(3, 16, 600, 5).unwrap(), SplitSpec::default(), 5).unwrap();
    let (x, labels) = &data.train;
    let mut hp = Hyperparams::new(x.ncols(), 3).unwrap();
    hp.batch_size = 64;
    hp.learning_rate = 0.1;
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let batches = pack_batches(&s.ctx, x, labels, 3, hp.batch_size, hp.frame_width(), &s.keys.public, &mut rng).unwrap();
    let ranges = batch_ranges(x.nrows(), hp.batch_size);
    let trainer = EncryptedTrainer::new(s.ops.clone(), hp.clone()).unwrap();
    let mut refresher = LocalRefresher::new(s.ctx.clone(), s.keys.secret.clone(), s.keys.public.clone(), 7);
    let sm = SoftmaxKind::Approximate(Box::new(ApproxSoftmax::new(hp.softmax.clone()).unwrap()));
    let y = one_hot(labels, 3);
    let mut state = init_model(&s.ctx, &hp, &s.keys.public, 8).unwrap();
    let mut oracle = PlainModel::zeros(hp.feature_dim, 3);
    let mut worst: f64 = 0.0;
    let mut w = Array2::zeros((hp.feature_dim, 3));
    for step in 0..20 {
        let b = step % batches.len();
        state = trainer.nag_step(&state, &batches[b], Some(&mut refresher)).unwrap();
        let r = ranges[b].clone();
        plain_step(&mut oracle, x.slice(s![r.clone(), ..]), y.slice(s![r, ..]), hp.learning_rate, &sm);
        w = unpack(&s.ctx, &state.w, &s.keys.secret).unwrap();
        worst = worst.max(max_abs((&w - &oracle.w).into_iter()));
    }
    let (tx, ty) = &data.test;
    let enc = accuracy(&predict(tx.dot(&w).view()), ty);
    let plain = accuracy(&predict(tx.dot(&oracle.w).view()), ty);
    let el = t.elapsed();
    check(
        worst < LOCKSTEP_WEIGHTS && (enc - plain).abs() <= ACCURACY_GAP && el < budget,
        format!(
            "20 steps, max per-step weight error {worst:.2e} (< 5e-3), test accuracy {:.2}% vs {:.2}%, {el:.1?}",
            enc * 100.0,
            plain * 100.0
        ),
    )
}

struct Recording<S> {
    inner: S,
    log: Arc<Mutex<Vec<u8>>>,
}

impl<S: Read> Read for Recording<S> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.log.lock().unwrap().extend_from_slice(&buf[..n]);
        Ok(n)
    }
}

impl<S: Write> Write for Recording<S> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.inner.write(buf)
    }
    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

fn protocol_e2e() -> Verdict {
    let ctx = CkksContext::new(CkksParams::test_profile()).unwrap();
    let keys = keygen(&ctx, 77).unwrap();
    let p = prepare(&gen_blobs(3, 16, 90, 8).unwrap(), SplitSpec::default(), 8).unwrap();
    let splits = PlainSplits {
        train: p.train,
        val: p.val,
        test: p.test,
    };
    let mut hp = Hyperparams::new(17, 3).unwrap();
    hp.epochs = 2;
    hp.batch_size = 32;
    let data = EncryptedDataset::encrypt(&ctx, &keys, &splits, &hp, 9).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let log = Arc::new(Mutex::new(Vec::new()));
    let server_log = log.clone();
    let server = std::thread::spawn(move || {
        let registry = Registry::default();
        (0..2)
            .map(|_| {
                let (stream, _) = listener.accept().unwrap();
                let rec = Recording {
                    inner: stream,
                    log: server_log.clone(),
                };
                handle_session(rec, &ServerConfig::default(), &registry).map(|s| s.steps)
            })
            .collect::<Vec<_>>()
    });
    let mut opts = HospitalOptions::new(hp);
    opts.init_seed = 1;
    opts.refresh_seed = 2;
    let a = run_hospital_session(TcpStream::connect(addr).unwrap(), &ctx, &keys, &data, &opts);
    let b = run_hospital_session(TcpStream::connect(addr).unwrap(), &ctx, &keys, &data, &opts);
    let steps = server.join().unwrap();
    let (a, b) = match (a, b) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => return Verdict::Fail(format!("session failed: {:?} / {:?}", a.err(), b.err())),
    };
    let clean = steps.iter().all(|s| matches!(s, Ok(4)));
    let bytes = log.lock().unwrap();
    let isolated = !contains_secret_key_marker(&bytes, &ctx.hash());
    let same = a.weights.iter().zip(b.weights.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    let acc = a.test_accuracy.unwrap_or(0.0);
    check(
        clean && isolated && same && a.test_logits.is_some(),
        format!(
            "2 sessions x 2 epochs, server steps {steps:?}, {} MiB scanned, secret key absent: {isolated}, identical weights: {same}, test accuracy {:.2}%",
            bytes.len() >> 20,
            acc * 100.0
        ),
    )
}

fn features_dir() -> PathBuf {
    std::env::var_os("BLINDTUNE_FEATURES")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("features"))
}

fn dataset_parity(s: &Shared) -> Verdict {
    let root = features_dir();
    let presets = [Preset::DermaMnist, Preset::BloodMnist];
    let present: Vec<Preset> = presets
        .into_iter()
        .filter(|p| ["train", "val", "test"].iter().all(|f| root.join(p.name()).join(format!("{f}.efv")).exists()))
        .collect();
    if present.is_empty() {
        return Verdict::Skip(format!("no feature files under {}", root.display()));
    }
    let mut lines = Vec::new();
    let mut ok = true;
    for p in present {
        let load = |f: &str| FeatureFile::read(&root.join(p.name()).join(format!("{f}.efv"))).unwrap();
        let (train, test) = (load("train"), load("test"));
        let stats = Standardizer::fit(&train.features_f64()).unwrap();
        let x = stats.transform(&train.features_f64()).unwrap();
        let tx = stats.transform(&test.features_f64()).unwrap();
        let (y, ty) = (train.labels_usize(), test.labels_usize());
        let hp = Hyperparams::from_preset(p, x.ncols()).unwrap();
        let (plain, _) = plaintext_train(&x, &y, &hp, &SoftmaxKind::Exact);
        let unenc = accuracy(&predict(tx.dot(&plain.w).view()), &ty);
        let reference = p.reference_accuracy().unwrap();

        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let batches = pack_batches(&s.ctx, &x, &y, hp.class_count, hp.batch_size, hp.frame_width(), &s.keys.public, &mut rng).unwrap();
        let trainer = EncryptedTrainer::new(s.ops.clone(), hp.clone()).unwrap();
        let mut state = init_model(&s.ctx, &hp, &s.keys.public, 12).unwrap();
        let mut refresher = LocalRefresher::new(s.ctx.clone(), s.keys.secret.clone(), s.keys.public.clone(), 13);
        let enc = match trainer.train(&mut state, &batches, &mut refresher, |_, _| Ok(())) {
            Ok(_) => {
                let w = unpack(&s.ctx, &state.w, &s.keys.secret).unwrap();
                accuracy(&predict(tx.dot(&w).view()), &ty)
            }
            Err(e) => {
                ok = false;
                lines.push(format!("{}: encrypted run failed: {e}", p.name()));
                continue;
            }
        };
        let pass = (unenc - reference).abs() <= PARITY_GAP && (enc - unenc).abs() <= ACCURACY_GAP;
        ok &= pass;
        lines.push(format!(
            "{}: unenc {:.2}% (reference {:.2}%), enc {:.2}%",
            p.name(),
            unenc * 100.0,
            reference * 100.0,
            enc * 100.0
        ));
    }
    check(ok, lines.join("; "))
}

fn main() {
    let started = Instant::now();
    let s = shared();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("ckks_correctness", Box::new(|| ckks_suite(&s, Duration::from_secs(120)))),
        ("ring_oracle_equivalence", Box::new(|| ring_oracle(Duration::from_secs(60)))),
        ("encrypted_matmul", Box::new(|| encrypted_matmul(&s, Duration::from_secs(300)))),
        ("approximate_softmax", Box::new(|| approx_softmax(&s))),
        ("gradient_oracle", Box::new(gradient_fd)),
        ("lockstep_training_parity", Box::new(|| lockstep(&s, Duration::from_secs(900)))),
        ("protocol_end_to_end", Box::new(protocol_e2e)),
        ("dataset_accuracy_parity", Box::new(|| dataset_parity(&s))),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name}: {detail}");
    }
    println!("acceptance finished in {:.1?}, {failed} failed", started.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
