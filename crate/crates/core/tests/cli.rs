use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use blindtune::ckks::{CkksParams, SecurityProfile};
use blindtune::ingest::{stratified_split, FeatureFile, SplitSpec, Standardizer};
use blindtune::linalg::unpack;
use blindtune::store::{self, KeyFileSizes};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blindtune"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let o = run(args, cwd);
    assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn start(extra: &[&str], cwd: &Path) -> Self {
        let mut child = bin()
            .args(["serve", "--listen", "127.0.0.1:0"])
            .args(extra)
            .current_dir(cwd)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
        Server { child, addr }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(&[], d)), 1);
    assert_eq!(code(&run(&["bogus"], d)), 1);
    assert_eq!(code(&run(&["keygen", "--out", "k", "--profile", "huge"], d)), 1);
    assert_eq!(code(&run(&["gen-blobs", "--classes", "3"], d)), 1);
    assert_eq!(code(&run(&["gen-blobs", "--classes", "1", "--dim", "2", "--rows", "10", "--out", "x.efv"], d)), 1);
    assert_eq!(
        code(&run(&["encrypt-features", "--in", "a.efv", "--keys", "k", "--out", "o", "--split", "0.5,0.5"], d)),
        1
    );
    assert_eq!(code(&run(&["--help"], d)), 0);
    assert!(!d.join("x.efv").exists());
}

#[test]
fn gen_blobs_is_balanced_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["gen-blobs", "--classes", "3", "--dim", "4", "--rows", "100", "--seed", "7", "--out", "a.efv"], d);
    ok(&["gen-blobs", "--classes", "3", "--dim", "4", "--rows", "100", "--seed", "7", "--out", "b.efv"], d);
    let a = std::fs::read(d.join("a.efv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.efv")).unwrap());
    let f = FeatureFile::from_bytes(&a).unwrap();
    let counts: Vec<usize> = (0..3).map(|c| f.labels.iter().filter(|&&l| l == c).count()).collect();
    assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{counts:?}");
}

#[test]
fn bad_inputs_exit_2_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("empty.efv"), b"").unwrap();
    std::fs::write(d.join("empty.csv"), b"# nothing\n").unwrap();
    let o = run(&["encrypt-features", "--in", "empty.efv", "--keys", "k", "--out", "out"], d);
    assert_eq!(code(&o), 2);
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert_eq!(code(&run(&["encrypt-features", "--from-csv", "empty.csv", "--keys", "k", "--out", "out"], d)), 2);
    ok(&["gen-blobs", "--classes", "3", "--dim", "4", "--rows", "30", "--out", "ok.efv"], d);
    assert_eq!(code(&run(&["encrypt-features", "--in", "ok.efv", "--keys", "missing", "--out", "out"], d)), 2);
    assert!(!d.join("out").exists());
    assert_eq!(code(&run(&["report", "--run", "nowhere"], d)), 2);
    assert_eq!(code(&run(&["serve", "--listen", "not-an-address"], d)), 2);
}

#[test]
fn connection_refusal_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // a bound but never accepting port would hang; a closed one refuses
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    ok(&["gen-blobs", "--classes", "7", "--dim", "4", "--rows", "70", "--out", "b.efv"], d);
    ok(&["keygen", "--out", "keys", "--seed", "1"], d);
    ok(&["encrypt-features", "--in", "b.efv", "--keys", "keys", "--out", "data"], d);
    let addr = format!("127.0.0.1:{port}");
    let o = run(&["train", "--server", &addr, "--keys", "keys", "--data", "data"], d);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot connect"));

    // preset expansion without a server
    let out = ok(&["train", "--server", &addr, "--keys", "keys", "--data", "data", "--preset", "dermamnist", "--dry-run"], d);
    let hp: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(hp["epochs"], 12);
    assert_eq!(hp["learning_rate"], 0.01);
    assert_eq!(hp["batch_size"], 512);
    assert_eq!(hp["feature_dim"], 5);
    let o = run(&["train", "--server", &addr, "--keys", "keys", "--data", "data", "--preset", "bloodmnist", "--dry-run"], d);
    assert_eq!(code(&o), 1);
    let o = run(&["train", "--server", &addr, "--keys", "keys", "--data", "data", "--batch", "64", "--dry-run"], d);
    assert_eq!(code(&o), 1);
}

#[test]
fn key_files_match_size_formula() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["keygen", "--profile", "test", "--out", "a", "--seed", "3"], d);
    ok(&["keygen", "--profile", "test", "--out", "b", "--seed", "3"], d);
    ok(&["keygen", "--profile", "test", "--out", "c", "--seed", "4"], d);
    let sizes = KeyFileSizes::for_params(&CkksParams::test_profile());
    for (name, size) in [
        (store::SECRET_KEY_FILE, sizes.secret),
        (store::PUBLIC_KEY_FILE, sizes.public),
        (store::RELIN_KEY_FILE, sizes.relin),
        (store::ROTATION_KEYS_FILE, sizes.rotations),
    ] {
        let a = std::fs::read(d.join("a").join(name)).unwrap();
        assert_eq!(a.len() as u64, size, "{name}");
        assert_eq!(a, std::fs::read(d.join("b").join(name)).unwrap(), "{name}");
        assert_ne!(a, std::fs::read(d.join("c").join(name)).unwrap(), "{name}");
    }
    assert_eq!(store::load_params(&d.join("a")).unwrap(), CkksParams::test_profile());

    // secure128 by hand: N = 2^15, 19 base primes, 3 special, 7 digits, 2*14-1 rotation steps
    let p = CkksParams::for_profile(SecurityProfile::Secure128);
    let s = KeyFileSizes::for_params(&p);
    let n = 1u64 << 15;
    let header = 20;
    assert_eq!(s.secret, header + 22 * n * 8);
    assert_eq!(s.public, header + 2 * 19 * n * 8);
    assert_eq!(s.relin, header + 14 * 22 * n * 8);
    assert_eq!(s.rotations, 4 + 27 * (4 + s.relin));
}

#[test]
fn loopback_training_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["keygen", "--out", "keys", "--seed", "11"], d);
    ok(&["gen-blobs", "--classes", "3", "--dim", "16", "--rows", "90", "--seed", "5", "--out", "blobs.efv"], d);
    ok(&["encrypt-features", "--in", "blobs.efv", "--keys", "keys", "--out", "data", "--batch", "32", "--seed", "5"], d);

    // decrypting the upload gives the standardized plaintext, and the sidecar reproduces it
    let (ctx, keys) = store::load_keys(&d.join("keys")).unwrap();
    let test_plain = store::read_plain_split(&d.join("data"), "test").unwrap();
    let blocks = store::read_blocks(&d.join("data").join("test.enc"), &ctx).unwrap();
    let dec = unpack(&ctx, &blocks[0], &keys.secret).unwrap();
    let want = test_plain.features_f64();
    let err = dec.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-5, "{err}");
    let raw = FeatureFile::read(&d.join("blobs.efv")).unwrap();
    let split = stratified_split(&raw.labels_usize(), SplitSpec::default(), 5);
    let stats = Standardizer::from_json(&std::fs::read_to_string(d.join("data").join("stats.json")).unwrap()).unwrap();
    let again = stats.transform(&raw.features_f64().select(ndarray::Axis(0), &split.test)).unwrap();
    let err = again.iter().zip(want.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");

    let server = Server::start(&[], d);
    let out = ok(
        &["train", "--server", &server.addr, "--keys", "keys", "--data", "data", "--epochs", "1", "--lr", "0.1", "--out", "run"],
        d,
    );
    assert!(out.contains("Enc training time"), "{out}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("run/report.json")).unwrap()).unwrap();
    let enc = report["enc_accuracy"].as_f64().unwrap();
    assert!(enc > 0.9, "{enc}");
    assert!(report["unenc_accuracy"].as_f64().unwrap() > 0.9);
    assert_eq!(report["refreshes"], 4);

    ok(&["infer", "--server", &server.addr, "--keys", "keys", "--data", "data", "--out", "logits.enc"], d);
    let out = ok(&["decrypt-logits", "--keys", "keys", "--logits", "logits.enc", "--data", "data", "--out", "pred.txt"], d);
    assert!(out.contains(&format!("accuracy {enc:.4}")), "{out} vs {enc}");
    assert_eq!(std::fs::read_to_string(d.join("pred.txt")).unwrap().lines().count(), 18);
    assert!(ok(&["report", "--run", "run"], d).contains("Enc Accuracy"));

    // a server pinned to another profile refuses the session
    let strict = Server::start(&["--profile", "secure128"], d);
    let o = run(&["train", "--server", &strict.addr, "--keys", "keys", "--data", "data", "--epochs", "1"], d);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}
