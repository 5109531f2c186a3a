use std::io::Write as _;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use blindtune::ckks::{keygen, CkksContext, CkksParams, SecurityProfile};
use blindtune::ingest::{gen_blobs, prepare, FeatureFile, RunReport, SplitSpec};
use blindtune::protocol::{
    codes, decrypt_blocks, serve, EncryptedDataset, Hospital, HospitalOptions, PlainSplits, Registry, ServerConfig,
};
use blindtune::store::{self, Manifest};
use blindtune::trainer::oracle::{accuracy, plaintext_train, predict, SoftmaxKind};
use blindtune::trainer::{Hyperparams, Preset};
use blindtune::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blindtune", version, about = "Encrypted fine-tuning of a softmax classifier head")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key directory.
    Keygen {
        #[arg(long, default_value = "test")]
        profile: SecurityProfile,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic Gaussian-mixture feature file.
    GenBlobs {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split, standardize and encrypt a feature file.
    EncryptFeatures(EncryptArgs),
    /// Run the cloud side.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7700")]
        listen: String,
        /// Refuse sessions under any other profile.
        #[arg(long)]
        profile: Option<SecurityProfile>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 2048)]
        max_frame_mb: u64,
    },
    /// Drive an encrypted training session against a server.
    Train(TrainArgs),
    /// Encrypted inference with the model trained under these keys.
    Infer {
        #[arg(long)]
        server: String,
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decrypt logits, take the argmax and score against the stored labels.
    DecryptLogits {
        #[arg(long)]
        keys: PathBuf,
        #[arg(long)]
        logits: PathBuf,
        /// Dataset directory holding the labels.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Write one predicted class per line.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the report of a training run.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct EncryptArgs {
    #[arg(long = "in", conflicts_with = "from_csv", required_unless_present = "from_csv")]
    input: Option<PathBuf>,
    /// Lines of `label,f1,...,fd`; converted to EFV1 first.
    #[arg(long)]
    from_csv: Option<PathBuf>,
    /// Class count for CSV input; defaults to the largest label plus one.
    #[arg(long)]
    classes: Option<u16>,
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    batch: usize,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.7,0.1,0.2")]
    split: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    server: String,
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Run directory for weights and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset preset; explicit flags override it.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    #[arg(long, default_value_t = 0)]
    refresh_seed: u64,
    /// Continue from the server's last epoch checkpoint.
    #[arg(long)]
    resume: bool,
    #[arg(long, default_value_t = 2048)]
    max_frame_mb: u64,
    /// Print the resolved hyperparameters and exit.
    #[arg(long)]
    dry_run: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidParameter(_) => 1,
            Error::Io(_) | Error::Format(_) => 2,
            Error::ParamsHashMismatch => 4,
            Error::Protocol { code, .. } if *code == codes::PARAMS_MISMATCH => 4,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type Outcome = std::result::Result<(), Failure>;

fn connect(addr: &str) -> std::result::Result<TcpStream, Failure> {
    TcpStream::connect(addr).map_err(|e| Failure {
        code: 3,
        message: format!("cannot connect to {addr}: {e}"),
    })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    std::fs::write(path, bytes).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    })
}

fn parse_split(s: &str) -> std::result::Result<SplitSpec, Failure> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("bad --split '{s}'")))?;
    match parts[..] {
        [a, b, c] => SplitSpec::new(a, b, c).map_err(Failure::from),
        _ => Err(usage("--split takes three fractions")),
    }
}

fn cmd_keygen(profile: SecurityProfile, out: &Path, seed: u64) -> Outcome {
    let ctx = CkksContext::new(CkksParams::for_profile(profile))?;
    let started = Instant::now();
    let keys = keygen(&ctx, seed)?;
    store::write_keys(out, &ctx, &keys)?;
    println!(
        "wrote {} keys to {} in {:.1}s (params {})",
        profile.name(),
        out.display(),
        started.elapsed().as_secs_f64(),
        store::params_hash_hex(&ctx)
    );
    Ok(())
}

fn cmd_gen_blobs(classes: usize, dim: usize, rows: usize, seed: u64, out: &Path) -> Outcome {
    let f = gen_blobs(classes, dim, rows, seed)?;
    f.write(out)?;
    println!("wrote {rows} rows x {dim} features, {classes} classes to {}", out.display());
    Ok(())
}

fn cmd_encrypt(a: &EncryptArgs) -> Outcome {
    let spec = parse_split(&a.split)?;
    let (file, source) = match (&a.input, &a.from_csv) {
        (Some(p), _) => (FeatureFile::read(p)?, p.display().to_string()),
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure {
                code: 2,
                message: format!("{}: {e}", p.display()),
            })?;
            (FeatureFile::from_csv(&text, a.classes)?, p.display().to_string())
        }
        (None, None) => return Err(usage("one of --in or --from-csv is required")),
    };
    let (ctx, keys) = store::load_keys(&a.keys)?;
    let prepared = prepare(&file, spec, a.seed)?;
    let classes = file.classes as usize;
    let mut hp = Hyperparams::new(prepared.train.0.ncols(), classes)?;
    hp.batch_size = a.batch;
    hp.validate()?;
    let splits = PlainSplits {
        train: prepared.train,
        val: prepared.val,
        test: prepared.test,
    };
    let data = EncryptedDataset::encrypt(&ctx, &keys, &splits, &hp, a.seed)?;
    let manifest = Manifest {
        params_hash: store::params_hash_hex(&ctx),
        feature_dim: hp.feature_dim,
        classes,
        batch_size: hp.batch_size,
        frame_width: hp.frame_width(),
        split: spec,
        split_seed: a.seed,
        train_rows: splits.train.0.nrows(),
        val_rows: splits.val.0.nrows(),
        test_rows: splits.test.0.nrows(),
        source,
    };
    let plain = store::plain_dataset(prepared.stats, &splits, classes)?;
    store::write_dataset(&a.out, &ctx, &manifest, &data, &plain)?;
    if a.from_csv.is_some() {
        file.write(&a.out.join("source.efv"))?;
    }
    println!(
        "encrypted {}/{}/{} rows ({} batches) into {}",
        manifest.train_rows,
        manifest.val_rows,
        manifest.test_rows,
        data.train.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_serve(listen: &str, profile: Option<SecurityProfile>, checkpoint_dir: Option<PathBuf>, max_frame_mb: u64) -> Outcome {
    if let Some(dir) = &checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
    }
    let listener = TcpListener::bind(listen).map_err(|e| Failure {
        code: 2,
        message: format!("cannot listen on {listen}: {e}"),
    })?;
    let config = ServerConfig {
        profile,
        max_frame: max_frame_mb << 20,
        checkpoint_dir,
    };
    println!("listening on {}", listener.local_addr().map_err(Error::from)?);
    let _ = std::io::stdout().flush();
    serve(listener, Arc::new(config), Arc::new(Registry::default()));
    Ok(())
}

fn resolve_hyperparams(a: &TrainArgs, manifest: &Manifest) -> std::result::Result<Hyperparams, Failure> {
    let mut hp = match a.preset {
        Some(p) => {
            if p.classes() != manifest.classes {
                return Err(usage(format!(
                    "preset {} has {} classes, data has {}",
                    p.name(),
                    p.classes(),
                    manifest.classes
                )));
            }
            Hyperparams::from_preset(p, manifest.feature_dim)?
        }
        None => Hyperparams::new(manifest.feature_dim, manifest.classes)?,
    };
    if let Some(e) = a.epochs {
        hp.epochs = e;
    }
    if let Some(lr) = a.lr {
        hp.learning_rate = lr;
    }
    hp.batch_size = a.batch.unwrap_or(manifest.batch_size);
    if hp.batch_size != manifest.batch_size {
        return Err(usage(format!(
            "data was packed with batch {}, not {}; rerun encrypt-features",
            manifest.batch_size, hp.batch_size
        )));
    }
    hp.validate()?;
    Ok(hp)
}

fn cmd_train(a: &TrainArgs) -> Outcome {
    let manifest = store::read_manifest(&a.data)?;
    let hp = resolve_hyperparams(a, &manifest)?;
    if a.dry_run {
        println!("{}", serde_json::to_string_pretty(&hp).expect("hyperparameters serialize"));
        return Ok(());
    }
    let (ctx, keys) = store::load_keys(&a.keys)?;
    let (_, data) = store::read_dataset(&a.data, &ctx)?;
    let mut opts = HospitalOptions::new(hp.clone());
    opts.init_seed = a.init_seed;
    opts.refresh_seed = a.refresh_seed;
    opts.resume = a.resume;
    opts.max_frame = a.max_frame_mb << 20;

    let mut h = Hospital::connect(connect(&a.server)?, &ctx, &keys, opts.max_frame)?;
    h.upload_dataset(&data)?;
    let started = Instant::now();
    let (weights, epochs, refreshes) = h.train(&opts, &data.val_labels)?;
    let seconds = started.elapsed().as_secs_f64();
    for e in &epochs {
        let val = e.val_accuracy.map_or_else(|| "-".into(), |v| format!("{:.2}%", v * 100.0));
        println!(
            "epoch {}/{}: {} steps, {} refreshes, {:.1}s, val {val}",
            e.summary.log.epoch + 1,
            e.summary.total_epochs,
            e.summary.log.steps,
            e.summary.log.refreshes,
            e.summary.log.seconds
        );
    }
    let enc_accuracy = if data.test.is_empty() {
        None
    } else {
        let z = decrypt_blocks(&ctx, &keys, &h.infer(&data.test)?)?;
        Some(accuracy(&predict(z.view()), &data.test_labels))
    };
    let unenc_accuracy = match store::read_plain_split(&a.data, "test") {
        Ok(test) => {
            let train = store::read_plain_split(&a.data, "train")?;
            let (model, _) = plaintext_train(&train.features_f64(), &train.labels_usize(), &hp, &SoftmaxKind::Exact);
            let z = test.features_f64().dot(&model.w);
            Some(accuracy(&predict(z.view()), &test.labels_usize()))
        }
        Err(_) => None,
    };
    let report = RunReport {
        dataset: a.preset.map_or_else(|| manifest.source.clone(), |p| p.name().to_string()),
        classes: hp.class_count,
        epochs: hp.epochs,
        learning_rate: hp.learning_rate,
        batch_size: hp.batch_size,
        profile: ctx.params().profile.name().to_string(),
        enc_train_seconds: seconds,
        enc_accuracy,
        unenc_accuracy,
        refreshes,
    };
    print!("{}", report.to_text());
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out).map_err(Error::from)?;
        let rows: Vec<Vec<f64>> = weights.rows().into_iter().map(|r| r.to_vec()).collect();
        write_file(&out.join("weights.json"), serde_json::to_string(&rows).expect("weights serialize"))?;
        write_file(&out.join("report.txt"), report.to_text())?;
        write_file(&out.join("report.json"), report.to_json())?;
    }
    Ok(())
}

fn split_blocks(data: &Path, ctx: &CkksContext, split: &str) -> std::result::Result<Vec<blindtune::linalg::PackedMatrix>, Failure> {
    match split {
        "val" | "test" => {
            store::read_manifest(data)?.check_params(ctx)?;
            Ok(store::read_blocks(&data.join(format!("{split}.enc")), ctx)?)
        }
        other => Err(usage(format!("--split must be val or test, not '{other}'"))),
    }
}

fn cmd_infer(server: &str, keys_dir: &Path, data: &Path, split: &str, out: &Path) -> Outcome {
    let (ctx, keys) = store::load_keys(keys_dir)?;
    let x = split_blocks(data, &ctx, split)?;
    let mut h = Hospital::connect(connect(server)?, &ctx, &keys, blindtune::protocol::frame::DEFAULT_MAX_FRAME)?;
    let logits = h.infer(&x)?;
    store::write_blocks(out, &ctx, &logits)?;
    println!("wrote encrypted logits for {} rows to {}", x.iter().map(|m| m.rows()).sum::<usize>(), out.display());
    Ok(())
}

fn cmd_decrypt(keys_dir: &Path, logits: &Path, data: Option<&Path>, split: &str, out: Option<&Path>) -> Outcome {
    let (ctx, keys) = store::load_keys(keys_dir)?;
    let blocks = store::read_blocks(logits, &ctx)?;
    let z = decrypt_blocks(&ctx, &keys, &blocks)?;
    let pred = predict(z.view());
    if let Some(out) = out {
        let text: String = pred.iter().map(|p| format!("{p}\n")).collect();
        write_file(out, text)?;
    }
    match data {
        Some(dir) => {
            let labels = store::read_labels(dir, split)?;
            if labels.len() != pred.len() {
                return Err(usage(format!("{} logits rows, {} labels", pred.len(), labels.len())));
            }
            println!("accuracy {:.4} over {} rows", accuracy(&pred, &labels), pred.len());
        }
        None => println!("decrypted {} rows", pred.len()),
    }
    Ok(())
}

fn cmd_report(run: &Path, json: bool) -> Outcome {
    let path = run.join("report.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    })?;
    let report: RunReport = serde_json::from_str(&text).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    })?;
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Keygen { profile, out, seed } => cmd_keygen(profile, &out, seed),
        Command::GenBlobs {
            classes,
            dim,
            rows,
            seed,
            out,
        } => cmd_gen_blobs(classes, dim, rows, seed, &out),
        Command::EncryptFeatures(a) => cmd_encrypt(&a),
        Command::Serve {
            listen,
            profile,
            checkpoint_dir,
            max_frame_mb,
        } => cmd_serve(&listen, profile, checkpoint_dir, max_frame_mb),
        Command::Train(a) => cmd_train(&a),
        Command::Infer {
            server,
            keys,
            data,
            split,
            out,
        } => cmd_infer(&server, &keys, &data, &split, &out),
        Command::DecryptLogits {
            keys,
            logits,
            data,
            split,
            out,
        } => cmd_decrypt(&keys, &logits, data.as_deref(), &split, out.as_deref()),
        Command::Report { run, json } => cmd_report(&run, json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
