//! On-disk layout of key directories, encrypted datasets and run outputs.
//!
//! Key directory:
//! `params.bin` (canonical parameter bytes), `secret.key`, `public.key`,
//! `relin.key`, `rotation.keys` (all CKX1).
//!
//! Dataset directory:
//! `manifest.json`, `train.enc`, `val.enc`, `test.enc`, `stats.json`, `labels.json`,
//! and the standardized plaintext splits `{train,val,test}_plain.efv`
//! (bias column included) for plaintext baselines.
//! A `.enc` file is a `u32` block count followed by PMX1 blocks; `train.enc`
//! stores each batch as an `X` block then a `Y` block.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ckks::serialize::{
    evaluation_key_from_bytes, evaluation_key_to_bytes, peek_params_hash, public_key_from_bytes,
    public_key_to_bytes, rotation_keys_from_bytes, rotation_keys_to_bytes, secret_key_bytes, secret_key_from_bytes,
    Reader, HEADER_LEN,
};
use crate::ckks::{default_rotation_steps, CkksContext, CkksParams, EvalKeys, KeySet};
use crate::error::{Error, Result};
use crate::ingest::{FeatureFile, SplitSpec, Standardizer};
use crate::linalg::{read_packed, write_packed, PackedMatrix};
use crate::protocol::EncryptedDataset;
use crate::trainer::EncryptedBatch;

pub const PARAMS_FILE: &str = "params.bin";
pub const SECRET_KEY_FILE: &str = "secret.key";
pub const PUBLIC_KEY_FILE: &str = "public.key";
pub const RELIN_KEY_FILE: &str = "relin.key";
pub const ROTATION_KEYS_FILE: &str = "rotation.keys";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STATS_FILE: &str = "stats.json";
pub const LABELS_FILE: &str = "labels.json";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Byte sizes of the key files, derived from the parameters alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeyFileSizes {
    pub secret: u64,
    pub public: u64,
    pub relin: u64,
    pub rotations: u64,
}

impl KeyFileSizes {
    pub fn for_params(p: &CkksParams) -> Self {
        let n = p.degree() as u64;
        let base = p.max_level() as u64;
        let full = base + p.special_primes.len() as u64;
        let object = |polys: u64, level: u64| HEADER_LEN as u64 + polys * level * n * 8;
        let digits = base.div_ceil(p.digit_size() as u64);
        let relin = object(2 * digits, full);
        let steps = default_rotation_steps(p.slot_count()).len() as u64;
        Self {
            secret: object(1, full),
            public: object(2, base),
            relin,
            rotations: 4 + steps * (4 + relin),
        }
    }

    pub fn total(&self) -> u64 {
        self.secret + self.public + self.relin + self.rotations
    }
}

pub fn write_keys(dir: &Path, ctx: &CkksContext, keys: &KeySet) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(PARAMS_FILE), ctx.params().canonical_bytes())?;
    std::fs::write(dir.join(SECRET_KEY_FILE), secret_key_bytes(ctx, &keys.secret))?;
    let mut buf = Vec::new();
    public_key_to_bytes(ctx, &keys.public, &mut buf);
    std::fs::write(dir.join(PUBLIC_KEY_FILE), &buf)?;
    buf.clear();
    evaluation_key_to_bytes(ctx, &keys.eval.relin, &mut buf);
    std::fs::write(dir.join(RELIN_KEY_FILE), &buf)?;
    buf.clear();
    rotation_keys_to_bytes(ctx, &keys.eval.rotations, &mut buf);
    std::fs::write(dir.join(ROTATION_KEYS_FILE), &buf)?;
    Ok(())
}

/// Parameters recorded in a key directory.
pub fn load_params(dir: &Path) -> Result<CkksParams> {
    CkksParams::from_canonical_bytes(&read(&dir.join(PARAMS_FILE))?)
}

/// Loads every key and checks each file against `params.bin`.
pub fn load_keys(dir: &Path) -> Result<(Arc<CkksContext>, KeySet)> {
    let ctx = CkksContext::new(load_params(dir)?)?;
    let file = |name: &str| -> Result<Vec<u8>> {
        let bytes = read(&dir.join(name))?;
        if peek_params_hash(&bytes)? != ctx.hash() {
            return Err(Error::ParamsHashMismatch);
        }
        Ok(bytes)
    };
    let secret = secret_key_from_bytes(&ctx, &file(SECRET_KEY_FILE)?)?;
    let public = public_key_from_bytes(&ctx, &file(PUBLIC_KEY_FILE)?)?;
    let relin = evaluation_key_from_bytes(&ctx, &file(RELIN_KEY_FILE)?)?;
    let rot_bytes = read(&dir.join(ROTATION_KEYS_FILE))?;
    if rot_bytes.len() > 4 + HEADER_LEN && peek_params_hash(&rot_bytes[8..])? != ctx.hash() {
        return Err(Error::ParamsHashMismatch);
    }
    let rotations = rotation_keys_from_bytes(&ctx, &rot_bytes)?;
    Ok((
        ctx,
        KeySet {
            secret,
            public,
            eval: EvalKeys { relin, rotations },
        },
    ))
}

/// Describes an encrypted dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub params_hash: String,
    /// Includes the bias column.
    pub feature_dim: usize,
    pub classes: usize,
    pub batch_size: usize,
    pub frame_width: usize,
    pub split: SplitSpec,
    pub split_seed: u64,
    pub train_rows: usize,
    pub val_rows: usize,
    pub test_rows: usize,
    pub source: String,
}

impl Manifest {
    pub fn check_params(&self, ctx: &CkksContext) -> Result<()> {
        if self.params_hash != hex(&ctx.hash()) {
            return Err(Error::ParamsHashMismatch);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Labels {
    val: Vec<usize>,
    test: Vec<usize>,
}

fn blocks_to_bytes(ctx: &CkksContext, blocks: &[&PackedMatrix]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        write_packed(ctx, b, &mut out);
    }
    out
}

pub fn write_blocks(path: &Path, ctx: &CkksContext, blocks: &[PackedMatrix]) -> Result<()> {
    let refs: Vec<&PackedMatrix> = blocks.iter().collect();
    std::fs::write(path, blocks_to_bytes(ctx, &refs))?;
    Ok(())
}

pub fn read_blocks(path: &Path, ctx: &CkksContext) -> Result<Vec<PackedMatrix>> {
    let bytes = read(path)?;
    let mut r = Reader::new(&bytes);
    let count = r.u32()? as usize;
    let blocks = (0..count).map(|_| read_packed(ctx, &mut r)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(blocks)
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = String::from_utf8(read(path)?).map_err(|_| Error::format(format!("{} is not UTF-8", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

fn plain_file(x: &Array2<f64>, labels: &[usize], classes: usize) -> Result<FeatureFile> {
    FeatureFile::new(
        x.mapv(|v| v as f32),
        labels.iter().map(|&l| l as u16).collect(),
        classes as u16,
    )
}

/// Plaintext side of a dataset directory.
pub struct PlainDataset {
    pub stats: Standardizer,
    pub train: FeatureFile,
    /// `None` for an empty split.
    pub val: Option<FeatureFile>,
    pub test: Option<FeatureFile>,
}

/// Writes a dataset directory; every file is serialized before anything touches disk.
pub fn write_dataset(
    dir: &Path,
    ctx: &CkksContext,
    manifest: &Manifest,
    data: &EncryptedDataset,
    plain: &PlainDataset,
) -> Result<()> {
    let train: Vec<&PackedMatrix> = data.train.iter().flat_map(|b| [&b.x, &b.y]).collect();
    let files: Vec<(String, Vec<u8>)> = vec![
        (MANIFEST_FILE.into(), json(manifest).into_bytes()),
        (STATS_FILE.into(), plain.stats.to_json().into_bytes()),
        (
            LABELS_FILE.into(),
            json(&Labels {
                val: data.val_labels.clone(),
                test: data.test_labels.clone(),
            })
            .into_bytes(),
        ),
        ("train.enc".into(), blocks_to_bytes(ctx, &train)),
        ("val.enc".into(), blocks_to_bytes(ctx, &data.val.iter().collect::<Vec<_>>())),
        ("test.enc".into(), blocks_to_bytes(ctx, &data.test.iter().collect::<Vec<_>>())),
        ("train_plain.efv".into(), plain.train.to_bytes()),
    ];
    let mut files = files;
    for (name, f) in [("val_plain.efv", &plain.val), ("test_plain.efv", &plain.test)] {
        if let Some(f) = f {
            files.push((name.into(), f.to_bytes()));
        }
    }
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

pub fn plain_dataset(
    stats: Standardizer,
    splits: &crate::protocol::PlainSplits,
    classes: usize,
) -> Result<PlainDataset> {
    let part = |p: &(Array2<f64>, Vec<usize>)| -> Result<Option<FeatureFile>> {
        if p.0.nrows() == 0 {
            return Ok(None);
        }
        plain_file(&p.0, &p.1, classes).map(Some)
    };
    Ok(PlainDataset {
        stats,
        train: plain_file(&splits.train.0, &splits.train.1, classes)?,
        val: part(&splits.val)?,
        test: part(&splits.test)?,
    })
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    from_json(&dir.join(MANIFEST_FILE))
}

pub fn read_stats(dir: &Path) -> Result<Standardizer> {
    Standardizer::from_json(
        &String::from_utf8(read(&dir.join(STATS_FILE))?).map_err(|_| Error::format("stats file is not UTF-8"))?,
    )
}

/// Loads the encrypted splits and the hospital-side labels.
pub fn read_dataset(dir: &Path, ctx: &CkksContext) -> Result<(Manifest, EncryptedDataset)> {
    let manifest = read_manifest(dir)?;
    manifest.check_params(ctx)?;
    let labels: Labels = from_json(&dir.join(LABELS_FILE))?;
    let train_blocks = read_blocks(&dir.join("train.enc"), ctx)?;
    if train_blocks.len() % 2 != 0 {
        return Err(Error::format("train.enc must hold X,Y block pairs"));
    }
    let mut it = train_blocks.into_iter();
    let mut train = Vec::new();
    while let (Some(x), Some(y)) = (it.next(), it.next()) {
        train.push(EncryptedBatch { x, y });
    }
    let val = read_blocks(&dir.join("val.enc"), ctx)?;
    let test = read_blocks(&dir.join("test.enc"), ctx)?;
    let rows = |b: &[PackedMatrix]| b.iter().map(|m| m.rows()).sum::<usize>();
    if rows(&val) != labels.val.len() || rows(&test) != labels.test.len() {
        return Err(Error::format("label count does not match encrypted rows"));
    }
    Ok((
        manifest,
        EncryptedDataset {
            train,
            val,
            val_labels: labels.val,
            test,
            test_labels: labels.test,
        },
    ))
}

/// Reads one standardized plaintext split (`train`, `val` or `test`).
pub fn read_plain_split(dir: &Path, name: &str) -> Result<FeatureFile> {
    FeatureFile::read(&dir.join(format!("{name}_plain.efv")))
}

pub fn params_hash_hex(ctx: &CkksContext) -> String {
    hex(&ctx.hash())
}

/// Hospital-side labels of the `val` or `test` split.
pub fn read_labels(dir: &Path, split: &str) -> Result<Vec<usize>> {
    let labels: Labels = from_json(&dir.join(LABELS_FILE))?;
    match split {
        "val" => Ok(labels.val),
        "test" => Ok(labels.test),
        other => Err(Error::InvalidParameter(format!("no labels for split '{other}'"))),
    }
}
