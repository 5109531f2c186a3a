//! Hospital side: owns the keys and data, drives a session and answers refresh requests.

use std::io::{Read, Write};
use std::sync::Arc;
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::conn::Conn;
use super::frame::{codes, MsgType};
use super::message::{DataRole, EpochSummary, Message, TrainRequest, UploadBatch};
use crate::ckks::serialize::public_material_bytes;
use crate::ckks::{CkksContext, KeySet};
use crate::error::{Error, Result};
use crate::linalg::{unpack, PackedMatrix};
use crate::trainer::oracle::{accuracy, predict};
use crate::trainer::{pack_batches, pack_features, refresh_ciphertexts, EncryptedBatch, Hyperparams};

/// Encrypted uploads plus the labels that stay with the hospital.
#[derive(Clone, Debug)]
pub struct EncryptedDataset {
    pub train: Vec<EncryptedBatch>,
    pub val: Vec<PackedMatrix>,
    pub val_labels: Vec<usize>,
    pub test: Vec<PackedMatrix>,
    pub test_labels: Vec<usize>,
}

/// Plaintext splits, already standardized with the bias column.
#[derive(Clone, Debug)]
pub struct PlainSplits {
    pub train: (Array2<f64>, Vec<usize>),
    pub val: (Array2<f64>, Vec<usize>),
    pub test: (Array2<f64>, Vec<usize>),
}

impl EncryptedDataset {
    pub fn encrypt(ctx: &CkksContext, keys: &KeySet, data: &PlainSplits, hp: &Hyperparams, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let width = hp.frame_width();
        let (tx, ty) = &data.train;
        let train = pack_batches(ctx, tx, ty, hp.class_count, hp.batch_size, width, &keys.public, &mut rng)?;
        let mut features = |x: &Array2<f64>| -> Result<Vec<PackedMatrix>> {
            if x.nrows() == 0 {
                return Ok(Vec::new());
            }
            pack_features(ctx, x, width, &keys.public, &mut rng)
        };
        Ok(Self {
            train,
            val: features(&data.val.0)?,
            val_labels: data.val.1.clone(),
            test: features(&data.test.0)?,
            test_labels: data.test.1.clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct HospitalOptions {
    pub hyperparams: Hyperparams,
    pub init_seed: u64,
    /// Mixed into the randomness of refreshed encryptions.
    pub refresh_seed: u64,
    pub resume: bool,
    pub max_frame: u64,
    /// Abort after answering this many refresh requests.
    pub max_refreshes: Option<usize>,
}

impl HospitalOptions {
    pub fn new(hyperparams: Hyperparams) -> Self {
        Self {
            hyperparams,
            init_seed: 0,
            refresh_seed: 0,
            resume: false,
            max_frame: super::frame::DEFAULT_MAX_FRAME,
            max_refreshes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochOutcome {
    pub summary: EpochSummary,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SessionOutcome {
    /// Decrypted final weights (`feature_dim x class_count`).
    pub weights: Array2<f64>,
    pub epochs: Vec<EpochOutcome>,
    pub test_logits: Option<Array2<f64>>,
    pub test_accuracy: Option<f64>,
    pub refreshes: usize,
    pub train_seconds: f64,
}

fn unexpected(m: &Message) -> Error {
    Error::Protocol {
        code: codes::UNEXPECTED,
        detail: format!("unexpected {:?} message", m.msg_type()),
    }
}

/// Decrypts and stacks row blocks.
pub fn decrypt_blocks(ctx: &CkksContext, keys: &KeySet, blocks: &[PackedMatrix]) -> Result<Array2<f64>> {
    let parts = blocks.iter().map(|b| unpack(ctx, b, &keys.secret)).collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Layout(e.to_string()))
}

/// A hospital connection after the hello and key exchange.
pub struct Hospital<'k, S> {
    conn: Conn<S>,
    ctx: Arc<CkksContext>,
    keys: &'k KeySet,
}

impl<'k, S: Read + Write> Hospital<'k, S> {
    /// Negotiates parameters and provisions the public keys.
    pub fn connect(stream: S, ctx: &Arc<CkksContext>, keys: &'k KeySet, max_frame: u64) -> Result<Self> {
        let mut conn = Conn::new(stream, max_frame);
        conn.send(&Message::Hello {
            params: ctx.params().clone(),
        })?;
        match conn.expect()? {
            Message::Hello { params } if params.hash() == ctx.hash() => {}
            Message::Hello { .. } => return Err(Error::ParamsHashMismatch),
            m => return Err(unexpected(&m)),
        }
        conn.set_context(ctx.clone());
        let material = public_material_bytes(ctx, &keys.public, &keys.eval.relin, &keys.eval.rotations);
        conn.send(&Message::Keys { material })?;
        match conn.expect()? {
            Message::Ack(MsgType::Keys) => {}
            m => return Err(unexpected(&m)),
        }
        Ok(Self {
            conn,
            ctx: ctx.clone(),
            keys,
        })
    }

    fn upload(&mut self, role: DataRole, batches: Vec<UploadBatch>) -> Result<()> {
        self.conn.send(&Message::Upload { role, batches })?;
        match self.conn.expect()? {
            Message::Ack(MsgType::Upload) => Ok(()),
            m => Err(unexpected(&m)),
        }
    }

    pub fn upload_dataset(&mut self, data: &EncryptedDataset) -> Result<()> {
        let train = data
            .train
            .iter()
            .map(|b| UploadBatch {
                x: b.x.clone(),
                y: Some(b.y.clone()),
            })
            .collect();
        self.upload(DataRole::Train, train)?;
        if !data.val.is_empty() {
            let val = data.val.iter().map(|x| UploadBatch { x: x.clone(), y: None }).collect();
            self.upload(DataRole::Val, val)?;
        }
        Ok(())
    }

    /// Requests training and serves refreshes until the final report arrives.
    pub fn train(&mut self, opts: &HospitalOptions, val_labels: &[usize]) -> Result<(Array2<f64>, Vec<EpochOutcome>, usize)> {
        self.conn.send(&Message::Train(TrainRequest {
            hyperparams: opts.hyperparams.clone(),
            init_seed: opts.init_seed,
            resume: opts.resume,
        }))?;
        let mut epochs = Vec::new();
        let mut refreshes = 0;
        loop {
            match self.conn.expect()? {
                Message::RefreshRequest { id, cts } => {
                    if opts.max_refreshes.is_some_and(|m| refreshes >= m) {
                        return Err(Error::Refresh(format!("stopped after {refreshes} refreshes")));
                    }
                    let (ids, blobs): (Vec<u32>, Vec<_>) = cts.into_iter().unzip();
                    let fresh = refresh_ciphertexts(&self.ctx, &self.keys.secret, &self.keys.public, opts.refresh_seed, &blobs)?;
                    self.conn.send(&Message::RefreshResponse {
                        id,
                        cts: ids.into_iter().zip(fresh).collect(),
                    })?;
                    refreshes += 1;
                }
                Message::EpochReport {
                    summary,
                    val_logits,
                    weights,
                } => {
                    if summary.done {
                        let w = weights.ok_or_else(|| Error::Protocol {
                            code: codes::BAD_PAYLOAD,
                            detail: "final report without weights".into(),
                        })?;
                        return Ok((unpack(&self.ctx, &w, &self.keys.secret)?, epochs, refreshes));
                    }
                    let val_accuracy = if val_logits.is_empty() || val_labels.is_empty() {
                        None
                    } else {
                        let z = decrypt_blocks(&self.ctx, self.keys, &val_logits)?;
                        Some(accuracy(&predict(z.view()), val_labels))
                    };
                    epochs.push(EpochOutcome { summary, val_accuracy });
                }
                m => return Err(unexpected(&m)),
            }
        }
    }

    /// Encrypted inference with the model trained under these keys.
    pub fn infer(&mut self, x: &[PackedMatrix]) -> Result<Vec<PackedMatrix>> {
        self.conn.send(&Message::InferRequest { x: x.to_vec() })?;
        match self.conn.expect()? {
            Message::InferResponse { logits } if logits.len() == x.len() => Ok(logits),
            m => Err(unexpected(&m)),
        }
    }
}

/// Full workflow: provision, upload, train, then infer on the test split.
pub fn run_hospital_session<S: Read + Write>(
    stream: S,
    ctx: &Arc<CkksContext>,
    keys: &KeySet,
    data: &EncryptedDataset,
    opts: &HospitalOptions,
) -> Result<SessionOutcome> {
    let mut h = Hospital::connect(stream, ctx, keys, opts.max_frame)?;
    h.upload_dataset(data)?;
    let started = Instant::now();
    let (weights, epochs, refreshes) = h.train(opts, &data.val_labels)?;
    let train_seconds = started.elapsed().as_secs_f64();
    let (test_logits, test_accuracy) = if data.test.is_empty() {
        (None, None)
    } else {
        let z = decrypt_blocks(ctx, keys, &h.infer(&data.test)?)?;
        let acc = accuracy(&predict(z.view()), &data.test_labels);
        (Some(z), Some(acc))
    };
    Ok(SessionOutcome {
        weights,
        epochs,
        test_logits,
        test_accuracy,
        refreshes,
        train_seconds,
    })
}
