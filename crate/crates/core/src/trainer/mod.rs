//! Fine-tuning a softmax classifier head on encrypted features with Nesterov momentum.

mod checkpoint;
mod data;
mod nag;
pub mod oracle;
mod refresh;

use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{ApproxSoftmax, SoftmaxConfig};
use crate::ckks::{CkksContext, PublicKey};
use crate::error::{Error, Result};
use crate::linalg::{plan_class_replicated, Layout, MatrixOps, PackedMatrix};

pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, Checkpoint};
pub use data::{pack_batches, pack_features, EncryptedBatch};
pub use nag::{nag_momentum_schedule, step_momentum};
pub use refresh::{refresh_ciphertexts, LocalRefresher, RefreshChannel};

/// Training settings shared by the encrypted trainer and the plaintext oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Feature count including the constant bias column.
    pub feature_dim: usize,
    pub class_count: usize,
    pub softmax: SoftmaxConfig,
    pub seed: u64,
}

impl Hyperparams {
    pub fn new(feature_dim: usize, class_count: usize) -> Result<Self> {
        let hp = Self {
            epochs: 10,
            learning_rate: 0.1,
            batch_size: 64,
            feature_dim,
            class_count,
            softmax: SoftmaxConfig::for_classes(class_count)?,
            seed: 0,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn from_preset(preset: Preset, feature_dim: usize) -> Result<Self> {
        let mut hp = Self::new(feature_dim, preset.classes())?;
        hp.epochs = preset.epochs();
        hp.learning_rate = preset.learning_rate();
        hp.batch_size = preset.batch_size();
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        self.softmax.validate()?;
        if self.batch_size == 0
            || !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || self.feature_dim == 0
            || self.class_count < 2
            || self.softmax.classes != self.class_count
        {
            return Err(Error::InvalidParameter(format!("invalid hyperparameters {self:?}")));
        }
        Ok(())
    }

    /// Frame width shared by features, labels and weights.
    pub fn frame_width(&self) -> usize {
        self.feature_dim.max(self.class_count).next_power_of_two()
    }
}

/// Per-dataset training settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    DermaMnist,
    BloodMnist,
    OrganAMnist,
    OrganCMnist,
    OrganSMnist,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::DermaMnist,
        Preset::BloodMnist,
        Preset::OrganAMnist,
        Preset::OrganCMnist,
        Preset::OrganSMnist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::DermaMnist => "dermamnist",
            Preset::BloodMnist => "bloodmnist",
            Preset::OrganAMnist => "organamnist",
            Preset::OrganCMnist => "organcmnist",
            Preset::OrganSMnist => "organsmnist",
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Preset::DermaMnist => 7,
            Preset::BloodMnist => 8,
            _ => 11,
        }
    }

    pub fn epochs(self) -> usize {
        match self {
            Preset::DermaMnist => 12,
            Preset::BloodMnist => 18,
            Preset::OrganAMnist => 6,
            Preset::OrganCMnist => 17,
            Preset::OrganSMnist => 15,
        }
    }

    pub fn learning_rate(self) -> f64 {
        match self {
            Preset::BloodMnist => 0.1,
            _ => 0.01,
        }
    }

    pub fn batch_size(self) -> usize {
        512
    }

    /// Reported plaintext test accuracy, where published.
    pub fn reference_accuracy(self) -> Option<f64> {
        match self {
            Preset::DermaMnist => Some(0.7616),
            Preset::BloodMnist => Some(0.9117),
            _ => None,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown preset {s}")))
    }
}

/// Encrypted weights `W`, look-ahead point `V`, previous weights and the momentum state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub w: PackedMatrix,
    pub v: PackedMatrix,
    pub w_prev: PackedMatrix,
    pub lambda: f64,
    pub step: u64,
}

/// Zero weights encrypted at the top level; deterministic under `seed`.
pub fn init_model(ctx: &CkksContext, hp: &Hyperparams, pk: &PublicKey, seed: u64) -> Result<ModelState> {
    hp.validate()?;
    let plan = plan_class_replicated(hp.feature_dim, hp.class_count, ctx.slot_count(), hp.frame_width())?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let zeros = ndarray::Array2::zeros((hp.feature_dim, hp.class_count));
    let w = crate::linalg::pack(ctx, &zeros, &plan, Layout::ClassReplicated, pk, ctx.max_level(), &mut rng)?;
    Ok(ModelState {
        v: w.clone(),
        w_prev: w.clone(),
        w,
        lambda: 0.0,
        step: 0,
    })
}

/// One epoch of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub refreshes: usize,
    pub seconds: f64,
}

/// Settings, log and final state of a training run.
#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub hyperparams: Hyperparams,
    pub log: Vec<EpochLog>,
    pub state: ModelState,
}

/// Cloud-side trainer: evaluation keys, the configured softmax and hyperparameters.
pub struct EncryptedTrainer {
    ops: MatrixOps,
    softmax: ApproxSoftmax,
    hp: Hyperparams,
}

struct Counted<'a> {
    inner: Option<&'a mut dyn RefreshChannel>,
    count: usize,
}

impl Counted<'_> {
    /// Returns `pm` if it has at least `needed` levels, otherwise a refreshed copy.
    fn ensure(&mut self, pm: PackedMatrix, needed: usize) -> Result<PackedMatrix> {
        if pm.level() >= needed {
            return Ok(pm);
        }
        let Some(ch) = self.inner.as_deref_mut() else {
            return Err(Error::LevelExhausted {
                needed,
                available: pm.level(),
            });
        };
        let fresh = ch.refresh(&pm)?;
        self.count += 1;
        if fresh.level() < needed || fresh.plan() != pm.plan() || fresh.layout() != pm.layout() {
            return Err(Error::Refresh("refreshed matrix does not match the request".into()));
        }
        Ok(fresh)
    }

    fn refresh(&mut self, pm: &PackedMatrix) -> Result<PackedMatrix> {
        let ch = self
            .inner
            .as_deref_mut()
            .ok_or_else(|| Error::Refresh("no refresh channel".into()))?;
        let fresh = ch.refresh(pm)?;
        self.count += 1;
        if fresh.plan() != pm.plan() || fresh.layout() != pm.layout() {
            return Err(Error::Refresh("refreshed matrix does not match the request".into()));
        }
        Ok(fresh)
    }
}

/// Levels left after the gradient for the weight update.
const UPDATE_LEVELS: usize = 1;
/// Levels consumed by each encrypted matrix product.
const MATMUL_LEVELS: usize = 2;

impl EncryptedTrainer {
    pub fn new(ops: MatrixOps, hp: Hyperparams) -> Result<Self> {
        hp.validate()?;
        let softmax = ApproxSoftmax::new(hp.softmax.clone())?;
        Ok(Self { ops, softmax, hp })
    }

    pub fn ops(&self) -> &MatrixOps {
        &self.ops
    }

    pub fn softmax(&self) -> &ApproxSoftmax {
        &self.softmax
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    /// `factor * X^T (softmax(X V) - Y)`, refreshing intermediates through `ch` when levels run out.
    fn scaled_gradient(
        &self,
        batch: &EncryptedBatch,
        v: &PackedMatrix,
        factor: f64,
        ch: &mut Counted<'_>,
    ) -> Result<PackedMatrix> {
        let ops = &self.ops;
        let v = ch.ensure(v.clone(), MATMUL_LEVELS)?;
        let z = ops.matmul(&batch.x, &v)?;
        let z = ch.ensure(z, self.softmax.config().depth() + 1)?;
        let p = self.softmax.eval_packed(ops, &z)?;
        let p = ch.ensure(p, MATMUL_LEVELS + UPDATE_LEVELS)?;
        let y = ops.drop_to_level(&batch.y, p.level())?;
        let e = ops.sub(&p, &y)?;
        ops.matmul_at_b(&batch.x, &e, factor)
    }

    /// Mean cross-entropy gradient `(1/n) X^T (softmax(X V) - Y)` of one batch.
    ///
    /// Without a refresh channel, running out of levels is an error.
    pub fn encrypted_grad(
        &self,
        batch: &EncryptedBatch,
        v: &PackedMatrix,
        refresh: Option<&mut dyn RefreshChannel>,
    ) -> Result<PackedMatrix> {
        let mut ch = Counted { inner: refresh, count: 0 };
        self.scaled_gradient(batch, v, 1.0 / batch.x.rows() as f64, &mut ch)
    }

    fn step_inner(&self, state: &ModelState, batch: &EncryptedBatch, ch: &mut Counted<'_>) -> Result<ModelState> {
        let ops = &self.ops;
        let (lambda, gamma) = step_momentum(state.lambda);
        let neg_grad = self.scaled_gradient(batch, &state.v, -self.hp.learning_rate / batch.x.rows() as f64, ch)?;
        let neg_grad = ch.ensure(neg_grad, UPDATE_LEVELS)?;
        let w_new = ops.add(&ops.drop_to_level(&state.v, neg_grad.level())?, &neg_grad)?;
        let mixed = ops.scalar_mult(&w_new, 1.0 - gamma)?;
        let eval = ops.evaluator();
        let old = ops.map_tiles(&state.w, |t| eval.mult_const_to(t, gamma, mixed.level()))?;
        let v_new = ops.add(&mixed, &old)?;
        let (w, v) = if ch.inner.is_some() {
            (ch.refresh(&w_new)?, ch.refresh(&v_new)?)
        } else {
            (w_new, v_new)
        };
        Ok(ModelState {
            w,
            v,
            w_prev: state.w.clone(),
            lambda,
            step: state.step + 1,
        })
    }

    /// One momentum step: `W' = V - lr * G(V)`, `V' = (1 - gamma) W' + gamma W`.
    ///
    /// With a channel, `W'` and `V'` come back refreshed to the top level.
    pub fn nag_step(
        &self,
        state: &ModelState,
        batch: &EncryptedBatch,
        refresh: Option<&mut dyn RefreshChannel>,
    ) -> Result<ModelState> {
        let mut ch = Counted { inner: refresh, count: 0 };
        self.step_inner(state, batch, &mut ch)
    }

    /// Runs the remaining steps of `epochs x batches`, resuming from `state.step`.
    ///
    /// `state` is replaced after each completed step, so after an error it holds the
    /// last good state. `on_epoch` sees each finished epoch.
    pub fn train(
        &self,
        state: &mut ModelState,
        batches: &[EncryptedBatch],
        refresh: &mut dyn RefreshChannel,
        mut on_epoch: impl FnMut(&EpochLog, &ModelState) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        if batches.is_empty() {
            return Err(Error::InvalidParameter("no training batches".into()));
        }
        let per_epoch = batches.len() as u64;
        let total = per_epoch * self.hp.epochs as u64;
        let mut ch = Counted {
            inner: Some(refresh),
            count: 0,
        };
        let mut log = Vec::new();
        while state.step < total {
            let epoch = (state.step / per_epoch) as usize;
            let started = Instant::now();
            let before = ch.count;
            let mut steps = 0;
            while state.step < per_epoch * (epoch as u64 + 1) {
                let batch = &batches[(state.step % per_epoch) as usize];
                *state = self.step_inner(state, batch, &mut ch)?;
                steps += 1;
            }
            let entry = EpochLog {
                epoch,
                steps,
                refreshes: ch.count - before,
                seconds: started.elapsed().as_secs_f64(),
            };
            on_epoch(&entry, state)?;
            log.push(entry);
        }
        Ok(log)
    }
}

/// Encrypted logits `X W`; the key holder applies arg-max after decryption.
pub fn encrypted_infer(ops: &MatrixOps, w: &PackedMatrix, x: &PackedMatrix) -> Result<PackedMatrix> {
    ops.matmul(x, w)
}
