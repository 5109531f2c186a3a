//! Plaintext reference trainer running the same algorithm as the encrypted one.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::nag::step_momentum;
use super::Hyperparams;
use crate::approx::{softmax_exact, ApproxSoftmax};

/// Softmax used by the plaintext trainer.
#[derive(Clone, Debug)]
pub enum SoftmaxKind {
    Exact,
    Approximate(Box<ApproxSoftmax>),
}

impl SoftmaxKind {
    pub fn apply(&self, logits: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(logits.raw_dim());
        for (i, row) in logits.rows().into_iter().enumerate() {
            let r = row.to_vec();
            let p = match self {
                SoftmaxKind::Exact => softmax_exact(&r),
                SoftmaxKind::Approximate(s) => s.eval_plain(&r),
            };
            out.row_mut(i).assign(&ndarray::Array1::from(p));
        }
        out
    }
}

/// Plaintext weights and momentum state.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainModel {
    pub w: Array2<f64>,
    pub v: Array2<f64>,
    pub lambda: f64,
    pub step: u64,
}

impl PlainModel {
    pub fn zeros(features: usize, classes: usize) -> Self {
        Self {
            w: Array2::zeros((features, classes)),
            v: Array2::zeros((features, classes)),
            lambda: 0.0,
            step: 0,
        }
    }
}

/// One-hot rows for `labels`.
pub fn one_hot(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        y[[i, l]] = 1.0;
    }
    y
}

/// `(1/n) X^T (softmax(X W) - Y)`.
pub fn gradient(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, w: &Array2<f64>, sm: &SoftmaxKind) -> Array2<f64> {
    let p = sm.apply(x.dot(w).view());
    x.t().dot(&(p - y)) / x.nrows() as f64
}

/// Mean cross-entropy with the exact softmax.
pub fn cross_entropy(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, w: &Array2<f64>) -> f64 {
    let p = SoftmaxKind::Exact.apply(x.dot(w).view());
    let total: f64 = p
        .iter()
        .zip(y.iter())
        .filter(|(_, &t)| t > 0.0)
        .map(|(q, t)| -t * q.max(1e-300).ln())
        .sum();
    total / x.nrows() as f64
}

/// `W' = V - lr * grad(V)`, `V' = (1 - gamma) W' + gamma W`.
pub fn plain_step(m: &mut PlainModel, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, lr: f64, sm: &SoftmaxKind) {
    let (next, gamma) = step_momentum(m.lambda);
    let g = gradient(x, y, &m.v, sm);
    let w_new = &m.v - &(g * lr);
    m.v = &w_new * (1.0 - gamma) + &m.w * gamma;
    m.w = w_new;
    m.lambda = next;
    m.step += 1;
}

/// Row ranges of each mini-batch, in order.
pub fn batch_ranges(rows: usize, batch: usize) -> Vec<std::ops::Range<usize>> {
    (0..rows.div_ceil(batch.max(1)))
        .map(|b| b * batch..((b + 1) * batch).min(rows))
        .collect()
}

/// Per-epoch summary of a plaintext run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlainEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub max_abs_logit: f64,
    /// Largest `max - min` within a row of logits.
    pub max_logit_spread: f64,
}

/// Full-batch-ordered NAG training; batches are taken in row order every epoch.
pub fn plaintext_train(
    x: &Array2<f64>,
    labels: &[usize],
    hp: &Hyperparams,
    sm: &SoftmaxKind,
) -> (PlainModel, Vec<PlainEpoch>) {
    let y = one_hot(labels, hp.class_count);
    let mut m = PlainModel::zeros(hp.feature_dim, hp.class_count);
    let mut log = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        for r in batch_ranges(x.nrows(), hp.batch_size) {
            plain_step(&mut m, x.slice(ndarray::s![r.clone(), ..]), y.slice(ndarray::s![r, ..]), hp.learning_rate, sm);
        }
        let logits = x.dot(&m.w);
        log.push(PlainEpoch {
            epoch,
            loss: cross_entropy(x.view(), y.view(), &m.w),
            max_abs_logit: logits.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            max_logit_spread: logits
                .rows()
                .into_iter()
                .map(|r| r.fold(f64::MIN, |a, &v| a.max(v)) - r.fold(f64::MAX, |a, &v| a.min(v)))
                .fold(0.0, f64::max),
        });
    }
    (m, log)
}

/// Arg-max per row; ties go to the lowest index.
pub fn predict(logits: ArrayView2<'_, f64>) -> Vec<usize> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}
