use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train, validation and test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let s = Self { train, val, test };
        let ok = [train, val, test].iter().all(|f| (0.0..=1.0).contains(f)) && (train + val + test - 1.0).abs() < 1e-9;
        if !ok {
            return Err(Error::InvalidParameter(format!("split fractions {train}/{val}/{test} must sum to 1")));
        }
        Ok(s)
    }
}

/// Row indices of each part.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class shuffle and split, then a shuffle of each part; deterministic under `seed`.
pub fn stratified_split(labels: &[usize], spec: SplitSpec, seed: u64) -> Split {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = (n * spec.train).round() as usize;
        let n_val = ((n * spec.val).round() as usize).min(idx.len() - n_train);
        out.train.extend_from_slice(&idx[..n_train]);
        out.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.shuffle(&mut rng);
    out.val.shuffle(&mut rng);
    out.test.shuffle(&mut rng);
    out
}
