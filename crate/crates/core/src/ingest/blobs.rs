use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::efv::FeatureFile;
use crate::error::{Error, Result};

/// Distance between any two class centroids, in units of the noise deviation.
pub const CENTROID_DISTANCE: f64 = 6.0;

/// Gaussian mixture with unit-variance classes and balanced labels.
///
/// For `classes <= dim` the centroids sit on scaled coordinate axes, so every
/// pair is exactly [`CENTROID_DISTANCE`] apart.
pub fn gen_blobs(classes: usize, dim: usize, rows: usize, seed: u64) -> Result<FeatureFile> {
    if classes < 2 || classes > u16::MAX as usize || dim == 0 || rows < classes {
        return Err(Error::InvalidParameter(format!(
            "cannot generate {rows} rows of {classes} classes in {dim} dimensions"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let radius = CENTROID_DISTANCE / std::f64::consts::SQRT_2;
    let centroids: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            if classes <= dim {
                (0..dim).map(|k| if k == c { radius } else { 0.0 }).collect()
            } else {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|a| a * radius / n).collect()
            }
        })
        .collect();
    let mut labels: Vec<u16> = (0..rows).map(|i| (i % classes) as u16).collect();
    labels.shuffle(&mut rng);
    let mut x = Array2::<f32>::zeros((rows, dim));
    for (i, &l) in labels.iter().enumerate() {
        for k in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            x[[i, k]] = (centroids[l as usize][k] + noise) as f32;
        }
    }
    FeatureFile::new(x, labels, classes as u16)
}
