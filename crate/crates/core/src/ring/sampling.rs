//! Seeded samplers for secrets, errors and uniform masks.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Domain, RingPoly, RnsBasis};
use crate::error::{Error, Result};

/// Ternary coefficients with exactly `hamming_weight` nonzero entries.
pub fn signed_ternary<R: Rng + ?Sized>(degree: usize, hamming_weight: usize, rng: &mut R) -> Result<Vec<i64>> {
    if hamming_weight > degree {
        return Err(Error::InvalidParameter(format!(
            "hamming weight {hamming_weight} exceeds ring degree {degree}"
        )));
    }
    let mut idx: Vec<usize> = (0..degree).collect();
    let mut out = vec![0i64; degree];
    for i in 0..hamming_weight {
        let j = rng.gen_range(i..degree);
        idx.swap(i, j);
        out[idx[i]] = if rng.gen::<bool>() { 1 } else { -1 };
    }
    Ok(out)
}

/// Rounded Gaussian coefficients, rejected outside six standard deviations.
pub fn signed_gaussian<R: Rng + ?Sized>(degree: usize, sigma: f64, rng: &mut R) -> Vec<i64> {
    if sigma == 0.0 {
        return vec![0; degree];
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let bound = 6.0 * sigma;
    (0..degree)
        .map(|_| loop {
            let x: f64 = normal.sample(rng);
            let r = x.round();
            if r.abs() <= bound {
                break r as i64;
            }
        })
        .collect()
}

pub fn sample_ternary<R: Rng + ?Sized>(
    basis: &Arc<RnsBasis>,
    level: usize,
    hamming_weight: usize,
    rng: &mut R,
) -> Result<RingPoly> {
    let coeffs = signed_ternary(basis.degree(), hamming_weight, rng)?;
    Ok(RingPoly::from_signed(basis, level, &coeffs))
}

pub fn sample_gaussian<R: Rng + ?Sized>(basis: &Arc<RnsBasis>, level: usize, sigma: f64, rng: &mut R) -> RingPoly {
    let coeffs = signed_gaussian(basis.degree(), sigma, rng);
    RingPoly::from_signed(basis, level, &coeffs)
}

/// Independent uniform residues per prime; the result is tagged with `domain`
/// since a uniform poly is uniform in either representation.
pub fn sample_uniform<R: Rng + ?Sized>(basis: &Arc<RnsBasis>, level: usize, domain: Domain, rng: &mut R) -> RingPoly {
    let residues = basis.fields()[..level]
        .iter()
        .map(|f| (0..basis.degree()).map(|_| rng.gen_range(0..f.prime())).collect())
        .collect();
    RingPoly::from_residues(basis, domain, residues).expect("sampled residues are reduced")
}
