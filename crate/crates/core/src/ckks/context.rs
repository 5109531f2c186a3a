use std::sync::Arc;

use super::encoding::SlotFft;
use super::params::{CkksParams, ParamsHash};
use crate::error::{Error, Result};
use crate::ring::{Domain, RingPoly, RnsBasis};

/// Immutable, shareable state derived from a parameter set.
pub struct CkksContext {
    params: CkksParams,
    hash: ParamsHash,
    /// Base primes followed by special primes.
    basis: Arc<RnsBasis>,
    scales: Vec<f64>,
    fft: SlotFft,
}

impl std::fmt::Debug for CkksContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CkksContext")
            .field("profile", &self.params.profile)
            .field("degree", &self.params.degree())
            .field("levels", &self.params.max_level())
            .finish()
    }
}

/// An encoded message: NTT-form polynomial plus its scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Plaintext {
    pub(crate) poly: RingPoly,
    pub(crate) scale: f64,
}

impl Plaintext {
    pub fn level(&self) -> usize {
        self.poly.level()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn poly(&self) -> &RingPoly {
        &self.poly
    }

    /// Slot-wise sum of two plaintexts with the same level and scale.
    pub fn add(&self, other: &Plaintext) -> Result<Plaintext> {
        if !super::evaluator::scales_match(self.scale, other.scale) {
            return Err(Error::ScaleMismatch {
                left: self.scale.log2(),
                right: other.scale.log2(),
            });
        }
        Ok(Plaintext {
            poly: self.poly.add(&other.poly)?,
            scale: self.scale,
        })
    }
}

impl CkksContext {
    pub fn new(params: CkksParams) -> Result<Arc<Self>> {
        params.validate()?;
        let basis = Arc::new(RnsBasis::new(params.degree(), &params.all_primes())?);
        Ok(Arc::new(Self {
            hash: params.hash(),
            scales: params.level_scales(),
            fft: SlotFft::new(params.degree()),
            basis,
            params,
        }))
    }

    pub fn params(&self) -> &CkksParams {
        &self.params
    }

    pub fn hash(&self) -> ParamsHash {
        self.hash
    }

    pub fn basis(&self) -> &Arc<RnsBasis> {
        &self.basis
    }

    pub fn degree(&self) -> usize {
        self.params.degree()
    }

    pub fn slot_count(&self) -> usize {
        self.params.slot_count()
    }

    pub fn max_level(&self) -> usize {
        self.params.max_level()
    }

    /// Level including the special primes.
    pub(crate) fn key_level(&self) -> usize {
        self.basis.len()
    }

    /// Canonical scale of a ciphertext at `level`.
    pub fn scale_at(&self, level: usize) -> f64 {
        self.scales[level]
    }

    pub fn prime(&self, index: usize) -> u64 {
        self.basis.field(index).prime()
    }

    pub fn log_modulus(&self, level: usize) -> f64 {
        self.params.base_primes[..level].iter().map(|&q| (q as f64).log2()).sum()
    }

    pub(crate) fn galois_element(&self, steps: i64) -> usize {
        self.fft.galois_element(steps)
    }

    /// Encodes up to `slot_count` reals at the given scale and level.
    pub fn encode(&self, values: &[f64], scale: f64, level: usize) -> Result<Plaintext> {
        let coeffs = self.encode_coeffs(values, scale, level)?;
        let mut poly = RingPoly::from_signed_wide(&self.basis, level, &coeffs);
        poly.set_domain(Domain::Ntt);
        Ok(Plaintext { poly, scale })
    }

    /// Encodes at the canonical scale of `level`.
    pub fn encode_at(&self, values: &[f64], level: usize) -> Result<Plaintext> {
        self.encode(values, self.scale_at(level), level)
    }

    fn encode_coeffs(&self, values: &[f64], scale: f64, level: usize) -> Result<Vec<i128>> {
        if values.len() > self.slot_count() {
            return Err(Error::InvalidParameter(format!(
                "{} values exceed {} slots",
                values.len(),
                self.slot_count()
            )));
        }
        if level == 0 || level > self.max_level() {
            return Err(Error::InvalidParameter(format!("level {level} out of range")));
        }
        if !(scale.is_finite() && scale >= 1.0) {
            return Err(Error::InvalidParameter(format!("scale {scale} out of range")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite value".into()));
        }
        let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // each coefficient is bounded by the largest slot magnitude
        let bits = (peak.max(1.0) * scale).log2() + 1.0;
        if bits >= self.log_modulus(level).min(126.0) {
            return Err(Error::InvalidParameter(format!(
                "scale 2^{:.1} too large for level {level}",
                scale.log2()
            )));
        }
        Ok(self.fft.encode_coeffs(values, scale))
    }

    /// Decodes a plaintext back to `slot_count` reals.
    pub fn decode(&self, pt: &Plaintext) -> Vec<f64> {
        let coeffs = self.centered_coefficients(&pt.poly);
        self.fft.decode_coeffs(&coeffs, pt.scale)
    }

    /// Centered coefficients of a polynomial, reconstructed from its first one or two residues.
    pub(crate) fn centered_coefficients(&self, poly: &RingPoly) -> Vec<f64> {
        let n = self.degree();
        let used = poly.level().min(2);
        let mut rows: Vec<Vec<u64>> = poly.residues()[..used].to_vec();
        if poly.domain() == Domain::Ntt {
            for (i, r) in rows.iter_mut().enumerate() {
                self.basis.field(i).inverse(r);
            }
        }
        let f0 = self.basis.field(0).modulus();
        if used == 1 {
            return rows[0].iter().map(|&x| f0.center(x) as f64).collect();
        }
        let q0 = f0.value();
        let f1 = self.basis.field(1).modulus();
        let q1 = f1.value();
        let q0_inv = f1.inv(f1.reduce(q0));
        let product = q0 as u128 * q1 as u128;
        (0..n)
            .map(|i| {
                let r0 = rows[0][i];
                let r1 = rows[1][i];
                let t = f1.mul(f1.sub(r1, f1.reduce(r0)), q0_inv);
                let x = r0 as u128 + q0 as u128 * t as u128;
                if x > product / 2 {
                    -((product - x) as f64)
                } else {
                    x as f64
                }
            })
            .collect()
    }
}
