//! Parameter sets, security profiles and the parameter fingerprint.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ring::modular::{nearest_ntt_prime, primes_below_power_of_two};

pub type ParamsHash = [u8; 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SecurityProfile {
    /// Small, fast and not secure. Only for tests and demos.
    Test,
    Secure128,
}

impl SecurityProfile {
    pub fn name(self) -> &'static str {
        match self {
            SecurityProfile::Test => "test",
            SecurityProfile::Secure128 => "secure128",
        }
    }

    fn tag(self) -> u8 {
        match self {
            SecurityProfile::Test => 0,
            SecurityProfile::Secure128 => 1,
        }
    }
}

impl std::str::FromStr for SecurityProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(SecurityProfile::Test),
            "secure128" => Ok(SecurityProfile::Secure128),
            other => Err(Error::InvalidParameter(format!("unknown profile '{other}'"))),
        }
    }
}

/// Largest `log2(QP)` admitting 128-bit security for a ternary secret
/// (HE standard table, classical attacks).
pub fn max_log_qp_128(degree: usize) -> Option<u32> {
    Some(match degree {
        1024 => 27,
        2048 => 54,
        4096 => 109,
        8192 => 218,
        16384 => 438,
        32768 => 881,
        65536 => 1761,
        _ => return None,
    })
}

/// A CKKS parameter set.
///
/// `base_primes[0]` is the decoding prime; `base_primes[1..]` are the
/// rescaling primes, each close to the scale of the level it is dropped from.
#[derive(Clone, Debug, PartialEq)]
pub struct CkksParams {
    pub profile: SecurityProfile,
    pub log_degree: u32,
    pub log_scale: u32,
    pub base_primes: Vec<u64>,
    pub special_primes: Vec<u64>,
    pub sigma: f64,
    pub hamming_weight: usize,
}

/// Builds the rescaling primes top-down so that the canonical scale of every
/// level stays within a hair of `2^log_scale`.
fn scale_tracking_primes(log_scale: u32, levels: usize, step: u64, exclude: &[u64]) -> Result<Vec<u64>> {
    let mut scale = 2f64.powi(log_scale as i32);
    let mut taken = exclude.to_vec();
    let mut top_down = Vec::with_capacity(levels);
    for _ in 0..levels {
        let q = nearest_ntt_prime(scale, step, &taken)
            .ok_or_else(|| Error::InvalidParameter("no NTT prime near the scale".into()))?;
        taken.push(q);
        top_down.push(q);
        scale = scale * scale / q as f64;
    }
    top_down.reverse();
    Ok(top_down)
}

impl CkksParams {
    /// Builds a parameter set with a scale-tracking chain.
    #[allow(clippy::too_many_arguments)]
    pub fn generate(
        profile: SecurityProfile,
        log_degree: u32,
        log_scale: u32,
        first_prime_bits: u32,
        levels: usize,
        special_count: usize,
        special_bits: u32,
    ) -> Result<Self> {
        if !(4..=17).contains(&log_degree) {
            return Err(Error::InvalidParameter(format!("log ring degree {log_degree} out of range")));
        }
        let degree = 1usize << log_degree;
        let step = 2 * degree as u64;
        let q0 = primes_below_power_of_two(first_prime_bits, step, 1, &[]);
        let specials = primes_below_power_of_two(special_bits, step, special_count, &q0);
        if q0.is_empty() || specials.len() != special_count {
            return Err(Error::InvalidParameter("not enough NTT primes".into()));
        }
        let mut exclude = q0.clone();
        exclude.extend(&specials);
        let mut base_primes = q0;
        base_primes.extend(scale_tracking_primes(log_scale, levels, step, &exclude)?);
        let params = Self {
            profile,
            log_degree,
            log_scale,
            base_primes,
            special_primes: specials,
            sigma: 3.2,
            hamming_weight: degree / 2,
        };
        params.validate()?;
        Ok(params)
    }

    /// `N = 2^13`, scale `2^40`, 24 rescaling levels. Insecure.
    pub fn test_profile() -> Self {
        Self::generate(SecurityProfile::Test, 13, 40, 60, 24, 13, 61).expect("test profile is valid")
    }

    /// Same ring and scale as [`test_profile`](Self::test_profile) with a shorter chain.
    pub fn test_with_levels(levels: usize) -> Self {
        let special = levels.div_ceil(2).max(1);
        Self::generate(SecurityProfile::Test, 13, 40, 60, levels, special, 61).expect("test profile is valid")
    }

    /// `N = 2^15`, scale `2^35`, 18 rescaling levels, `log2(QP) <= 881`.
    pub fn secure128() -> Self {
        Self::generate(SecurityProfile::Secure128, 15, 35, 55, 18, 3, 61).expect("secure profile is valid")
    }

    pub fn for_profile(profile: SecurityProfile) -> Self {
        match profile {
            SecurityProfile::Test => Self::test_profile(),
            SecurityProfile::Secure128 => Self::secure128(),
        }
    }

    pub fn degree(&self) -> usize {
        1 << self.log_degree
    }

    pub fn slot_count(&self) -> usize {
        self.degree() / 2
    }

    /// Number of base primes, which is also the level of a fresh ciphertext.
    pub fn max_level(&self) -> usize {
        self.base_primes.len()
    }

    /// Number of rescales available to a fresh ciphertext.
    pub fn depth(&self) -> usize {
        self.base_primes.len() - 1
    }

    pub fn log_qp(&self) -> f64 {
        self.base_primes
            .iter()
            .chain(&self.special_primes)
            .map(|&q| (q as f64).log2())
            .sum()
    }

    pub fn all_primes(&self) -> Vec<u64> {
        let mut v = self.base_primes.clone();
        v.extend(&self.special_primes);
        v
    }

    /// Canonical scale of every level, indexed by level (index 0 unused).
    pub fn level_scales(&self) -> Vec<f64> {
        let top = self.max_level();
        let mut scales = vec![0.0; top + 1];
        scales[top] = 2f64.powi(self.log_scale as i32);
        for l in (1..top).rev() {
            let s = scales[l + 1];
            scales[l] = s * s / self.base_primes[l] as f64;
        }
        scales
    }

    /// Number of base primes per key-switching digit.
    pub fn digit_size(&self) -> usize {
        self.special_primes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let degree = self.degree();
        if self.base_primes.len() < 2 || self.special_primes.is_empty() {
            return Err(Error::InvalidParameter("need at least two base primes and one special prime".into()));
        }
        if self.hamming_weight == 0 || self.hamming_weight > degree {
            return Err(Error::InvalidParameter("hamming weight out of range".into()));
        }
        if !(self.sigma > 0.0 && self.sigma < 100.0) {
            return Err(Error::InvalidParameter("sigma out of range".into()));
        }
        let mut all = self.all_primes();
        all.sort_unstable();
        all.dedup();
        if all.len() != self.base_primes.len() + self.special_primes.len() {
            return Err(Error::InvalidParameter("primes are not distinct".into()));
        }
        for &q in &all {
            if q % (2 * degree as u64) != 1 || !crate::ring::modular::is_prime(q) {
                return Err(Error::InvalidParameter(format!("{q} is not an NTT prime for N = {degree}")));
            }
        }
        let scales = self.level_scales();
        for l in 1..self.max_level() {
            let ratio = self.base_primes[l] as f64 / scales[l + 1];
            if !(0.5..=2.0).contains(&ratio) {
                return Err(Error::InvalidParameter(format!("prime {l} is not within a factor 2 of its scale")));
            }
        }
        let first = (self.base_primes[0] as f64).log2();
        if first < self.log_scale as f64 + 10.0 {
            return Err(Error::InvalidParameter("first prime leaves no room above the scale".into()));
        }
        // one digit's product must stay below the special modulus
        let p_bits: f64 = self.special_primes.iter().map(|&p| (p as f64).log2()).sum();
        let alpha = self.digit_size();
        for digit in self.base_primes.chunks(alpha) {
            let d_bits: f64 = digit.iter().map(|&q| (q as f64).log2()).sum();
            if d_bits > p_bits {
                return Err(Error::InvalidParameter("key-switching digit exceeds the special modulus".into()));
            }
        }
        if self.profile == SecurityProfile::Secure128 {
            let bound = max_log_qp_128(degree)
                .ok_or_else(|| Error::InvalidParameter(format!("no security bound for N = {degree}")))?;
            if self.log_qp() > bound as f64 {
                return Err(Error::InvalidParameter(format!(
                    "log2(QP) = {:.1} exceeds the 128-bit bound {bound} for N = {degree}",
                    self.log_qp()
                )));
            }
            if self.hamming_weight < 64 {
                return Err(Error::InvalidParameter("secret too sparse for the secure profile".into()));
            }
        }
        Ok(())
    }

    /// Canonical byte encoding that feeds the fingerprint.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"CKKSPARAMS1");
        out.push(self.profile.tag());
        out.push(self.log_degree as u8);
        out.push(self.log_scale as u8);
        out.extend_from_slice(&(self.base_primes.len() as u32).to_le_bytes());
        for q in &self.base_primes {
            out.extend_from_slice(&q.to_le_bytes());
        }
        out.extend_from_slice(&(self.special_primes.len() as u32).to_le_bytes());
        for q in &self.special_primes {
            out.extend_from_slice(&q.to_le_bytes());
        }
        out.extend_from_slice(&self.sigma.to_bits().to_le_bytes());
        out.extend_from_slice(&(self.hamming_weight as u64).to_le_bytes());
        out
    }

    /// Inverse of [`canonical_bytes`](Self::canonical_bytes); the result is validated.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |_: Error| Error::InvalidParameter("malformed parameter encoding".into());
        let mut r = super::serialize::Reader::new(bytes);
        if r.take(11).map_err(bad)? != b"CKKSPARAMS1" {
            return Err(bad(Error::format("")));
        }
        let profile = match r.u8().map_err(bad)? {
            0 => SecurityProfile::Test,
            1 => SecurityProfile::Secure128,
            _ => return Err(bad(Error::format(""))),
        };
        let log_degree = r.u8().map_err(bad)? as u32;
        let log_scale = r.u8().map_err(bad)? as u32;
        let mut primes = || -> Result<Vec<u64>> {
            let n = r.u32().map_err(bad)? as usize;
            if n > 256 {
                return Err(bad(Error::format("")));
            }
            (0..n).map(|_| r.u64().map_err(bad)).collect()
        };
        let base_primes = primes()?;
        let special_primes = primes()?;
        let sigma = f64::from_bits(r.u64().map_err(bad)?);
        let hamming_weight = r.u64().map_err(bad)? as usize;
        r.finish().map_err(bad)?;
        if !(4..=17).contains(&log_degree) || log_scale > 62 {
            return Err(bad(Error::format("")));
        }
        let p = Self {
            profile,
            log_degree,
            log_scale,
            base_primes,
            special_primes,
            sigma,
            hamming_weight,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn hash(&self) -> ParamsHash {
        let digest = Sha256::digest(self.canonical_bytes());
        let mut h = [0u8; 8];
        h.copy_from_slice(&digest[..8]);
        h
    }
}
