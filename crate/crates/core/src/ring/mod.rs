//! Exact arithmetic in `Z_Q[X]/(X^N + 1)` under a residue number system.
//!
//! A [`RingPoly`] keeps one residue vector per active prime of its
//! [`RnsBasis`]; the active primes are always a prefix of the basis, and the
//! number of them is the poly's level. Nothing in this module uses floating
//! point or big integers.

pub mod modular;
mod ntt;
mod sampling;

use std::sync::Arc;

pub use modular::Modulus;
pub use ntt::PrimeField;
pub use sampling::{sample_gaussian, sample_ternary, sample_uniform, signed_gaussian, signed_ternary};

use crate::error::{Error, Result};

/// Ordered list of NTT-friendly primes sharing one ring degree.
#[derive(Debug)]
pub struct RnsBasis {
    degree: usize,
    fields: Vec<PrimeField>,
}

impl RnsBasis {
    pub fn new(degree: usize, primes: &[u64]) -> Result<Self> {
        if primes.is_empty() {
            return Err(Error::InvalidParameter("empty prime list".into()));
        }
        for (i, p) in primes.iter().enumerate() {
            if primes[..i].contains(p) {
                return Err(Error::InvalidParameter(format!("duplicate prime {p}")));
            }
        }
        let fields = primes
            .iter()
            .map(|&p| PrimeField::new(p, degree))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { degree, fields })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field(&self, i: usize) -> &PrimeField {
        &self.fields[i]
    }

    pub fn fields(&self) -> &[PrimeField] {
        &self.fields
    }

    pub fn primes(&self) -> Vec<u64> {
        self.fields.iter().map(|f| f.prime()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Coefficient,
    Ntt,
}

impl Domain {
    fn name(self) -> &'static str {
        match self {
            Domain::Coefficient => "coefficient",
            Domain::Ntt => "ntt",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RingPoly {
    basis: Arc<RnsBasis>,
    domain: Domain,
    residues: Vec<Vec<u64>>,
}

impl PartialEq for RingPoly {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis) && self.domain == other.domain && self.residues == other.residues
    }
}

impl Eq for RingPoly {}

impl RingPoly {
    pub fn zero(basis: &Arc<RnsBasis>, level: usize, domain: Domain) -> Self {
        assert!(level >= 1 && level <= basis.len(), "level out of range");
        Self {
            basis: basis.clone(),
            domain,
            residues: vec![vec![0u64; basis.degree()]; level],
        }
    }

    /// Builds a poly from residues that are already reduced.
    pub fn from_residues(basis: &Arc<RnsBasis>, domain: Domain, residues: Vec<Vec<u64>>) -> Result<Self> {
        if residues.is_empty() || residues.len() > basis.len() {
            return Err(Error::Mismatch(format!("{} residue vectors for a basis of {}", residues.len(), basis.len())));
        }
        for (r, f) in residues.iter().zip(basis.fields()) {
            if r.len() != basis.degree() {
                return Err(Error::Mismatch("residue vector length differs from ring degree".into()));
            }
            if r.iter().any(|&x| x >= f.prime()) {
                return Err(Error::Format("residue not reduced".into()));
            }
        }
        Ok(Self {
            basis: basis.clone(),
            domain,
            residues,
        })
    }

    /// Coefficient-form poly from small signed coefficients.
    pub fn from_signed(basis: &Arc<RnsBasis>, level: usize, coeffs: &[i64]) -> Self {
        assert_eq!(coeffs.len(), basis.degree());
        let residues = basis.fields()[..level]
            .iter()
            .map(|f| coeffs.iter().map(|&c| f.modulus().reduce_i64(c)).collect())
            .collect();
        Self {
            basis: basis.clone(),
            domain: Domain::Coefficient,
            residues,
        }
    }

    /// Coefficient-form poly from wide signed coefficients.
    pub fn from_signed_wide(basis: &Arc<RnsBasis>, level: usize, coeffs: &[i128]) -> Self {
        assert_eq!(coeffs.len(), basis.degree());
        let residues = basis.fields()[..level]
            .iter()
            .map(|f| coeffs.iter().map(|&c| f.modulus().reduce_i128(c)).collect())
            .collect();
        Self {
            basis: basis.clone(),
            domain: Domain::Coefficient,
            residues,
        }
    }

    pub fn basis(&self) -> &Arc<RnsBasis> {
        &self.basis
    }

    pub fn level(&self) -> usize {
        self.residues.len()
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn residues(&self) -> &[Vec<u64>] {
        &self.residues
    }

    pub fn residue(&self, i: usize) -> &[u64] {
        &self.residues[i]
    }

    pub(crate) fn residues_mut(&mut self) -> &mut [Vec<u64>] {
        &mut self.residues
    }

    pub fn is_zero(&self) -> bool {
        self.residues.iter().all(|r| r.iter().all(|&x| x == 0))
    }

    fn expect_domain(&self, expected: Domain) -> Result<()> {
        if self.domain != expected {
            return Err(Error::WrongDomain {
                expected: expected.name(),
                found: self.domain.name(),
            });
        }
        Ok(())
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if !Arc::ptr_eq(&self.basis, &other.basis) {
            return Err(Error::Mismatch("polynomials use different bases".into()));
        }
        if self.level() != other.level() {
            return Err(Error::Mismatch(format!("levels {} and {}", self.level(), other.level())));
        }
        Ok(())
    }

    pub fn ntt_forward(&self) -> Result<Self> {
        self.expect_domain(Domain::Coefficient)?;
        let mut out = self.clone();
        out.ntt_in_place();
        Ok(out)
    }

    pub fn ntt_inverse(&self) -> Result<Self> {
        self.expect_domain(Domain::Ntt)?;
        let mut out = self.clone();
        out.intt_in_place();
        Ok(out)
    }

    pub(crate) fn ntt_in_place(&mut self) {
        debug_assert_eq!(self.domain, Domain::Coefficient);
        for (r, f) in self.residues.iter_mut().zip(self.basis.fields()) {
            f.forward(r);
        }
        self.domain = Domain::Ntt;
    }

    pub(crate) fn intt_in_place(&mut self) {
        debug_assert_eq!(self.domain, Domain::Ntt);
        for (r, f) in self.residues.iter_mut().zip(self.basis.fields()) {
            f.inverse(r);
        }
        self.domain = Domain::Coefficient;
    }

    /// Returns the poly in the requested domain, transforming if needed.
    pub fn to_domain(&self, domain: Domain) -> Self {
        let mut out = self.clone();
        out.set_domain(domain);
        out
    }

    pub fn set_domain(&mut self, domain: Domain) {
        match (self.domain, domain) {
            (Domain::Coefficient, Domain::Ntt) => self.ntt_in_place(),
            (Domain::Ntt, Domain::Coefficient) => self.intt_in_place(),
            _ => {}
        }
    }

    fn zip_with(&self, other: &Self, op: impl Fn(&Modulus, u64, u64) -> u64) -> Result<Self> {
        self.check_compatible(other)?;
        if self.domain != other.domain {
            return Err(Error::WrongDomain {
                expected: self.domain.name(),
                found: other.domain.name(),
            });
        }
        let residues = self
            .residues
            .iter()
            .zip(&other.residues)
            .zip(self.basis.fields())
            .map(|((a, b), f)| {
                let q = f.modulus();
                a.iter().zip(b).map(|(&x, &y)| op(q, x, y)).collect()
            })
            .collect();
        Ok(Self {
            basis: self.basis.clone(),
            domain: self.domain,
            residues,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |q, a, b| q.add(a, b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |q, a, b| q.sub(a, b))
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.check_compatible(other).is_ok() && self.domain == other.domain);
        for ((a, b), f) in self.residues.iter_mut().zip(&other.residues).zip(self.basis.fields()) {
            let q = f.modulus();
            for (x, &y) in a.iter_mut().zip(b) {
                *x = q.add(*x, y);
            }
        }
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for (r, f) in out.residues.iter_mut().zip(self.basis.fields()) {
            let q = f.modulus();
            for x in r.iter_mut() {
                *x = q.neg(*x);
            }
        }
        out
    }

    /// Negacyclic product. Operands are moved to NTT form as needed; the result
    /// is returned in the domain of `self`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let a = self.to_domain(Domain::Ntt);
        let b = other.to_domain(Domain::Ntt);
        let mut prod = a.zip_with(&b, |q, x, y| q.mul(x, y))?;
        prod.set_domain(self.domain);
        Ok(prod)
    }

    /// Multiplies every coefficient by a small signed integer.
    pub fn mul_scalar(&self, c: i64) -> Self {
        let mut out = self.clone();
        for (r, f) in out.residues.iter_mut().zip(self.basis.fields()) {
            let q = f.modulus();
            let cm = q.reduce_i64(c);
            let cs = q.shoup(cm);
            for x in r.iter_mut() {
                *x = q.mul_shoup(*x, cm, cs);
            }
        }
        out
    }

    /// Multiplies each residue vector by its own constant (one per active prime).
    pub fn mul_rns_scalar(&self, per_prime: &[u64]) -> Self {
        let mut out = self.clone();
        for ((r, f), &c) in out.residues.iter_mut().zip(self.basis.fields()).zip(per_prime) {
            let q = f.modulus();
            let cs = q.shoup(c);
            for x in r.iter_mut() {
                *x = q.mul_shoup(*x, c, cs);
            }
        }
        out
    }

    /// Applies `X -> X^k` for odd `k`, in either domain.
    pub fn automorphism(&self, k: usize) -> Result<Self> {
        let n = self.degree();
        let two_n = 2 * n;
        if k % 2 == 0 {
            return Err(Error::InvalidParameter(format!("automorphism index {k} is even")));
        }
        let k = k % two_n;
        let mut out = self.clone();
        match self.domain {
            Domain::Coefficient => {
                for ((dst, src), f) in out.residues.iter_mut().zip(&self.residues).zip(self.basis.fields()) {
                    let q = f.modulus();
                    for (i, &c) in src.iter().enumerate() {
                        let e = (i * k) % two_n;
                        if e < n {
                            dst[e] = c;
                        } else {
                            dst[e - n] = q.neg(c);
                        }
                    }
                }
            }
            Domain::Ntt => {
                let perm = ntt_automorphism_permutation(n, k);
                for (dst, src) in out.residues.iter_mut().zip(&self.residues) {
                    for (d, &p) in dst.iter_mut().zip(&perm) {
                        *d = src[p];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Keeps only the first `level` primes (no division; the represented value is reduced mod the smaller modulus).
    pub fn truncate(&self, level: usize) -> Result<Self> {
        if level == 0 || level > self.level() {
            return Err(Error::InvalidParameter(format!("cannot truncate level {} to {level}", self.level())));
        }
        let mut out = self.clone();
        out.residues.truncate(level);
        Ok(out)
    }

    /// Divides by the last active prime with rounding and drops it.
    ///
    /// Accepts either domain; NTT-form input is handled by transforming only the
    /// dropped residue and re-transforming its correction.
    pub fn drop_last_prime(&self) -> Result<Self> {
        let level = self.level();
        if level < 2 {
            return Err(Error::LevelExhausted { needed: 2, available: level });
        }
        let last = level - 1;
        let last_field = self.basis.field(last);
        let q_last = last_field.modulus();
        let mut tail = self.residues[last].clone();
        if self.domain == Domain::Ntt {
            last_field.inverse(&mut tail);
        }
        // centered remainder r with x - r divisible by q_last
        let centered: Vec<i64> = tail.iter().map(|&x| q_last.center(x)).collect();
        let mut residues = Vec::with_capacity(last);
        for (i, f) in self.basis.fields()[..last].iter().enumerate() {
            let q = f.modulus();
            let mut corr: Vec<u64> = centered.iter().map(|&r| q.reduce_i64(r)).collect();
            if self.domain == Domain::Ntt {
                f.forward(&mut corr);
            }
            let inv = q.inv(q.reduce(q_last.value()));
            let inv_s = q.shoup(inv);
            let row = self.residues[i]
                .iter()
                .zip(&corr)
                .map(|(&x, &c)| q.mul_shoup(q.sub(x, c), inv, inv_s))
                .collect();
            residues.push(row);
        }
        Ok(Self {
            basis: self.basis.clone(),
            domain: self.domain,
            residues,
        })
    }
}

/// Index map for `X -> X^k` acting on NTT-form residues: `out[i] = in[perm[i]]`.
pub(crate) fn ntt_automorphism_permutation(n: usize, k: usize) -> Vec<usize> {
    let log_n = n.trailing_zeros();
    let two_n = 2 * n;
    let mut slot_of_exponent = vec![usize::MAX; two_n];
    for j in 0..n {
        slot_of_exponent[2 * ntt::bit_reverse(j, log_n) + 1] = j;
    }
    (0..n)
        .map(|i| {
            let e = 2 * ntt::bit_reverse(i, log_n) + 1;
            slot_of_exponent[(e * k) % two_n]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn basis(n: usize, primes: &[u64]) -> Arc<RnsBasis> {
        Arc::new(RnsBasis::new(n, primes).unwrap())
    }

    fn random_poly(b: &Arc<RnsBasis>, rng: &mut ChaCha20Rng) -> RingPoly {
        let residues = b
            .fields()
            .iter()
            .map(|f| (0..b.degree()).map(|_| rng.gen_range(0..f.prime())).collect())
            .collect();
        RingPoly::from_residues(b, Domain::Coefficient, residues).unwrap()
    }

    const P17: u64 = 65_537;

    #[test]
    fn zero_and_constant_transforms() {
        let b = basis(8, &[P17, 114_689]);
        let z = RingPoly::zero(&b, 2, Domain::Coefficient);
        assert!(z.ntt_forward().unwrap().is_zero());
        let mut c = vec![0i64; 8];
        c[0] = 42;
        let p = RingPoly::from_signed(&b, 2, &c).ntt_forward().unwrap();
        for r in p.residues() {
            assert!(r.iter().all(|&x| x == 42));
        }
        let back = p.ntt_inverse().unwrap();
        assert_eq!(back.residue(0)[0], 42);
    }

    #[test]
    fn wrong_domain_rejected() {
        let b = basis(8, &[P17]);
        let z = RingPoly::zero(&b, 1, Domain::Coefficient);
        assert!(matches!(z.ntt_inverse(), Err(Error::WrongDomain { .. })));
        assert!(matches!(z.ntt_forward().unwrap().ntt_forward(), Err(Error::WrongDomain { .. })));
    }

    #[test]
    fn ntt_roundtrip_random() {
        let b = basis(64, &[P17, 786_433, 5_767_169]);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = random_poly(&b, &mut rng);
            assert_eq!(p.ntt_forward().unwrap().ntt_inverse().unwrap(), p);
        }
    }

    #[test]
    fn negacyclic_wraparound() {
        let b = basis(8, &[P17]);
        let mut xn1 = vec![0i64; 8];
        xn1[7] = 1;
        let mut x = vec![0i64; 8];
        x[1] = 1;
        let prod = RingPoly::from_signed(&b, 1, &xn1)
            .mul(&RingPoly::from_signed(&b, 1, &x))
            .unwrap();
        let mut minus_one = vec![0i64; 8];
        minus_one[0] = -1;
        assert_eq!(prod, RingPoly::from_signed(&b, 1, &minus_one));
    }

    #[test]
    fn additive_identity_and_inverse() {
        let b = basis(8, &[P17, 114_689]);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let a = random_poly(&b, &mut rng);
        let z = RingPoly::zero(&b, 2, Domain::Coefficient);
        assert_eq!(a.add(&z).unwrap(), a);
        assert!(a.add(&a.neg()).unwrap().is_zero());
        let one = {
            let mut c = vec![0i64; 8];
            c[0] = 1;
            RingPoly::from_signed(&b, 2, &c)
        };
        assert_eq!(a.mul(&one).unwrap(), a);
    }

    #[test]
    fn level_and_basis_mismatch_rejected() {
        let b = basis(8, &[P17, 114_689]);
        let other = basis(8, &[P17, 114_689]);
        let a = RingPoly::zero(&b, 2, Domain::Coefficient);
        assert!(a.add(&RingPoly::zero(&b, 1, Domain::Coefficient)).is_err());
        assert!(a.add(&RingPoly::zero(&other, 2, Domain::Coefficient)).is_err());
        assert!(a.add(&RingPoly::zero(&b, 2, Domain::Ntt)).is_err());
    }

    #[test]
    fn automorphism_identity_inverse_and_domains_agree() {
        let b = basis(16, &[P17, 114_689]);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let p = random_poly(&b, &mut rng);
        assert_eq!(p.automorphism(1).unwrap(), p);
        assert!(p.automorphism(4).is_err());
        // 5 * 13 = 65 = 2*32 + 1
        let back = p.automorphism(5).unwrap().automorphism(13).unwrap();
        assert_eq!(back, p);
        for k in [3usize, 5, 7, 25, 31] {
            let coeff = p.automorphism(k).unwrap();
            let via_ntt = p.ntt_forward().unwrap().automorphism(k).unwrap().ntt_inverse().unwrap();
            assert_eq!(coeff, via_ntt, "k = {k}");
        }
    }

    #[test]
    fn drop_last_prime_exact_multiple_and_zero() {
        let b = basis(8, &[P17, 114_689, 147_457]);
        let q_last = 147_457i64;
        let y: Vec<i64> = vec![5, -3, 0, 7, 1, -1, 2, 9];
        let x: Vec<i64> = y.iter().map(|v| v * q_last).collect();
        let p = RingPoly::from_signed(&b, 3, &x);
        assert_eq!(p.drop_last_prime().unwrap(), RingPoly::from_signed(&b, 2, &y));
        let z = RingPoly::zero(&b, 3, Domain::Coefficient);
        assert!(z.drop_last_prime().unwrap().is_zero());
        let single = RingPoly::zero(&b, 1, Domain::Coefficient);
        assert!(matches!(single.drop_last_prime(), Err(Error::LevelExhausted { .. })));
        // NTT-form path agrees with the coefficient path
        let via_ntt = p.ntt_forward().unwrap().drop_last_prime().unwrap().ntt_inverse().unwrap();
        assert_eq!(via_ntt, RingPoly::from_signed(&b, 2, &y));
    }
}
