//! Negacyclic number-theoretic transform over a single prime field.
//!
//! Forward output is in bit-reversed order: slot `i` holds the evaluation of
//! the input at `psi^(2*brv(i) + 1)`, where `psi` is the primitive `2N`-th root.

use super::modular::Modulus;
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct PrimeField {
    modulus: Modulus,
    degree: usize,
    log_degree: u32,
    psi: u64,
    psi_brv: Vec<u64>,
    psi_brv_shoup: Vec<u64>,
    psi_inv_brv: Vec<u64>,
    psi_inv_brv_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

#[inline]
pub(crate) fn bit_reverse(x: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS - bits)
    }
}

impl PrimeField {
    pub fn new(prime: u64, degree: usize) -> Result<Self> {
        if !degree.is_power_of_two() || degree < 2 {
            return Err(Error::InvalidParameter(format!("ring degree {degree} is not a power of two")));
        }
        if prime >= 1 << Modulus::MAX_BITS || !super::modular::is_prime(prime) {
            return Err(Error::InvalidParameter(format!("{prime} is not a usable prime")));
        }
        let two_n = 2 * degree as u64;
        if prime % two_n != 1 {
            return Err(Error::InvalidParameter(format!("{prime} is not 1 mod {two_n}")));
        }
        let modulus = Modulus::new(prime);
        let psi = find_primitive_root(&modulus, two_n);
        let log_degree = degree.trailing_zeros();

        let mut psi_brv = vec![0u64; degree];
        let mut psi_inv_brv = vec![0u64; degree];
        let psi_inv = modulus.inv(psi);
        let (mut p, mut pi) = (1u64, 1u64);
        let mut powers = vec![0u64; degree];
        let mut inv_powers = vec![0u64; degree];
        for i in 0..degree {
            powers[i] = p;
            inv_powers[i] = pi;
            p = modulus.mul(p, psi);
            pi = modulus.mul(pi, psi_inv);
        }
        for i in 0..degree {
            let r = bit_reverse(i, log_degree);
            psi_brv[i] = powers[r];
            psi_inv_brv[i] = inv_powers[r];
        }
        let psi_brv_shoup = psi_brv.iter().map(|&w| modulus.shoup(w)).collect();
        let psi_inv_brv_shoup = psi_inv_brv.iter().map(|&w| modulus.shoup(w)).collect();
        let n_inv = modulus.inv(degree as u64);
        Ok(Self {
            modulus,
            degree,
            log_degree,
            psi,
            psi_brv,
            psi_brv_shoup,
            psi_inv_brv,
            psi_inv_brv_shoup,
            n_inv,
            n_inv_shoup: modulus.shoup(n_inv),
        })
    }

    #[inline(always)]
    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn prime(&self) -> u64 {
        self.modulus.value()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// The primitive `2N`-th root of unity used by the transform.
    pub fn psi(&self) -> u64 {
        self.psi
    }

    pub fn n_inverse(&self) -> u64 {
        self.n_inv
    }

    /// In-place Cooley-Tukey forward transform, natural order in, bit-reversed out.
    ///
    /// Butterflies keep values in `[0, 4q)` and reduce once at the end.
    pub fn forward(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.degree);
        let q = &self.modulus;
        let p = q.value();
        let two_p = 2 * p;
        let n = self.degree;
        let mut t = n;
        let mut m = 1;
        while m < n {
            t >>= 1;
            for i in 0..m {
                let w = self.psi_brv[m + i];
                let ws = self.psi_brv_shoup[m + i];
                let (lo, hi) = a[2 * i * t..2 * (i + 1) * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = if *x >= two_p { *x - two_p } else { *x };
                    let v = q.mul_shoup_lazy(*y, w, ws);
                    *x = u + v;
                    *y = u + two_p - v;
                }
            }
            m <<= 1;
        }
        for x in a.iter_mut() {
            let r = if *x >= two_p { *x - two_p } else { *x };
            *x = if r >= p { r - p } else { r };
        }
    }

    /// In-place Gentleman-Sande inverse transform, bit-reversed in, natural out.
    ///
    /// Butterflies keep values in `[0, 2q)`.
    pub fn inverse(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.degree);
        let q = &self.modulus;
        let two_p = 2 * q.value();
        let n = self.degree;
        let mut t = 1;
        let mut m = n;
        while m > 1 {
            let h = m >> 1;
            for i in 0..h {
                let w = self.psi_inv_brv[h + i];
                let ws = self.psi_inv_brv_shoup[h + i];
                let (lo, hi) = a[2 * i * t..2 * (i + 1) * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let (u, v) = (*x, *y);
                    let s = u + v;
                    *x = if s >= two_p { s - two_p } else { s };
                    *y = q.mul_shoup_lazy(u + two_p - v, w, ws);
                }
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = q.mul_shoup(*x, self.n_inv, self.n_inv_shoup);
        }
    }

    /// Exponent `e` (odd, in `[1, 2N)`) such that forward slot `i` is the evaluation at `psi^e`.
    pub fn slot_exponent(&self, i: usize) -> usize {
        2 * bit_reverse(i, self.log_degree) + 1
    }
}

fn find_primitive_root(q: &Modulus, order: u64) -> u64 {
    let cofactor = (q.value() - 1) / order;
    let minus_one = q.value() - 1;
    (2..q.value())
        .map(|x| q.pow(x, cofactor))
        .find(|&psi| q.pow(psi, order / 2) == minus_one)
        .expect("prime admits a primitive root of the requested order")
}
