//! Word-sized modular arithmetic for primes below 2^62.

/// A prime modulus with a precomputed Barrett ratio `floor(2^128 / q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Modulus {
    value: u64,
    ratio_lo: u64,
    ratio_hi: u64,
}

impl Modulus {
    pub const MAX_BITS: u32 = 62;

    pub fn new(value: u64) -> Self {
        assert!(value >= 2 && value < (1u64 << Self::MAX_BITS), "modulus out of range");
        let ratio = u128::MAX / value as u128;
        Self {
            value,
            ratio_lo: ratio as u64,
            ratio_hi: (ratio >> 64) as u64,
        }
    }

    #[inline(always)]
    pub fn value(&self) -> u64 {
        self.value
    }

    #[inline(always)]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        s.min(s.wrapping_sub(self.value))
    }

    #[inline(always)]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        let d = a.wrapping_sub(b);
        d.min(d.wrapping_add(self.value))
    }

    #[inline(always)]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    /// Barrett reduction of a 128-bit value.
    #[inline(always)]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        let xl = x as u64 as u128;
        let xh = (x >> 64) as u64 as u128;
        let rl = self.ratio_lo as u128;
        let rh = self.ratio_hi as u128;
        let lo_hi = xl * rh;
        let hi_lo = xh * rl;
        let mid = ((xl * rl) >> 64) + (lo_hi as u64 as u128) + (hi_lo as u64 as u128);
        let quot = xh * rh + (lo_hi >> 64) + (hi_lo >> 64) + (mid >> 64);
        // the quotient estimate is short by at most 2
        let r = x.wrapping_sub(quot.wrapping_mul(self.value as u128)) as u64;
        let r = r.min(r.wrapping_sub(self.value));
        r.min(r.wrapping_sub(self.value))
    }

    #[inline(always)]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    #[inline(always)]
    pub fn reduce(&self, a: u64) -> u64 {
        self.reduce_u128(a as u128)
    }

    pub fn reduce_i64(&self, a: i64) -> u64 {
        let r = self.reduce(a.unsigned_abs());
        if a < 0 {
            self.neg(r)
        } else {
            r
        }
    }

    pub fn reduce_i128(&self, a: i128) -> u64 {
        let r = self.reduce_u128(a.unsigned_abs());
        if a < 0 {
            self.neg(r)
        } else {
            r
        }
    }

    /// Centered representative in `(-q/2, q/2]`.
    #[inline(always)]
    pub fn center(&self, a: u64) -> i64 {
        if a > self.value / 2 {
            a as i64 - self.value as i64
        } else {
            a as i64
        }
    }

    /// Shoup companion `floor(w * 2^64 / q)` for a fixed multiplicand `w`.
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.value as u128) as u64
    }

    #[inline(always)]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
        let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(self.value));
        r.min(r.wrapping_sub(self.value))
    }

    /// `a * w mod q` left in `[0, 2q)`; valid for any `a`.
    #[inline(always)]
    pub fn mul_shoup_lazy(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
        a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(self.value))
    }

    pub fn pow(&self, base: u64, mut exp: u64) -> u64 {
        let mut acc = 1u64;
        let mut b = self.reduce(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, b);
            }
            b = self.mul(b, b);
            exp >>= 1;
        }
        acc
    }

    /// Inverse by Fermat; the modulus must be prime and `a` nonzero.
    pub fn inv(&self, a: u64) -> u64 {
        debug_assert!(self.reduce(a) != 0);
        self.pow(a, self.value - 2)
    }
}

fn mulmod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn powmod_u64(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1u64 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mulmod_u64(acc, b, m);
        }
        b = mulmod_u64(b, b, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'outer: for &a in &BASES {
        let mut x = powmod_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod_u64(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// Finds the prime `q ≡ 1 (mod step)` closest to `target` that is not in `exclude`.
pub fn nearest_ntt_prime(target: f64, step: u64, exclude: &[u64]) -> Option<u64> {
    let base = (target / step as f64).round() as u64;
    let limit = (1u64 << Modulus::MAX_BITS) / step;
    let usable = |k: u64| {
        let q = k * step + 1;
        (k > 0 && k < limit && !exclude.contains(&q) && is_prime(q)).then_some(q)
    };
    for offset in 0..limit {
        let up = base.checked_add(offset).and_then(usable);
        let down = base.checked_sub(offset).and_then(usable);
        match (up, down) {
            (Some(a), Some(b)) => {
                let closer = if (a as f64 - target).abs() <= (b as f64 - target).abs() { a } else { b };
                return Some(closer);
            }
            (Some(a), None) | (None, Some(a)) => return Some(a),
            (None, None) => {}
        }
    }
    None
}

/// Primes `q ≡ 1 (mod step)` just below `2^bits`, scanning downward.
pub fn primes_below_power_of_two(bits: u32, step: u64, count: usize, exclude: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut k = ((1u64 << bits) - 1) / step;
    while out.len() < count && k > 0 {
        let q = k * step + 1;
        if q < (1u64 << bits) && !exclude.contains(&q) && is_prime(q) {
            out.push(q);
        }
        k -= 1;
    }
    out
}
