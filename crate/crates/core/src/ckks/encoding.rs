//! Canonical-embedding encoder over the `5^j` rotation group.
//!
//! Slot `j` corresponds to evaluation at `zeta^(5^j)` with `zeta = exp(i*pi/N)`,
//! so the automorphism `X -> X^(5^k)` rotates slots left by `k`.

use std::f64::consts::PI;

use num_complex::Complex64;

pub(crate) struct SlotFft {
    slots: usize,
    m: usize,
    rot_group: Vec<usize>,
    ksi_pows: Vec<Complex64>,
}

impl SlotFft {
    pub fn new(degree: usize) -> Self {
        let m = 2 * degree;
        let slots = degree / 2;
        let mut rot_group = Vec::with_capacity(slots);
        let mut g = 1usize;
        for _ in 0..slots {
            rot_group.push(g);
            g = g * 5 % m;
        }
        let ksi_pows = (0..=m)
            .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64))
            .collect();
        Self {
            slots,
            m,
            rot_group,
            ksi_pows,
        }
    }

    fn bit_reverse(vals: &mut [Complex64]) {
        let n = vals.len();
        let bits = n.trailing_zeros();
        if bits == 0 {
            return;
        }
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                vals.swap(i, j);
            }
        }
    }

    /// Slot values to the half-spectrum that becomes the plaintext polynomial.
    pub fn inverse(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        debug_assert_eq!(size, self.slots);
        let mut len = size;
        while len >= 2 {
            let lenh = len >> 1;
            let lenq = len << 2;
            let gap = self.m / lenq;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (lenq - self.rot_group[j] % lenq) * gap;
                    let u = vals[i + j] + vals[i + j + lenh];
                    let v = (vals[i + j] - vals[i + j + lenh]) * self.ksi_pows[idx];
                    vals[i + j] = u;
                    vals[i + j + lenh] = v;
                }
            }
            len >>= 1;
        }
        Self::bit_reverse(vals);
        let inv = 1.0 / size as f64;
        for v in vals.iter_mut() {
            *v *= inv;
        }
    }

    pub fn forward(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        debug_assert_eq!(size, self.slots);
        Self::bit_reverse(vals);
        let mut len = 2;
        while len <= size {
            let lenh = len >> 1;
            let lenq = len << 2;
            let gap = self.m / lenq;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (self.rot_group[j] % lenq) * gap;
                    let u = vals[i + j];
                    let v = vals[i + j + lenh] * self.ksi_pows[idx];
                    vals[i + j] = u + v;
                    vals[i + j + lenh] = u - v;
                }
            }
            len <<= 1;
        }
    }

    /// Real slot values to signed integer coefficients at the given scale.
    pub fn encode_coeffs(&self, values: &[f64], scale: f64) -> Vec<i128> {
        let mut vals = vec![Complex64::new(0.0, 0.0); self.slots];
        for (v, &x) in vals.iter_mut().zip(values) {
            v.re = x;
        }
        self.inverse(&mut vals);
        let n = 2 * self.slots;
        let mut coeffs = vec![0i128; n];
        for (i, v) in vals.iter().enumerate() {
            coeffs[i] = (v.re * scale).round() as i128;
            coeffs[i + self.slots] = (v.im * scale).round() as i128;
        }
        coeffs
    }

    /// Centered coefficients (as reals) back to real slot values.
    pub fn decode_coeffs(&self, coeffs: &[f64], scale: f64) -> Vec<f64> {
        let mut vals: Vec<Complex64> = (0..self.slots)
            .map(|i| Complex64::new(coeffs[i] / scale, coeffs[i + self.slots] / scale))
            .collect();
        self.forward(&mut vals);
        vals.into_iter().map(|v| v.re).collect()
    }

    /// Galois element rotating slots left by `steps`.
    pub fn galois_element(&self, steps: i64) -> usize {
        let k = steps.rem_euclid(self.slots as i64) as usize;
        self.rot_group[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Evaluates the plaintext polynomial at the slot roots directly.
    fn direct_decode(coeffs: &[f64], scale: f64) -> Vec<Complex64> {
        let n = coeffs.len();
        let m = 2 * n;
        let mut out = Vec::new();
        let mut g = 1usize;
        for _ in 0..n / 2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, &c) in coeffs.iter().enumerate() {
                acc += Complex64::from_polar(c / scale, 2.0 * PI * ((g * k) % m) as f64 / m as f64);
            }
            out.push(acc);
            g = g * 5 % m;
        }
        out
    }

    #[test]
    fn encoding_matches_direct_evaluation() {
        let fft = SlotFft::new(32);
        let values: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let scale = 2f64.powi(30);
        let coeffs: Vec<f64> = fft.encode_coeffs(&values, scale).iter().map(|&c| c as f64).collect();
        let direct = direct_decode(&coeffs, scale);
        for (d, v) in direct.iter().zip(&values) {
            assert!((d.re - v).abs() < 1e-7);
            assert!(d.im.abs() < 1e-7);
        }
        let fast = fft.decode_coeffs(&coeffs, scale);
        for (f, v) in fast.iter().zip(&values) {
            assert!((f - v).abs() < 1e-7);
        }
    }

    #[test]
    fn galois_rotation_on_polynomial() {
        let n = 32;
        let fft = SlotFft::new(n);
        let values: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let coeffs = fft.encode_coeffs(&values, 1e6);
        let g = fft.galois_element(3);
        let mut rotated = vec![0f64; n];
        for (k, &c) in coeffs.iter().enumerate() {
            let e = (k * g) % (2 * n);
            if e < n {
                rotated[e] += c as f64;
            } else {
                rotated[e - n] -= c as f64;
            }
        }
        let out = fft.decode_coeffs(&rotated, 1e6);
        for i in 0..16 {
            assert!((out[i] - values[(i + 3) % 16]).abs() < 1e-4, "slot {i}");
        }
    }
}
