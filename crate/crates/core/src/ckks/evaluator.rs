//! Ciphertexts and homomorphic operations.
//!
//! Ciphertexts are kept in NTT form. Every ciphertext produced at level `l`
//! by the usual pipeline (encrypt at the canonical scale, multiply, rescale)
//! carries exactly the canonical scale of `l`, so additions line up without
//! any coercion.

use std::sync::Arc;

use rand::Rng;

use super::context::{CkksContext, Plaintext};
use super::keys::{switch_key, EvalKeys, PublicKey, SecretKey, SwitchingKey};
use super::params::ParamsHash;
use crate::error::{Error, Result};
use crate::ring::{sample_gaussian, sample_ternary, Domain, RingPoly};

const SCALE_RTOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Ciphertext {
    pub(crate) polys: Vec<RingPoly>,
    pub(crate) scale: f64,
    pub(crate) hash: ParamsHash,
}

impl Ciphertext {
    pub fn level(&self) -> usize {
        self.polys[0].level()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn size(&self) -> usize {
        self.polys.len()
    }

    pub fn polys(&self) -> &[RingPoly] {
        &self.polys
    }

    pub fn params_hash(&self) -> ParamsHash {
        self.hash
    }
}

pub fn scales_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= SCALE_RTOL * a.abs().max(b.abs())
}

fn check_scales(a: f64, b: f64) -> Result<()> {
    if !scales_match(a, b) {
        return Err(Error::ScaleMismatch {
            left: a.log2(),
            right: b.log2(),
        });
    }
    Ok(())
}

fn check_levels(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Mismatch(format!("levels {a} and {b}")));
    }
    Ok(())
}

/// Public-key encryption at the plaintext's level and scale.
pub fn encrypt_pk<R: Rng>(ctx: &CkksContext, pt: &Plaintext, pk: &PublicKey, rng: &mut R) -> Result<Ciphertext> {
    if pk.hash != ctx.hash() {
        return Err(Error::ParamsHashMismatch);
    }
    let level = pt.level();
    if level > pk.b.level() {
        return Err(Error::InvalidParameter("plaintext level above key level".into()));
    }
    let basis = ctx.basis();
    let sigma = ctx.params().sigma;
    let mut v = sample_ternary(basis, level, ctx.params().hamming_weight, rng)?;
    v.set_domain(Domain::Ntt);
    let mut e0 = sample_gaussian(basis, level, sigma, rng);
    let mut e1 = sample_gaussian(basis, level, sigma, rng);
    e0.set_domain(Domain::Ntt);
    e1.set_domain(Domain::Ntt);
    let b = pk.b.truncate(level)?;
    let a = pk.a.truncate(level)?;
    let c0 = v.mul(&b)?.add(&e0)?.add(&pt.poly)?;
    let c1 = v.mul(&a)?.add(&e1)?;
    Ok(Ciphertext {
        polys: vec![c0, c1],
        scale: pt.scale,
        hash: ctx.hash(),
    })
}

/// Encodes at the canonical scale of `level` and encrypts.
pub fn encrypt_values<R: Rng>(
    ctx: &CkksContext,
    values: &[f64],
    level: usize,
    pk: &PublicKey,
    rng: &mut R,
) -> Result<Ciphertext> {
    let pt = ctx.encode_at(values, level)?;
    encrypt_pk(ctx, &pt, pk, rng)
}

pub fn decrypt(ctx: &CkksContext, ct: &Ciphertext, sk: &SecretKey) -> Result<Plaintext> {
    if ct.hash != ctx.hash() || sk.hash != ctx.hash() {
        return Err(Error::ParamsHashMismatch);
    }
    if ct.size() != 2 {
        return Err(Error::InvalidParameter(format!(
            "cannot decrypt a {}-component ciphertext",
            ct.size()
        )));
    }
    let s = sk.s.truncate(ct.level())?;
    let m = ct.polys[0].add(&ct.polys[1].mul(&s)?)?;
    Ok(Plaintext { poly: m, scale: ct.scale })
}

pub fn decrypt_values(ctx: &CkksContext, ct: &Ciphertext, sk: &SecretKey) -> Result<Vec<f64>> {
    Ok(ctx.decode(&decrypt(ctx, ct, sk)?))
}

/// Homomorphic operations backed by the evaluation keys.
#[derive(Clone)]
pub struct Evaluator {
    ctx: Arc<CkksContext>,
    keys: Arc<EvalKeys>,
}

impl Evaluator {
    pub fn new(ctx: Arc<CkksContext>, keys: Arc<EvalKeys>) -> Result<Self> {
        if keys.relin.hash != ctx.hash() || keys.rotations.hash != ctx.hash() {
            return Err(Error::ParamsHashMismatch);
        }
        Ok(Self { ctx, keys })
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    pub fn keys(&self) -> &Arc<EvalKeys> {
        &self.keys
    }

    fn check(&self, ct: &Ciphertext) -> Result<()> {
        if ct.hash != self.ctx.hash() {
            return Err(Error::ParamsHashMismatch);
        }
        if ct.size() != 2 {
            return Err(Error::InvalidParameter("expected a relinearized ciphertext".into()));
        }
        Ok(())
    }

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.check(a)?;
        self.check(b)?;
        check_levels(a.level(), b.level())?;
        check_scales(a.scale, b.scale)?;
        let polys = a
            .polys
            .iter()
            .zip(&b.polys)
            .map(|(x, y)| x.add(y))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ciphertext { polys, ..a.clone_header() })
    }

    pub fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.add(a, &self.neg(b)?)
    }

    pub fn neg(&self, a: &Ciphertext) -> Result<Ciphertext> {
        self.check(a)?;
        Ok(Ciphertext {
            polys: a.polys.iter().map(|p| p.neg()).collect(),
            ..a.clone_header()
        })
    }

    /// Sums a non-empty list of ciphertexts sharing level and scale.
    pub fn add_many(&self, cts: &[Ciphertext]) -> Result<Ciphertext> {
        let (first, rest) = cts
            .split_first()
            .ok_or_else(|| Error::InvalidParameter("empty sum".into()))?;
        let mut acc = first.clone();
        for c in rest {
            self.check(c)?;
            check_levels(acc.level(), c.level())?;
            check_scales(acc.scale, c.scale)?;
            for (x, y) in acc.polys.iter_mut().zip(&c.polys) {
                x.add_assign(y);
            }
        }
        Ok(acc)
    }

    pub fn add_plain(&self, a: &Ciphertext, p: &Plaintext) -> Result<Ciphertext> {
        self.check(a)?;
        check_levels(a.level(), p.level())?;
        check_scales(a.scale, p.scale)?;
        let mut out = a.clone();
        out.polys[0] = out.polys[0].add(&p.poly)?;
        Ok(out)
    }

    pub fn sub_plain(&self, a: &Ciphertext, p: &Plaintext) -> Result<Ciphertext> {
        self.check(a)?;
        check_levels(a.level(), p.level())?;
        check_scales(a.scale, p.scale)?;
        let mut out = a.clone();
        out.polys[0] = out.polys[0].sub(&p.poly)?;
        Ok(out)
    }

    /// Adds the same real constant to every slot.
    pub fn add_const(&self, a: &Ciphertext, c: f64) -> Result<Ciphertext> {
        self.check(a)?;
        let v = (c * a.scale).round() as i128;
        let mut out = a.clone();
        // a constant polynomial is constant in every NTT slot
        let basis = self.ctx.basis().clone();
        for (i, row) in out.polys[0].residues_mut().iter_mut().enumerate() {
            let q = basis.field(i).modulus();
            let r = q.reduce_i128(v);
            for x in row.iter_mut() {
                *x = q.add(*x, r);
            }
        }
        Ok(out)
    }

    /// Multiplies by a small integer; no scale change, no level consumed.
    pub fn mul_integer(&self, a: &Ciphertext, k: i64) -> Result<Ciphertext> {
        self.check(a)?;
        Ok(Ciphertext {
            polys: a.polys.iter().map(|p| p.mul_scalar(k)).collect(),
            ..a.clone_header()
        })
    }

    /// Tensor product without relinearization (three components).
    pub fn mult_no_relin(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.check(a)?;
        self.check(b)?;
        check_levels(a.level(), b.level())?;
        let scale = a.scale * b.scale;
        if scale.log2() + 1.0 >= self.ctx.log_modulus(a.level()) {
            return Err(Error::LevelExhausted {
                needed: a.level() + 1,
                available: a.level(),
            });
        }
        let (a0, a1) = (&a.polys[0], &a.polys[1]);
        let (b0, b1) = (&b.polys[0], &b.polys[1]);
        let d0 = a0.mul(b0)?;
        let d1 = a0.mul(b1)?.add(&a1.mul(b0)?)?;
        let d2 = a1.mul(b1)?;
        Ok(Ciphertext {
            polys: vec![d0, d1, d2],
            scale,
            hash: a.hash,
        })
    }

    pub fn relinearize(&self, ct: &Ciphertext) -> Result<Ciphertext> {
        if ct.size() == 2 {
            return Ok(ct.clone());
        }
        if ct.size() != 3 {
            return Err(Error::InvalidParameter("unexpected ciphertext size".into()));
        }
        let (k0, k1) = switch_key(&self.ctx, &ct.polys[2], &self.keys.relin.key)?;
        Ok(Ciphertext {
            polys: vec![ct.polys[0].add(&k0)?, ct.polys[1].add(&k1)?],
            scale: ct.scale,
            hash: ct.hash,
        })
    }

    /// Relinearized product; the scale is the product of scales.
    pub fn mult(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let t = self.mult_no_relin(a, b)?;
        self.relinearize(&t)
    }

    pub fn square(&self, a: &Ciphertext) -> Result<Ciphertext> {
        self.mult(a, a)
    }

    pub fn mult_plain(&self, a: &Ciphertext, p: &Plaintext) -> Result<Ciphertext> {
        self.check(a)?;
        check_levels(a.level(), p.level())?;
        let scale = a.scale * p.scale;
        if scale.log2() + 1.0 >= self.ctx.log_modulus(a.level()) {
            return Err(Error::LevelExhausted {
                needed: a.level() + 1,
                available: a.level(),
            });
        }
        let polys = a.polys.iter().map(|x| x.mul(&p.poly)).collect::<Result<Vec<_>>>()?;
        Ok(Ciphertext {
            polys,
            scale,
            hash: a.hash,
        })
    }

    /// Multiplies by a real constant encoded at the canonical scale of the ciphertext's level.
    pub fn mult_const(&self, a: &Ciphertext, c: f64) -> Result<Ciphertext> {
        self.mult_const_scaled(a, c, self.ctx.scale_at(a.level()))
    }

    fn mult_const_scaled(&self, a: &Ciphertext, c: f64, const_scale: f64) -> Result<Ciphertext> {
        self.check(a)?;
        let v = (c * const_scale).round();
        if !v.is_finite() || v.abs() >= 2f64.powi(120) {
            return Err(Error::InvalidParameter("constant too large".into()));
        }
        let v = v as i128;
        let basis = self.ctx.basis().clone();
        let per_prime: Vec<u64> = (0..a.level()).map(|i| basis.field(i).modulus().reduce_i128(v)).collect();
        Ok(Ciphertext {
            polys: a.polys.iter().map(|p| p.mul_rns_scalar(&per_prime)).collect(),
            scale: a.scale * const_scale,
            hash: a.hash,
        })
    }

    /// Drops the last prime, dividing the scale by it.
    pub fn rescale(&self, a: &Ciphertext) -> Result<Ciphertext> {
        if a.level() < 2 {
            return Err(Error::LevelExhausted {
                needed: 2,
                available: a.level(),
            });
        }
        let dropped = self.ctx.prime(a.level() - 1) as f64;
        let polys = a.polys.iter().map(|p| p.drop_last_prime()).collect::<Result<Vec<_>>>()?;
        let new_level = a.level() - 1;
        let mut scale = a.scale / dropped;
        let canonical = self.ctx.scale_at(new_level);
        if scales_match(scale, canonical) {
            scale = canonical;
        }
        Ok(Ciphertext {
            polys,
            scale,
            hash: a.hash,
        })
    }

    pub fn mult_rescale(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.rescale(&self.mult(a, b)?)
    }

    pub fn mult_plain_rescale(&self, a: &Ciphertext, p: &Plaintext) -> Result<Ciphertext> {
        self.rescale(&self.mult_plain(a, p)?)
    }

    pub fn mult_const_rescale(&self, a: &Ciphertext, c: f64) -> Result<Ciphertext> {
        self.rescale(&self.mult_const(a, c)?)
    }

    /// Multiplies by `c` and lands on the canonical scale of `target < level`.
    pub fn mult_const_to(&self, a: &Ciphertext, c: f64, target: usize) -> Result<Ciphertext> {
        self.check(a)?;
        if target == 0 || target >= a.level() {
            return Err(Error::InvalidParameter(format!(
                "target level {target} must be below current level {}",
                a.level()
            )));
        }
        let dropped = self.truncate(a, target + 1)?;
        let const_scale = self.ctx.scale_at(target) * self.ctx.prime(target) as f64 / a.scale;
        let out = self.rescale(&self.mult_const_scaled(&dropped, c, const_scale)?)?;
        Ok(Ciphertext {
            scale: self.ctx.scale_at(target),
            ..out
        })
    }

    /// Slot-wise product with `values`, landing on the canonical scale of `target < level`.
    pub fn mult_values_to(&self, a: &Ciphertext, values: &[f64], target: usize) -> Result<Ciphertext> {
        self.check(a)?;
        if target == 0 || target >= a.level() {
            return Err(Error::InvalidParameter(format!(
                "target level {target} must be below current level {}",
                a.level()
            )));
        }
        let dropped = self.truncate(a, target + 1)?;
        let const_scale = self.ctx.scale_at(target) * self.ctx.prime(target) as f64 / a.scale;
        let pt = self.ctx.encode(values, const_scale, target + 1)?;
        let out = self.rescale(&self.mult_plain(&dropped, &pt)?)?;
        Ok(Ciphertext {
            scale: self.ctx.scale_at(target),
            ..out
        })
    }

    /// Brings a ciphertext down to `target` at that level's canonical scale.
    pub fn level_down(&self, a: &Ciphertext, target: usize) -> Result<Ciphertext> {
        if target == a.level() {
            return Ok(a.clone());
        }
        self.mult_const_to(a, 1.0, target)
    }

    /// Multiplies by 1 encoded so that the result, one level lower, has `target_scale`.
    pub fn adjust_scale(&self, a: &Ciphertext, target_scale: f64) -> Result<Ciphertext> {
        if a.level() < 2 {
            return Err(Error::LevelExhausted {
                needed: 2,
                available: a.level(),
            });
        }
        let const_scale = target_scale * self.ctx.prime(a.level() - 1) as f64 / a.scale;
        if const_scale < 1.0 {
            return Err(Error::InvalidParameter("target scale too small".into()));
        }
        let out = self.rescale(&self.mult_const_scaled(a, 1.0, const_scale)?)?;
        Ok(Ciphertext {
            scale: target_scale,
            ..out
        })
    }

    /// Drops primes without dividing; the scale is unchanged.
    pub fn truncate(&self, a: &Ciphertext, level: usize) -> Result<Ciphertext> {
        let polys = a.polys.iter().map(|p| p.truncate(level)).collect::<Result<Vec<_>>>()?;
        Ok(Ciphertext { polys, ..a.clone_header() })
    }

    fn apply_galois(&self, a: &Ciphertext, step: usize, key: &SwitchingKey) -> Result<Ciphertext> {
        let g = self.ctx.galois_element(step as i64);
        let c0 = a.polys[0].automorphism(g)?;
        let c1 = a.polys[1].automorphism(g)?;
        let (k0, k1) = switch_key(&self.ctx, &c1, key)?;
        Ok(Ciphertext {
            polys: vec![c0.add(&k0)?, k1],
            ..a.clone_header()
        })
    }

    /// Rotates slots left by `steps`: output slot `i` holds input slot `i + steps`.
    ///
    /// Steps without a dedicated key are split into signed powers of two.
    pub fn rotate(&self, a: &Ciphertext, steps: i64) -> Result<Ciphertext> {
        self.check(a)?;
        let slots = self.ctx.slot_count();
        let step = steps.rem_euclid(slots as i64) as usize;
        if step == 0 {
            return Ok(a.clone());
        }
        if let Some(key) = self.keys.rotations.get(step) {
            return self.apply_galois(a, step, key);
        }
        let mut out = a.clone();
        for part in signed_binary(step, slots) {
            let key = self
                .keys
                .rotations
                .get(part)
                .ok_or_else(|| Error::MissingKey(format!("rotation by {part}")))?;
            out = self.apply_galois(&out, part, key)?;
        }
        Ok(out)
    }

    pub fn rotate_right(&self, a: &Ciphertext, steps: i64) -> Result<Ciphertext> {
        self.rotate(a, -steps)
    }
}

/// Non-adjacent form of `step` modulo `slots`, as left steps in `[0, slots)`.
fn signed_binary(step: usize, slots: usize) -> Vec<usize> {
    let mut parts = Vec::new();
    let mut k = step as i64;
    let mut bit = 1i64;
    while k != 0 {
        if k & 1 == 1 {
            let digit = 2 - (k & 3);
            k -= digit;
            parts.push((digit * bit).rem_euclid(slots as i64) as usize);
        }
        k >>= 1;
        bit <<= 1;
    }
    parts.retain(|&p| p != 0);
    parts
}

impl Ciphertext {
    fn clone_header(&self) -> Ciphertext {
        Ciphertext {
            polys: Vec::new(),
            scale: self.scale,
            hash: self.hash,
        }
    }
}
