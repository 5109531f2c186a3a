//! Key material and hybrid key switching.
//!
//! Switching keys live over the full chain plus the special primes, one
//! `(b_j, a_j)` pair per digit of `alpha` consecutive base primes, where
//! `b_j = -a_j*s + e_j + P*g_j*s'` and `g_j` is the CRT indicator of digit `j`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::context::CkksContext;
use super::params::ParamsHash;
use crate::error::{Error, Result};
use crate::ring::{sample_gaussian, sample_ternary, sample_uniform, Domain, Modulus, RingPoly};

/// Ternary secret in NTT form over base and special primes.
#[derive(Clone)]
pub struct SecretKey {
    pub(crate) s: RingPoly,
    pub(crate) hash: ParamsHash,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl SecretKey {
    pub fn params_hash(&self) -> ParamsHash {
        self.hash
    }
}

/// `(b, a)` with `b = -a*s + e`, NTT form over the base primes.
#[derive(Clone, Debug, PartialEq)]
pub struct PublicKey {
    pub(crate) b: RingPoly,
    pub(crate) a: RingPoly,
    pub(crate) hash: ParamsHash,
}

impl PublicKey {
    pub fn params_hash(&self) -> ParamsHash {
        self.hash
    }

    pub fn parts(&self) -> (&RingPoly, &RingPoly) {
        (&self.b, &self.a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchingKey {
    pub(crate) digits: Vec<(RingPoly, RingPoly)>,
}

impl SwitchingKey {
    pub fn digit_count(&self) -> usize {
        self.digits.len()
    }
}

/// Relinearization key for `s^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationKey {
    pub(crate) key: SwitchingKey,
    pub(crate) hash: ParamsHash,
}

impl EvaluationKey {
    pub fn params_hash(&self) -> ParamsHash {
        self.hash
    }
}

/// Switching keys for slot rotations, indexed by left-rotation step in `[0, slots)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationKeySet {
    pub(crate) keys: BTreeMap<usize, SwitchingKey>,
    pub(crate) hash: ParamsHash,
}

impl RotationKeySet {
    pub fn params_hash(&self) -> ParamsHash {
        self.hash
    }

    pub fn steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.keys.keys().copied()
    }

    pub fn contains(&self, step: usize) -> bool {
        self.keys.contains_key(&step)
    }

    pub(crate) fn get(&self, step: usize) -> Option<&SwitchingKey> {
        self.keys.get(&step)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Everything the evaluating party needs: relinearization and rotation keys.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalKeys {
    pub relin: EvaluationKey,
    pub rotations: RotationKeySet,
}

pub struct KeySet {
    pub secret: SecretKey,
    pub public: PublicKey,
    pub eval: EvalKeys,
}

/// Every power of two below the slot count and its negative, as left steps in `[0, slots)`.
pub fn default_rotation_steps(slots: usize) -> Vec<usize> {
    let mut steps = Vec::new();
    let mut k = 1;
    while k < slots {
        steps.push(k);
        steps.push(slots - k);
        k <<= 1;
    }
    steps.sort_unstable();
    steps.dedup();
    steps
}

/// Deterministic key generation from a seed.
pub fn keygen(ctx: &CkksContext, seed: u64) -> Result<KeySet> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let secret = generate_secret(ctx, &mut rng)?;
    let public = generate_public(ctx, &secret, &mut rng)?;
    let relin = generate_relin(ctx, &secret, &mut rng)?;
    let rotations = generate_rotations(ctx, &secret, &default_rotation_steps(ctx.slot_count()), &mut rng)?;
    Ok(KeySet {
        secret,
        public,
        eval: EvalKeys { relin, rotations },
    })
}

pub fn generate_secret<R: Rng>(ctx: &CkksContext, rng: &mut R) -> Result<SecretKey> {
    let mut s = sample_ternary(ctx.basis(), ctx.key_level(), ctx.params().hamming_weight, rng)?;
    s.set_domain(Domain::Ntt);
    Ok(SecretKey { s, hash: ctx.hash() })
}

fn check_hash(ctx: &CkksContext, hash: ParamsHash) -> Result<()> {
    if hash != ctx.hash() {
        return Err(Error::ParamsHashMismatch);
    }
    Ok(())
}

pub fn generate_public<R: Rng>(ctx: &CkksContext, sk: &SecretKey, rng: &mut R) -> Result<PublicKey> {
    check_hash(ctx, sk.hash)?;
    let level = ctx.max_level();
    let a = sample_uniform(ctx.basis(), level, Domain::Ntt, rng);
    let mut e = sample_gaussian(ctx.basis(), level, ctx.params().sigma, rng);
    e.set_domain(Domain::Ntt);
    let s = sk.s.truncate(level)?;
    let b = e.sub(&a.mul(&s)?)?;
    Ok(PublicKey { b, a, hash: ctx.hash() })
}

pub fn generate_relin<R: Rng>(ctx: &CkksContext, sk: &SecretKey, rng: &mut R) -> Result<EvaluationKey> {
    check_hash(ctx, sk.hash)?;
    let s2 = sk.s.mul(&sk.s)?;
    Ok(EvaluationKey {
        key: switching_key(ctx, &sk.s, &s2, rng)?,
        hash: ctx.hash(),
    })
}

pub fn generate_rotations<R: Rng>(
    ctx: &CkksContext,
    sk: &SecretKey,
    steps: &[usize],
    rng: &mut R,
) -> Result<RotationKeySet> {
    check_hash(ctx, sk.hash)?;
    let mut keys = BTreeMap::new();
    for &step in steps {
        let step = step % ctx.slot_count();
        if step == 0 || keys.contains_key(&step) {
            continue;
        }
        let g = ctx.galois_element(step as i64);
        let rotated = sk.s.automorphism(g)?;
        keys.insert(step, switching_key(ctx, &sk.s, &rotated, rng)?);
    }
    Ok(RotationKeySet { keys, hash: ctx.hash() })
}

/// Key that switches a ciphertext component under `target` to one under `s`.
fn switching_key<R: Rng>(ctx: &CkksContext, s: &RingPoly, target: &RingPoly, rng: &mut R) -> Result<SwitchingKey> {
    let basis = ctx.basis();
    let key_level = ctx.key_level();
    let base = ctx.max_level();
    let alpha = ctx.params().digit_size();
    let specials = &basis.fields()[base..];
    let digits = base.div_ceil(alpha);
    let mut out = Vec::with_capacity(digits);
    for j in 0..digits {
        let a = sample_uniform(basis, key_level, Domain::Ntt, rng);
        let mut e = sample_gaussian(basis, key_level, ctx.params().sigma, rng);
        e.set_domain(Domain::Ntt);
        let mut b = e.sub(&a.mul(s)?)?;
        let lo = j * alpha;
        let hi = ((j + 1) * alpha).min(base);
        let rows = b.residues_mut();
        for i in lo..hi {
            let q = basis.field(i).modulus();
            let p_mod_q = specials.iter().fold(1u64, |acc, f| q.mul(acc, q.reduce(f.prime())));
            let p_shoup = q.shoup(p_mod_q);
            for (x, &t) in rows[i].iter_mut().zip(target.residue(i)) {
                *x = q.add(*x, q.mul_shoup(t, p_mod_q, p_shoup));
            }
        }
        out.push((b, a));
    }
    Ok(SwitchingKey { digits: out })
}

/// Basis conversion of coefficient-form residues to the centered representative.
///
/// The overflow count `v = round(sum_i y_i / d_i)` is estimated in floating
/// point and removed, so the output represents the value in `(-D/2, D/2]`.
pub(crate) fn convert_basis(src: &[&Modulus], src_rows: &[&[u64]], dst: &[&Modulus]) -> Vec<Vec<u64>> {
    let n = src_rows[0].len();
    let k = src.len();
    // y_i = x_i * (D / d_i)^{-1} mod d_i
    let ys: Vec<Vec<u64>> = src
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let hat = src
                .iter()
                .enumerate()
                .filter(|&(t, _)| t != i)
                .fold(1u64, |acc, (_, other)| q.mul(acc, q.reduce(other.value())));
            let hat_inv = q.inv(hat);
            let hs = q.shoup(hat_inv);
            src_rows[i].iter().map(|&x| q.mul_shoup(x, hat_inv, hs)).collect()
        })
        .collect();
    let inv_src: Vec<f64> = src.iter().map(|q| 1.0 / q.value() as f64).collect();
    let mut sums = vec![0.0f64; n];
    for (y, &inv) in ys.iter().zip(&inv_src) {
        for (s, &v) in sums.iter_mut().zip(y) {
            *s += v as f64 * inv;
        }
    }
    // each term is below 1, so the count lies in 0..=k
    let overflow: Vec<u64> = sums.iter().map(|s| s.round() as u64).collect();
    dst.iter()
        .map(|p| {
            let hats: Vec<u64> = (0..k)
                .map(|i| {
                    (0..k)
                        .filter(|&t| t != i)
                        .fold(1u64, |acc, t| p.mul(acc, p.reduce(src[t].value())))
                })
                .collect();
            let d_mod_p = src.iter().fold(1u64, |acc, q| p.mul(acc, p.reduce(q.value())));
            let correction: Vec<u64> = (0..=k as u64).map(|v| p.neg(p.mul(v, d_mod_p))).collect();
            let mut out: Vec<u64> = overflow.iter().map(|&v| correction[v as usize]).collect();
            let mut wide = vec![0u128; n];
            // products stay below 2^124, so 8 of them fit in a u128
            for (chunk_y, chunk_h) in ys.chunks(8).zip(hats.chunks(8)) {
                wide.iter_mut().for_each(|w| *w = 0);
                for (y, &h) in chunk_y.iter().zip(chunk_h) {
                    for (w, &v) in wide.iter_mut().zip(y.iter()) {
                        *w += v as u128 * h as u128;
                    }
                }
                for (o, &w) in out.iter_mut().zip(&wide) {
                    *o = p.add(*o, p.reduce_u128(w));
                }
            }
            out
        })
        .collect()
}

/// Applies a switching key to `d` (either domain) at level `l`,
/// returning NTT-form `(k0, k1)` with `k0 + k1*s ~ d*s'`.
pub(crate) fn switch_key(ctx: &CkksContext, d: &RingPoly, key: &SwitchingKey) -> Result<(RingPoly, RingPoly)> {
    let (d, d_ntt) = match d.domain() {
        Domain::Ntt => (d.to_domain(Domain::Coefficient), d.clone()),
        Domain::Coefficient => (d.clone(), d.to_domain(Domain::Ntt)),
    };
    let d = &d;
    let basis = ctx.basis();
    let n = ctx.degree();
    let level = d.level();
    let base = ctx.max_level();
    let alpha = ctx.params().digit_size();
    let special_idx: Vec<usize> = (base..ctx.key_level()).collect();
    // active primes: q_0..q_{l-1} then the special primes
    let active: Vec<usize> = (0..level).chain(special_idx.iter().copied()).collect();
    let digits = level.div_ceil(alpha);
    if digits > key.digits.len() {
        return Err(Error::MissingKey("switching key has too few digits".into()));
    }
    let mut acc0 = vec![vec![0u64; n]; active.len()];
    let mut acc1 = vec![vec![0u64; n]; active.len()];
    for j in 0..digits {
        let lo = j * alpha;
        let hi = ((j + 1) * alpha).min(level);
        let src_mods: Vec<&Modulus> = (lo..hi).map(|i| basis.field(i).modulus()).collect();
        let src_rows: Vec<&[u64]> = (lo..hi).map(|i| d.residue(i)).collect();
        let targets: Vec<usize> = active.iter().copied().filter(|&i| i < lo || i >= hi).collect();
        let dst_mods: Vec<&Modulus> = targets.iter().map(|&i| basis.field(i).modulus()).collect();
        let mut converted = convert_basis(&src_mods, &src_rows, &dst_mods);
        for (row, &i) in converted.iter_mut().zip(&targets) {
            basis.field(i).forward(row);
        }
        let (kb, ka) = &key.digits[j];
        let mut conv_iter = converted.iter();
        for (slot, &i) in active.iter().enumerate() {
            let ext: &[u64] = if i >= lo && i < hi {
                d_ntt.residue(i)
            } else {
                conv_iter.next().expect("one converted row per target")
            };
            let q = basis.field(i).modulus();
            let (b_row, a_row) = (kb.residue(i), ka.residue(i));
            let (r0, r1) = (&mut acc0[slot], &mut acc1[slot]);
            for c in 0..n {
                r0[c] = q.add(r0[c], q.mul(ext[c], b_row[c]));
                r1[c] = q.add(r1[c], q.mul(ext[c], a_row[c]));
            }
        }
    }
    let k0 = mod_down(ctx, acc0, level)?;
    let k1 = mod_down(ctx, acc1, level)?;
    Ok((k0, k1))
}

/// Divides an NTT-form value over `Q_l * P` by `P`, rounding, and returns it over `Q_l`.
fn mod_down(ctx: &CkksContext, mut rows: Vec<Vec<u64>>, level: usize) -> Result<RingPoly> {
    let basis = ctx.basis();
    let base = ctx.max_level();
    let special: Vec<usize> = (base..ctx.key_level()).collect();
    let mut p_rows = rows.split_off(level);
    for (row, &i) in p_rows.iter_mut().zip(&special) {
        basis.field(i).inverse(row);
    }
    let src_mods: Vec<&Modulus> = special.iter().map(|&i| basis.field(i).modulus()).collect();
    let src_rows: Vec<&[u64]> = p_rows.iter().map(|r| r.as_slice()).collect();
    let dst_mods: Vec<&Modulus> = (0..level).map(|i| basis.field(i).modulus()).collect();
    let mut conv = convert_basis(&src_mods, &src_rows, &dst_mods);
    for (i, (row, c)) in rows.iter_mut().zip(conv.iter_mut()).enumerate() {
        let f = basis.field(i);
        f.forward(c);
        let q = f.modulus();
        let p_inv = q.inv(special.iter().fold(1u64, |acc, &s| q.mul(acc, q.reduce(basis.field(s).prime()))));
        let ps = q.shoup(p_inv);
        for (x, &y) in row.iter_mut().zip(c.iter()) {
            *x = q.mul_shoup(q.sub(*x, y), p_inv, ps);
        }
    }
    RingPoly::from_residues(basis, Domain::Ntt, rows)
}
