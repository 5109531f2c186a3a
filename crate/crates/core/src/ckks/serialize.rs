//! CKX1 binary encoding of keys and ciphertexts.
//!
//! ```text
//! "CKX1" | version u8 | params hash [8] | kind u8 | level u8 | poly count u8 |
//! scale i32 (round(log2(scale) * 2^16)) | residues
//! ```
//! Residues are coefficient-form, little-endian `u64`: for each poly, for each
//! active prime in chain order, `N` words. Key objects span base and special
//! primes. A rotation key set is a `u32` count followed by `(u32 step, object)` pairs.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::context::CkksContext;
use super::evaluator::Ciphertext;
use super::keys::{EvaluationKey, PublicKey, RotationKeySet, SecretKey, SwitchingKey};
use crate::error::{Error, Result};
use crate::ring::{Domain, RingPoly};

pub const MAGIC: &[u8; 4] = b"CKX1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ObjectKind {
    SecretKey = 1,
    PublicKey = 2,
    EvaluationKey = 3,
    RotationKey = 4,
    Ciphertext = 5,
}

impl ObjectKind {
    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            1 => ObjectKind::SecretKey,
            2 => ObjectKind::PublicKey,
            3 => ObjectKind::EvaluationKey,
            4 => ObjectKind::RotationKey,
            5 => ObjectKind::Ciphertext,
            _ => return Err(Error::format(format!("unknown object kind {v}"))),
        })
    }
}

fn scale_to_fixed(scale: f64) -> i32 {
    if scale <= 0.0 {
        0
    } else {
        (scale.log2() * 65536.0).round() as i32
    }
}

fn write_object(ctx: &CkksContext, kind: ObjectKind, scale: f64, polys: &[&RingPoly], out: &mut Vec<u8>) {
    let level = polys[0].level();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&ctx.hash());
    out.push(kind as u8);
    out.push(level as u8);
    out.push(polys.len() as u8);
    out.extend_from_slice(&scale_to_fixed(scale).to_le_bytes());
    out.reserve(polys.len() * level * ctx.degree() * 8);
    for p in polys {
        let coeff = p.to_domain(Domain::Coefficient);
        for row in coeff.residues() {
            for x in row {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

struct Object {
    kind: ObjectKind,
    scale_fixed: i32,
    polys: Vec<RingPoly>,
}

/// Byte cursor over a borrowed slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format("truncated input"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

fn read_object(ctx: &CkksContext, r: &mut Reader<'_>) -> Result<Object> {
    if r.take(4)? != MAGIC {
        return Err(Error::format("bad CKX1 magic"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported CKX1 version {version}")));
    }
    let hash = r.take(8)?;
    if hash != ctx.hash() {
        return Err(Error::ParamsHashMismatch);
    }
    let kind = ObjectKind::from_u8(r.u8()?)?;
    let level = r.u8()? as usize;
    let count = r.u8()? as usize;
    let scale_fixed = r.i32()?;
    if level == 0 || level > ctx.key_level() || count == 0 {
        return Err(Error::format("level or poly count out of range"));
    }
    let n = ctx.degree();
    let basis = ctx.basis();
    let mut polys = Vec::with_capacity(count);
    for _ in 0..count {
        let mut rows = Vec::with_capacity(level);
        for i in 0..level {
            let bytes = r.take(n * 8)?;
            let q = basis.field(i).prime();
            let row: Vec<u64> = bytes
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if row.iter().any(|&x| x >= q) {
                return Err(Error::format("residue out of range"));
            }
            rows.push(row);
        }
        let mut p = RingPoly::from_residues(basis, Domain::Coefficient, rows)?;
        p.set_domain(Domain::Ntt);
        polys.push(p);
    }
    Ok(Object {
        kind,
        scale_fixed,
        polys,
    })
}

fn expect(obj: &Object, kind: ObjectKind, level: usize, count: usize) -> Result<()> {
    if obj.kind != kind {
        return Err(Error::format(format!("expected {kind:?}, found {:?}", obj.kind)));
    }
    if obj.polys[0].level() != level || obj.polys.len() != count {
        return Err(Error::format(format!("{kind:?} has unexpected shape")));
    }
    Ok(())
}

pub fn ciphertext_to_bytes(ctx: &CkksContext, ct: &Ciphertext, out: &mut Vec<u8>) {
    let polys: Vec<&RingPoly> = ct.polys.iter().collect();
    write_object(ctx, ObjectKind::Ciphertext, ct.scale, &polys, out);
}

pub fn ciphertext_bytes(ctx: &CkksContext, ct: &Ciphertext) -> Vec<u8> {
    let mut out = Vec::new();
    ciphertext_to_bytes(ctx, ct, &mut out);
    out
}

pub(crate) fn read_ciphertext(ctx: &CkksContext, r: &mut Reader<'_>) -> Result<Ciphertext> {
    let obj = read_object(ctx, r)?;
    if obj.kind != ObjectKind::Ciphertext || obj.polys.len() != 2 || obj.polys[0].level() > ctx.max_level() {
        return Err(Error::format("not a two-component ciphertext"));
    }
    let level = obj.polys[0].level();
    let log2 = obj.scale_fixed as f64 / 65536.0;
    let canonical = ctx.scale_at(level);
    let scale = if (canonical.log2() - log2).abs() <= 1.0 / 65536.0 {
        canonical
    } else {
        2f64.powf(log2)
    };
    Ok(Ciphertext {
        polys: obj.polys,
        scale,
        hash: ctx.hash(),
    })
}

pub fn ciphertext_from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<Ciphertext> {
    let mut r = Reader::new(bytes);
    let ct = read_ciphertext(ctx, &mut r)?;
    r.finish()?;
    Ok(ct)
}

pub fn secret_key_bytes(ctx: &CkksContext, sk: &SecretKey) -> Vec<u8> {
    let mut out = Vec::new();
    write_object(ctx, ObjectKind::SecretKey, 0.0, &[&sk.s], &mut out);
    out
}

pub fn secret_key_from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<SecretKey> {
    let mut r = Reader::new(bytes);
    let obj = read_object(ctx, &mut r)?;
    r.finish()?;
    expect(&obj, ObjectKind::SecretKey, ctx.key_level(), 1)?;
    Ok(SecretKey {
        s: obj.polys.into_iter().next().unwrap(),
        hash: ctx.hash(),
    })
}

pub fn public_key_to_bytes(ctx: &CkksContext, pk: &PublicKey, out: &mut Vec<u8>) {
    write_object(ctx, ObjectKind::PublicKey, 0.0, &[&pk.b, &pk.a], out);
}

pub(crate) fn read_public_key(ctx: &CkksContext, r: &mut Reader<'_>) -> Result<PublicKey> {
    let obj = read_object(ctx, r)?;
    expect(&obj, ObjectKind::PublicKey, ctx.max_level(), 2)?;
    let mut it = obj.polys.into_iter();
    Ok(PublicKey {
        b: it.next().unwrap(),
        a: it.next().unwrap(),
        hash: ctx.hash(),
    })
}

fn switching_key_to_bytes(ctx: &CkksContext, kind: ObjectKind, key: &SwitchingKey, out: &mut Vec<u8>) {
    let polys: Vec<&RingPoly> = key.digits.iter().flat_map(|(b, a)| [b, a]).collect();
    write_object(ctx, kind, 0.0, &polys, out);
}

fn read_switching_key(ctx: &CkksContext, kind: ObjectKind, r: &mut Reader<'_>) -> Result<SwitchingKey> {
    let obj = read_object(ctx, r)?;
    let digits = ctx.max_level().div_ceil(ctx.params().digit_size());
    expect(&obj, kind, ctx.key_level(), 2 * digits)?;
    let mut it = obj.polys.into_iter();
    let digits = (0..digits).map(|_| (it.next().unwrap(), it.next().unwrap())).collect();
    Ok(SwitchingKey { digits })
}

pub fn evaluation_key_to_bytes(ctx: &CkksContext, evk: &EvaluationKey, out: &mut Vec<u8>) {
    switching_key_to_bytes(ctx, ObjectKind::EvaluationKey, &evk.key, out);
}

pub(crate) fn read_evaluation_key(ctx: &CkksContext, r: &mut Reader<'_>) -> Result<EvaluationKey> {
    Ok(EvaluationKey {
        key: read_switching_key(ctx, ObjectKind::EvaluationKey, r)?,
        hash: ctx.hash(),
    })
}

pub fn rotation_keys_to_bytes(ctx: &CkksContext, rks: &RotationKeySet, out: &mut Vec<u8>) {
    out.extend_from_slice(&(rks.keys.len() as u32).to_le_bytes());
    for (&step, key) in &rks.keys {
        out.extend_from_slice(&(step as u32).to_le_bytes());
        switching_key_to_bytes(ctx, ObjectKind::RotationKey, key, out);
    }
}

pub(crate) fn read_rotation_keys(ctx: &CkksContext, r: &mut Reader<'_>) -> Result<RotationKeySet> {
    let count = r.u32()? as usize;
    if count > 2 * ctx.slot_count() {
        return Err(Error::format("too many rotation keys"));
    }
    let mut keys = BTreeMap::new();
    for _ in 0..count {
        let step = r.u32()? as usize;
        if step == 0 || step >= ctx.slot_count() {
            return Err(Error::format("rotation step out of range"));
        }
        keys.insert(step, read_switching_key(ctx, ObjectKind::RotationKey, r)?);
    }
    Ok(RotationKeySet { keys, hash: ctx.hash() })
}

/// Public key, relinearization key and rotation keys in one blob.
pub fn public_material_bytes(ctx: &CkksContext, pk: &PublicKey, evk: &EvaluationKey, rks: &RotationKeySet) -> Vec<u8> {
    let mut out = Vec::new();
    public_key_to_bytes(ctx, pk, &mut out);
    evaluation_key_to_bytes(ctx, evk, &mut out);
    rotation_keys_to_bytes(ctx, rks, &mut out);
    out
}

pub fn public_material_from_bytes(
    ctx: &Arc<CkksContext>,
    bytes: &[u8],
) -> Result<(PublicKey, EvaluationKey, RotationKeySet)> {
    let mut r = Reader::new(bytes);
    let pk = read_public_key(ctx, &mut r)?;
    let evk = read_evaluation_key(ctx, &mut r)?;
    let rks = read_rotation_keys(ctx, &mut r)?;
    r.finish()?;
    Ok((pk, evk, rks))
}

/// True if `bytes` contains a CKX1 secret-key header for these parameters.
pub fn contains_secret_key_marker(bytes: &[u8], hash: &[u8; 8]) -> bool {
    let mut marker = Vec::with_capacity(14);
    marker.extend_from_slice(MAGIC);
    marker.push(VERSION);
    marker.extend_from_slice(hash);
    marker.push(ObjectKind::SecretKey as u8);
    bytes.windows(marker.len()).any(|w| w == marker.as_slice())
}

pub fn public_key_from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<PublicKey> {
    let mut r = Reader::new(bytes);
    let pk = read_public_key(ctx, &mut r)?;
    r.finish()?;
    Ok(pk)
}

pub fn evaluation_key_from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<EvaluationKey> {
    let mut r = Reader::new(bytes);
    let evk = read_evaluation_key(ctx, &mut r)?;
    r.finish()?;
    Ok(evk)
}

pub fn rotation_keys_from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<RotationKeySet> {
    let mut r = Reader::new(bytes);
    let rks = read_rotation_keys(ctx, &mut r)?;
    r.finish()?;
    Ok(rks)
}

/// Parameters hash stored in a CKX1 header, without decoding the body.
pub fn peek_params_hash(bytes: &[u8]) -> Result<[u8; 8]> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format("not a CKX1 object"));
    }
    Ok(bytes[5..13].try_into().unwrap())
}
