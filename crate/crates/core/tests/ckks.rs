use std::sync::{Arc, OnceLock};

use blindtune::ckks::serialize::{
    ciphertext_bytes, ciphertext_from_bytes, public_material_bytes, public_material_from_bytes, secret_key_bytes,
    secret_key_from_bytes,
};
use blindtune::ckks::{
    decrypt, decrypt_values, encrypt_pk, encrypt_values, keygen, CkksContext, CkksParams, Evaluator, KeySet,
};
use blindtune::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Fixture {
    ctx: Arc<CkksContext>,
    keys: KeySet,
    eval: Evaluator,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let ctx = CkksContext::new(CkksParams::test_with_levels(6)).unwrap();
        let keys = keygen(&ctx, 99).unwrap();
        let eval = Evaluator::new(ctx.clone(), Arc::new(keys.eval.clone())).unwrap();
        Fixture { ctx, keys, eval }
    })
}

fn random_vec(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

const TOP: usize = 7;

#[test]
fn encode_decode_roundtrip_below_2_pow_minus_25() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for _ in 0..5 {
        let v = random_vec(&mut rng, f.ctx.slot_count());
        let pt = f.ctx.encode_at(&v, TOP).unwrap();
        assert!(max_err(&f.ctx.decode(&pt), &v) < 2f64.powi(-25));
    }
}

#[test]
fn encoding_is_linear() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let a = random_vec(&mut rng, 100);
    let b = random_vec(&mut rng, 100);
    let pa = f.ctx.encode_at(&a, 3).unwrap();
    let pb = f.ctx.encode_at(&b, 3).unwrap();
    let dec = f.ctx.decode(&pa.add(&pb).unwrap());
    let expect: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    assert!(max_err(&dec[..100], &expect) < 1e-9);
}

#[test]
fn zero_vector_encodes_to_zero_and_decrypts_near_zero() {
    let f = fixture();
    let pt = f.ctx.encode_at(&[0.0; 17], TOP).unwrap();
    assert!(pt.poly().is_zero());
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let ct = encrypt_pk(&f.ctx, &pt, &f.keys.public, &mut rng).unwrap();
    let out = decrypt_values(&f.ctx, &ct, &f.keys.secret).unwrap();
    assert!(out.iter().all(|x| x.abs() < 2f64.powi(-20)));
}

#[test]
fn doubled_scale_is_tracked_by_the_plaintext() {
    let f = fixture();
    let v = vec![0.5, -0.25, 1.0];
    let pt = f.ctx.encode(&v, 2.0 * f.ctx.scale_at(3), 3).unwrap();
    let back = f.ctx.decode(&pt);
    assert!(max_err(&back[..3], &v) < 1e-9);
}

#[test]
fn encryption_is_randomized() {
    let f = fixture();
    let v = vec![0.3; 8];
    let a = encrypt_values(&f.ctx, &v, TOP, &f.keys.public, &mut ChaCha20Rng::seed_from_u64(4)).unwrap();
    let b = encrypt_values(&f.ctx, &v, TOP, &f.keys.public, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
    assert_ne!(a, b);
    let da = decrypt_values(&f.ctx, &a, &f.keys.secret).unwrap();
    let db = decrypt_values(&f.ctx, &b, &f.keys.secret).unwrap();
    assert!(max_err(&da, &db) < 2f64.powi(-20));
}

#[test]
fn add_and_add_plain() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let n = f.ctx.slot_count();
    let (v1, v2) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
    let c1 = encrypt_values(&f.ctx, &v1, TOP, &f.keys.public, &mut rng).unwrap();
    let c2 = encrypt_values(&f.ctx, &v2, TOP, &f.keys.public, &mut rng).unwrap();
    let sum: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a + b).collect();
    let s = decrypt_values(&f.ctx, &f.eval.add(&c1, &c2).unwrap(), &f.keys.secret).unwrap();
    assert!(max_err(&s, &sum) < 2f64.powi(-19));
    let p2 = f.ctx.encode_at(&v2, TOP).unwrap();
    let sp = decrypt_values(&f.ctx, &f.eval.add_plain(&c1, &p2).unwrap(), &f.keys.secret).unwrap();
    assert!(max_err(&sp, &s) < 2f64.powi(-19));
    let zero = encrypt_values(&f.ctx, &[], TOP, &f.keys.public, &mut rng).unwrap();
    let same = decrypt_values(&f.ctx, &f.eval.add(&c1, &zero).unwrap(), &f.keys.secret).unwrap();
    assert!(max_err(&same, &v1) < 2f64.powi(-19));
}

#[test]
fn mult_relative_error_and_identity() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let n = f.ctx.slot_count();
    let (v1, v2) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
    let c1 = encrypt_values(&f.ctx, &v1, TOP, &f.keys.public, &mut rng).unwrap();
    let c2 = encrypt_values(&f.ctx, &v2, TOP, &f.keys.public, &mut rng).unwrap();
    let prod = f.eval.mult_rescale(&c1, &c2).unwrap();
    assert_eq!(prod.level(), TOP - 1);
    assert!((prod.scale().log2() - 40.0).abs() < 1.0);
    let out = decrypt_values(&f.ctx, &prod, &f.keys.secret).unwrap();
    let expect: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a * b).collect();
    // relative to the operand magnitude bound of 1
    assert!(max_err(&out, &expect) < 2f64.powi(-15));

    let ones = encrypt_values(&f.ctx, &vec![1.0; n], TOP, &f.keys.public, &mut rng).unwrap();
    let same = decrypt_values(&f.ctx, &f.eval.mult_rescale(&c1, &ones).unwrap(), &f.keys.secret).unwrap();
    assert!(max_err(&same, &v1) < 2f64.powi(-15));
}

#[test]
fn mult_is_associative_within_noise() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let n = f.ctx.slot_count();
    let vs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, n)).collect();
    let cs: Vec<_> = vs
        .iter()
        .map(|v| encrypt_values(&f.ctx, v, TOP, &f.keys.public, &mut rng).unwrap())
        .collect();
    let e = &f.eval;
    let left = e.mult_rescale(&e.mult_rescale(&cs[0], &cs[1]).unwrap(), &e.level_down(&cs[2], TOP - 1).unwrap()).unwrap();
    let right = e.mult_rescale(&e.level_down(&cs[0], TOP - 1).unwrap(), &e.mult_rescale(&cs[1], &cs[2]).unwrap()).unwrap();
    let l = decrypt_values(&f.ctx, &left, &f.keys.secret).unwrap();
    let r = decrypt_values(&f.ctx, &right, &f.keys.secret).unwrap();
    assert!(max_err(&l, &r) < 2f64.powi(-12));
}

#[test]
fn mult_plain_by_one_and_zero() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let n = f.ctx.slot_count();
    let v = random_vec(&mut rng, n);
    let c = encrypt_values(&f.ctx, &v, TOP, &f.keys.public, &mut rng).unwrap();
    let one = f.ctx.encode_at(&vec![1.0; n], TOP).unwrap();
    let zero = f.ctx.encode_at(&[], TOP).unwrap();
    let a = decrypt_values(&f.ctx, &f.eval.mult_plain_rescale(&c, &one).unwrap(), &f.keys.secret).unwrap();
    assert!(max_err(&a, &v) < 2f64.powi(-18));
    let z = decrypt_values(&f.ctx, &f.eval.mult_plain_rescale(&c, &zero).unwrap(), &f.keys.secret).unwrap();
    assert!(z.iter().all(|x| x.abs() < 2f64.powi(-18)));
    let w = random_vec(&mut rng, n);
    let pw = f.ctx.encode_at(&w, TOP).unwrap();
    let r = decrypt_values(&f.ctx, &f.eval.mult_plain_rescale(&c, &pw).unwrap(), &f.keys.secret).unwrap();
    let expect: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a * b).collect();
    assert!(max_err(&r, &expect) < 2f64.powi(-18));
}

#[test]
fn rescale_bookkeeping_and_errors() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let zero = encrypt_values(&f.ctx, &[], 2, &f.keys.public, &mut rng).unwrap();
    let sq = f.eval.mult_rescale(&zero, &zero).unwrap();
    assert_eq!(sq.level(), 1);
    assert_eq!(sq.scale(), f.ctx.scale_at(1));
    let out = decrypt_values(&f.ctx, &sq, &f.keys.secret).unwrap();
    assert!(out.iter().all(|x| x.abs() < 2f64.powi(-20)));
    assert!(matches!(f.eval.rescale(&sq), Err(Error::LevelExhausted { .. })));
}

#[test]
fn add_rejects_mismatched_scale_and_level() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let a = encrypt_values(&f.ctx, &[1.0], TOP, &f.keys.public, &mut rng).unwrap();
    let b = encrypt_values(&f.ctx, &[1.0], TOP - 1, &f.keys.public, &mut rng).unwrap();
    assert!(matches!(f.eval.add(&a, &b), Err(Error::Mismatch(_))));
    let pt = f.ctx.encode(&[1.0], 2f64.powi(30), TOP).unwrap();
    let c = encrypt_pk(&f.ctx, &pt, &f.keys.public, &mut rng).unwrap();
    assert!(matches!(f.eval.add(&a, &c), Err(Error::ScaleMismatch { .. })));
    // explicit scale adjustment makes the add legal
    let adjusted = f.eval.adjust_scale(&c, f.ctx.scale_at(TOP - 1)).unwrap();
    let a_low = f.eval.level_down(&a, TOP - 1).unwrap();
    let sum = decrypt_values(&f.ctx, &f.eval.add(&a_low, &adjusted).unwrap(), &f.keys.secret).unwrap();
    assert!((sum[0] - 2.0).abs() < 1e-3, "scale 2^30 carries about 2^-13 fresh noise");
}

#[test]
fn decrypt_rejects_unrelinearized() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let a = encrypt_values(&f.ctx, &[1.0], TOP, &f.keys.public, &mut rng).unwrap();
    let t = f.eval.mult_no_relin(&a, &a).unwrap();
    assert_eq!(t.size(), 3);
    assert!(decrypt(&f.ctx, &t, &f.keys.secret).is_err());
    let r = f.eval.relinearize(&t).unwrap();
    assert!(decrypt(&f.ctx, &r, &f.keys.secret).is_ok());
}

#[test]
fn rotations_match_cyclic_shift() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let n = f.ctx.slot_count();
    let v = random_vec(&mut rng, n);
    let c = encrypt_values(&f.ctx, &v, TOP, &f.keys.public, &mut rng).unwrap();
    assert_eq!(f.eval.rotate(&c, 0).unwrap(), c);
    for k in [1i64, 3, -5, 64, 1000] {
        let r = decrypt_values(&f.ctx, &f.eval.rotate(&c, k).unwrap(), &f.keys.secret).unwrap();
        let expect: Vec<f64> = (0..n).map(|i| v[(i as i64 + k).rem_euclid(n as i64) as usize]).collect();
        assert!(max_err(&r, &expect) < 2f64.powi(-18), "k = {k}");
    }
    let back = f.eval.rotate(&f.eval.rotate(&c, 7).unwrap(), -7).unwrap();
    let b = decrypt_values(&f.ctx, &back, &f.keys.secret).unwrap();
    assert!(max_err(&b, &v) < 2f64.powi(-18));
}

#[test]
fn rotation_without_key_is_reported() {
    let f = fixture();
    let ctx = &f.ctx;
    let mut rng = ChaCha20Rng::seed_from_u64(14);
    let sparse = blindtune::ckks::generate_rotations(ctx, &f.keys.secret, &[1], &mut rng).unwrap();
    let keys = blindtune::ckks::EvalKeys {
        relin: f.keys.eval.relin.clone(),
        rotations: sparse,
    };
    let eval = Evaluator::new(ctx.clone(), Arc::new(keys)).unwrap();
    let c = encrypt_values(ctx, &[1.0], TOP, &f.keys.public, &mut rng).unwrap();
    assert!(eval.rotate(&c, 1).is_ok());
    assert!(matches!(eval.rotate(&c, 2), Err(Error::MissingKey(_))));
}

#[test]
fn ciphertext_and_key_serialization_roundtrip() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    let c = encrypt_values(&f.ctx, &[0.5, 0.25], TOP, &f.keys.public, &mut rng).unwrap();
    let bytes = ciphertext_bytes(&f.ctx, &c);
    assert_eq!(&bytes[..4], b"CKX1");
    assert_eq!(bytes.len(), 20 + 2 * TOP * f.ctx.degree() * 8);
    let back = ciphertext_from_bytes(&f.ctx, &bytes).unwrap();
    assert_eq!(back, c);

    let sk_bytes = secret_key_bytes(&f.ctx, &f.keys.secret);
    let sk = secret_key_from_bytes(&f.ctx, &sk_bytes).unwrap();
    let d = decrypt_values(&f.ctx, &c, &sk).unwrap();
    assert!((d[0] - 0.5).abs() < 1e-6);

    let blob = public_material_bytes(&f.ctx, &f.keys.public, &f.keys.eval.relin, &f.keys.eval.rotations);
    let (pk, evk, rks) = public_material_from_bytes(&f.ctx, &blob).unwrap();
    assert_eq!(pk, f.keys.public);
    assert_eq!(evk, f.keys.eval.relin);
    assert_eq!(rks, f.keys.eval.rotations);
}

#[test]
fn foreign_parameters_are_rejected() {
    let f = fixture();
    let other = CkksContext::new(CkksParams::test_with_levels(2)).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(16);
    let c = encrypt_values(&f.ctx, &[1.0], 2, &f.keys.public, &mut rng).unwrap();
    let bytes = ciphertext_bytes(&f.ctx, &c);
    assert!(matches!(ciphertext_from_bytes(&other, &bytes), Err(Error::ParamsHashMismatch)));
    let pt = other.encode_at(&[1.0], 2).unwrap();
    assert!(matches!(encrypt_pk(&other, &pt, &f.keys.public, &mut rng), Err(Error::ParamsHashMismatch)));
}

#[test]
fn truncated_or_corrupt_ciphertext_bytes_rejected() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let c = encrypt_values(&f.ctx, &[1.0], 2, &f.keys.public, &mut rng).unwrap();
    let bytes = ciphertext_bytes(&f.ctx, &c);
    assert!(ciphertext_from_bytes(&f.ctx, &bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(ciphertext_from_bytes(&f.ctx, &bad).is_err());
    let mut bad = bytes.clone();
    bad[20..28].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(ciphertext_from_bytes(&f.ctx, &bad).is_err());
}

#[test]
fn keygen_is_deterministic() {
    let ctx = CkksContext::new(CkksParams::test_with_levels(1)).unwrap();
    let a = keygen(&ctx, 5).unwrap();
    let b = keygen(&ctx, 5).unwrap();
    let ba = public_material_bytes(&ctx, &a.public, &a.eval.relin, &a.eval.rotations);
    let bb = public_material_bytes(&ctx, &b.public, &b.eval.relin, &b.eval.rotations);
    assert!(ba == bb);
    assert_eq!(secret_key_bytes(&ctx, &a.secret), secret_key_bytes(&ctx, &b.secret));
    let c = keygen(&ctx, 6).unwrap();
    assert_ne!(secret_key_bytes(&ctx, &a.secret), secret_key_bytes(&ctx, &c.secret));
}

#[test]
fn mult_const_to_lands_on_canonical_scale() {
    let f = fixture();
    let mut rng = ChaCha20Rng::seed_from_u64(18);
    let v = random_vec(&mut rng, 64);
    let c = encrypt_values(&f.ctx, &v, TOP, &f.keys.public, &mut rng).unwrap();
    let r = f.eval.mult_const_to(&c, -0.75, 3).unwrap();
    assert_eq!(r.level(), 3);
    assert_eq!(r.scale(), f.ctx.scale_at(3));
    let out = decrypt_values(&f.ctx, &r, &f.keys.secret).unwrap();
    let expect: Vec<f64> = v.iter().map(|x| -0.75 * x).collect();
    assert!(max_err(&out[..64], &expect) < 1e-6);
    let added = f.eval.add_const(&r, 0.5).unwrap();
    let out = decrypt_values(&f.ctx, &added, &f.keys.secret).unwrap();
    assert!((out[0] - (expect[0] + 0.5)).abs() < 1e-6);
    assert!((out[100] - 0.5).abs() < 1e-6);
}
