use std::sync::Arc;

use blindtune::ring::modular::primes_below_power_of_two;
use blindtune::ring::{Domain, Modulus, RingPoly, RnsBasis};
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn basis(n: usize, count: usize) -> Arc<RnsBasis> {
    let primes = primes_below_power_of_two(50, 2 * n as u64, count, &[]);
    Arc::new(RnsBasis::new(n, &primes).unwrap())
}

fn random_poly(b: &Arc<RnsBasis>, rng: &mut impl Rng) -> RingPoly {
    let rows = b
        .fields()
        .iter()
        .map(|f| (0..b.degree()).map(|_| rng.gen_range(0..f.prime())).collect())
        .collect();
    RingPoly::from_residues(b, Domain::Coefficient, rows).unwrap()
}

fn schoolbook(a: &[u64], b: &[u64], q: &Modulus) -> Vec<u64> {
    let n = a.len();
    let mut out = vec![0u64; n];
    for i in 0..n {
        for j in 0..n {
            let p = q.mul(a[i], b[j]);
            let k = i + j;
            if k < n {
                out[k] = q.add(out[k], p);
            } else {
                out[k - n] = q.sub(out[k - n], p);
            }
        }
    }
    out
}

fn crt(rows: &[&[u64]], primes: &[u64], idx: usize) -> BigInt {
    let big_q: BigInt = primes.iter().map(|&p| BigInt::from(p)).product();
    let mut acc = BigInt::zero();
    for (row, &p) in rows.iter().zip(primes) {
        let bp = BigInt::from(p);
        let hat = &big_q / &bp;
        let inv = hat.modpow(&(&bp - 2u32), &bp);
        acc += BigInt::from(row[idx]) * hat * inv;
    }
    acc % big_q
}

#[test]
fn negacyclic_mul_matches_schoolbook_and_bigint_oracles() {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    for &n in &[8usize, 16, 64] {
        let b = basis(n, 3);
        let primes = b.primes();
        let big_q: BigInt = primes.iter().map(|&p| BigInt::from(p)).product();
        for _ in 0..500 {
            let x = random_poly(&b, &mut rng);
            let y = random_poly(&b, &mut rng);
            let z = x.mul(&y).unwrap();
            assert_eq!(z.domain(), Domain::Coefficient);
            for (i, f) in b.fields().iter().enumerate() {
                assert_eq!(z.residue(i), schoolbook(x.residue(i), y.residue(i), f.modulus()).as_slice());
            }
            // one big-integer spot check per case over the composite modulus
            let xr: Vec<&[u64]> = (0..3).map(|i| x.residue(i)).collect();
            let yr: Vec<&[u64]> = (0..3).map(|i| y.residue(i)).collect();
            let zr: Vec<&[u64]> = (0..3).map(|i| z.residue(i)).collect();
            let k = rng.gen_range(0..n);
            let mut expect = BigInt::zero();
            for i in 0..n {
                let j = (k + n - i) % n;
                let term = crt(&xr, &primes, i) * crt(&yr, &primes, j);
                if i <= k {
                    expect += term;
                } else {
                    expect -= term;
                }
            }
            expect %= &big_q;
            if expect.is_negative() {
                expect += &big_q;
            }
            assert_eq!(crt(&zr, &primes, k), expect);
        }
    }
}

#[test]
fn ntt_matches_direct_evaluation() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    for &n in &[8usize, 16, 64] {
        let b = basis(n, 2);
        for _ in 0..500 {
            let x = random_poly(&b, &mut rng);
            let xf = x.ntt_forward().unwrap();
            for (r, f) in b.fields().iter().enumerate() {
                let q = f.modulus();
                let slot = rng.gen_range(0..n);
                let root = q.pow(f.psi(), f.slot_exponent(slot) as u64);
                let mut acc = 0u64;
                let mut pw = 1u64;
                for &c in x.residue(r) {
                    acc = q.add(acc, q.mul(c, pw));
                    pw = q.mul(pw, root);
                }
                assert_eq!(xf.residue(r)[slot], acc);
            }
            assert_eq!(xf.ntt_inverse().unwrap(), x);
        }
    }
}

#[test]
fn drop_last_prime_rounds_like_bigint_division() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let b = basis(16, 3);
    let primes = b.primes();
    let q_small: BigInt = primes[..2].iter().map(|&p| BigInt::from(p)).product();
    let q_all: BigInt = &q_small * BigInt::from(primes[2]);
    let last = BigInt::from(primes[2]);
    for _ in 0..200 {
        let x = random_poly(&b, &mut rng);
        let y = x.drop_last_prime().unwrap();
        let xr: Vec<&[u64]> = (0..3).map(|i| x.residue(i)).collect();
        let yr: Vec<&[u64]> = (0..2).map(|i| y.residue(i)).collect();
        for k in 0..16 {
            let mut v = crt(&xr, &primes, k);
            if &v * 2 > q_all {
                v -= &q_all;
            }
            // round(v / last), ties away from the representative chosen by centering
            let got = crt(&yr, &primes[..2], k);
            let lo = {
                let mut t = &v / &last;
                if (&v - &t * &last).is_negative() {
                    t -= BigInt::one();
                }
                t
            };
            let ok = [lo.clone(), lo + 1].iter().any(|cand| {
                let mut c = cand % &q_small;
                if c.is_negative() {
                    c += &q_small;
                }
                c == got
            });
            assert!(ok);
        }
    }
}

fn arb_pair() -> impl Strategy<Value = (u64, u64, u64)> {
    (any::<u64>(), any::<u64>(), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ring_laws_hold((s1, s2, s3) in arb_pair(), log_n in 3u32..7) {
        let n = 1usize << log_n;
        let b = basis(n, 2);
        let a = random_poly(&b, &mut ChaCha20Rng::seed_from_u64(s1));
        let c = random_poly(&b, &mut ChaCha20Rng::seed_from_u64(s2));
        let d = random_poly(&b, &mut ChaCha20Rng::seed_from_u64(s3));
        prop_assert_eq!(a.mul(&c).unwrap(), c.mul(&a).unwrap());
        prop_assert_eq!(a.mul(&c).unwrap().mul(&d).unwrap(), a.mul(&c.mul(&d).unwrap()).unwrap());
        prop_assert_eq!(
            a.mul(&c.add(&d).unwrap()).unwrap(),
            a.mul(&c).unwrap().add(&a.mul(&d).unwrap()).unwrap()
        );
        prop_assert_eq!(a.add(&c).unwrap().sub(&c).unwrap(), a.clone());
        prop_assert_eq!(a.ntt_forward().unwrap().ntt_inverse().unwrap(), a);
    }

    #[test]
    fn automorphism_is_a_ring_homomorphism(s1 in any::<u64>(), s2 in any::<u64>(), k in 0usize..32) {
        let b = basis(16, 2);
        let a = random_poly(&b, &mut ChaCha20Rng::seed_from_u64(s1));
        let c = random_poly(&b, &mut ChaCha20Rng::seed_from_u64(s2));
        let g = 2 * k + 1;
        let lhs = a.mul(&c).unwrap().automorphism(g).unwrap();
        let rhs = a.automorphism(g).unwrap().mul(&c.automorphism(g).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn modular_ops_match_wide_arithmetic(a in any::<u64>(), b in any::<u64>(), idx in 0usize..4) {
        let q = Modulus::new(primes_below_power_of_two(62, 2, 4, &[])[idx]);
        let (x, y) = (a % q.value(), b % q.value());
        let qv = q.value() as u128;
        prop_assert_eq!(q.mul(x, y) as u128, (x as u128 * y as u128) % qv);
        prop_assert_eq!(q.add(x, y) as u128, (x as u128 + y as u128) % qv);
        prop_assert_eq!(q.sub(x, y) as u128, (x as u128 + qv - y as u128) % qv);
        prop_assert_eq!(q.mul_shoup(x, y, q.shoup(y)), q.mul(x, y));
        prop_assert_eq!(q.reduce_i64(-(a as i64 >> 1)) as i128, (-(a as i64 >> 1) as i128).rem_euclid(qv as i128));
    }
}
