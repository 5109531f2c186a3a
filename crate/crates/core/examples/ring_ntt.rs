//! Negacyclic polynomial arithmetic over an RNS basis.

use std::sync::Arc;
use std::time::Instant;

use blindtune::ring::modular::primes_below_power_of_two;
use blindtune::ring::{RingPoly, RnsBasis};

fn main() -> blindtune::Result<()> {
    let n = 1 << 12;
    let primes = primes_below_power_of_two(50, 2 * n as u64, 3, &[]);
    println!("N = {n}, primes = {primes:?}");
    let basis = Arc::new(RnsBasis::new(n, &primes)?);

    // X^(N-1) * X wraps around to -1
    let mut xn1 = vec![0i64; n];
    xn1[n - 1] = 1;
    let mut x = vec![0i64; n];
    x[1] = 1;
    let prod = RingPoly::from_signed(&basis, 3, &xn1).mul(&RingPoly::from_signed(&basis, 3, &x))?;
    let mut minus_one = vec![0i64; n];
    minus_one[0] = -1;
    println!("X^(N-1) * X == -1: {}", prod == RingPoly::from_signed(&basis, 3, &minus_one));

    let a: Vec<i64> = (0..n as i64).map(|i| (i * 7919) % 201 - 100).collect();
    let b: Vec<i64> = (0..n as i64).map(|i| (i * 104_729) % 51 - 25).collect();
    let (pa, pb) = (RingPoly::from_signed(&basis, 3, &a), RingPoly::from_signed(&basis, 3, &b));

    let t = Instant::now();
    let fast = pa.mul(&pb)?;
    println!("NTT multiply: {:.2?}", t.elapsed());

    // schoolbook over the integers; coefficients stay far below the modulus
    let t = Instant::now();
    let mut slow = vec![0i64; n];
    for i in 0..n {
        for j in 0..n {
            let k = i + j;
            if k < n {
                slow[k] += a[i] * b[j];
            } else {
                slow[k - n] -= a[i] * b[j];
            }
        }
    }
    println!("schoolbook multiply: {:.2?}", t.elapsed());
    println!("results agree: {}", fast == RingPoly::from_signed(&basis, 3, &slow));

    let round = pa.ntt_forward()?.ntt_inverse()?;
    println!("NTT round trip exact: {}", round == pa);
    let g = 5;
    let hom = fast.automorphism(g)? == pa.automorphism(g)?.mul(&pb.automorphism(g)?)?;
    println!("X -> X^{g} is multiplicative: {hom}");
    Ok(())
}
