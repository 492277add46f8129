//! Reference evaluations that share no code with `kickmap-core`.
//!
//! Everything here is deliberately naive: ascending power series for the
//! Bessel functions (in `f64` and in exact rational arithmetic) and the
//! literal nested double sum of the amplitude map. The test suites compare
//! the production paths against these.

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// `J_m(x)` from the ascending series `sum_k (-1)^k (x/2)^(2k+m) / (k! (k+m)!)`
/// evaluated in `f64`. Accurate to machine precision only while the series
/// has no heavy cancellation (roughly `x <= 8`).
pub fn bessel_j_series(m: i64, x: f64) -> f64 {
    let order = m.unsigned_abs();
    let sign = if m < 0 && order % 2 == 1 { -1.0 } else { 1.0 };
    if x == 0.0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    let half = 0.5 * x;
    // leading term (x/2)^m / m!, built multiplicatively to avoid overflow
    let mut term = 1.0f64;
    for j in 1..=order {
        term *= half / j as f64;
    }
    let mut sum = term;
    let q = half * half;
    let mut k = 1u64;
    loop {
        term *= -q / (k as f64 * (k + order) as f64);
        sum += term;
        if term.abs() <= f64::EPSILON * 1e-3 * sum.abs() && k as f64 > half {
            break;
        }
        if k > 10_000 {
            break;
        }
        k += 1;
    }
    sign * sum
}

/// `J_m(p/q)` from the ascending series summed exactly in rational
/// arithmetic, rounded to the nearest `f64` at the end. Immune to the
/// cancellation that ruins the `f64` series at large arguments.
pub fn bessel_j_exact(m: i64, p: i64, q: i64) -> f64 {
    assert!(q > 0, "denominator must be positive");
    let order = m.unsigned_abs();
    let sign = if m < 0 && order % 2 == 1 { -1.0 } else { 1.0 };
    if p == 0 {
        return if order == 0 { 1.0 } else { 0.0 };
    }
    let half = BigRational::new(BigInt::from(p), BigInt::from(2 * q));
    let half_sq = &half * &half;
    let mut term = BigRational::one();
    for j in 1..=order {
        term = term * &half / BigInt::from(j);
    }
    let mut sum = term.clone();
    // |x/2|^2 bounds the growth ratio; past k > x the terms decay monotonically.
    let x_abs = (p as f64 / q as f64).abs();
    let tiny = BigRational::new(BigInt::one(), BigInt::from(10).pow(40));
    let mut k = 1u64;
    loop {
        term = -term * &half_sq / BigInt::from(k * (k + order));
        sum += &term;
        if (k as f64) > x_abs && !sum.is_zero() && (&term / &sum).abs() < tiny {
            break;
        }
        k += 1;
    }
    sign * sum.to_f64().expect("rational converts to f64")
}

/// One application of `a'_n = exp(-i phase(n)) * sum_m a_m J_{m-n}(k)`,
/// written as the literal double loop over the listed sites. `bessel` is
/// supplied by the caller so that the Bessel source can also be an oracle.
pub fn literal_map_step(
    sites: &[i64],
    amplitudes: &[Complex64],
    phase: impl Fn(i64) -> f64,
    bessel: impl Fn(i64) -> f64,
) -> Vec<Complex64> {
    assert_eq!(sites.len(), amplitudes.len());
    sites
        .iter()
        .map(|&n| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (&m, &a) in sites.iter().zip(amplitudes) {
                acc += a * bessel(m - n);
            }
            Complex64::from_polar(1.0, -phase(n)) * acc
        })
        .collect()
}

/// Two rotor kicks from `delta_0`, evaluated as the nested sum
/// `a''_n = sum_m exp(-i n^2 T/2) J_{m-n}(K) exp(-i m^2 T/2) J_{-m}(K)`
/// for `n` in `-half_width..=half_width`. Uses the `f64` series, so keep
/// `k` modest.
pub fn rotor_two_kicks_from_origin(k: f64, period: f64, half_width: i64) -> Vec<Complex64> {
    let sites: Vec<i64> = (-half_width..=half_width).collect();
    let rot = |n: i64| (n * n) as f64 * period / 2.0;
    sites
        .iter()
        .map(|&n| {
            let mut acc = Complex64::new(0.0, 0.0);
            for &m in &sites {
                let inner = Complex64::from_polar(1.0, -rot(m)) * bessel_j_series(-m, k);
                acc += inner * bessel_j_series(m - n, k);
            }
            Complex64::from_polar(1.0, -rot(n)) * acc
        })
        .collect()
}

/// Quasilinear diffusion correction for the standard map,
/// `D / (K^2/2) ~ 1 - 2 J_2(K) - 2 J_1(K)^2 + 2 J_2(K)^2 + 2 J_3(K)^2`.
pub fn standard_map_diffusion_ratio(k_num: i64, k_den: i64) -> f64 {
    let j = |m| bessel_j_exact(m, k_num, k_den);
    1.0 - 2.0 * j(2) - 2.0 * j(1).powi(2) + 2.0 * j(2).powi(2) + 2.0 * j(3).powi(2)
}
