//! Standard normal distribution functions.
//!
//! `erfc` uses the Chebyshev-fitted rational approximation with fractional error
//! below 1.2e-7 over the whole real line, so `cdf` and `sf` carry absolute error
//! below 1e-7 and keep relative accuracy in both tails. The quantile uses
//! Acklam's rational approximation (relative error below 1.15e-9).

use crate::Scalar;

const ERFC_COEFFS: [f64; 10] = [
    -1.265_512_23,
    1.000_023_68,
    0.374_091_96,
    0.096_784_18,
    -0.186_288_06,
    0.278_868_07,
    -1.135_203_98,
    1.488_515_87,
    -0.822_152_23,
    0.170_872_77,
];

/// Complementary error function.
pub fn erfc<T: Scalar>(x: T) -> T {
    let z = x.abs();
    let t = T::one() / (T::one() + T::c(0.5) * z);
    let mut poly = T::c(ERFC_COEFFS[9]);
    for &coef in ERFC_COEFFS[..9].iter().rev() {
        poly = T::c(coef) + t * poly;
    }
    let ans = t * (-z * z + poly).exp();
    if x >= T::zero() {
        ans
    } else {
        T::c(2.0) - ans
    }
}

/// Standard normal density.
pub fn pdf<T: Scalar>(z: T) -> T {
    let inv_sqrt_2pi = T::c(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-T::c(0.5) * z * z).exp()
}

/// Standard normal CDF, Φ(z).
pub fn cdf<T: Scalar>(z: T) -> T {
    T::c(0.5) * erfc(-z * T::c(std::f64::consts::FRAC_1_SQRT_2))
}

/// Upper tail, 1 − Φ(z), evaluated without cancellation.
pub fn sf<T: Scalar>(z: T) -> T {
    T::c(0.5) * erfc(z * T::c(std::f64::consts::FRAC_1_SQRT_2))
}

const Q_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const Q_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const Q_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const Q_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

/// Inverse of the standard normal CDF. Returns ±∞ at the endpoints and NaN outside [0, 1].
pub fn quantile<T: Scalar>(p: T) -> T {
    if p.is_nan() || p < T::zero() || p > T::one() {
        return T::nan();
    }
    if p == T::zero() {
        return T::neg_infinity();
    }
    if p == T::one() {
        return T::infinity();
    }
    let c = T::c;
    let p_low = c(0.02425);
    let horner = |coeffs: &[f64], x: T| coeffs.iter().fold(T::zero(), |acc, &k| acc * x + c(k));
    if p < p_low {
        let q = (c(-2.0) * p.ln()).sqrt();
        horner(&Q_C, q) / (horner(&Q_D, q) * q + T::one())
    } else if p <= T::one() - p_low {
        let q = p - c(0.5);
        let r = q * q;
        horner(&Q_A, r) * q / (horner(&Q_B, r) * r + T::one())
    } else {
        let q = (c(-2.0) * (T::one() - p).ln()).sqrt();
        -horner(&Q_C, q) / (horner(&Q_D, q) * q + T::one())
    }
}
