//! Deterministic sin/cos/exp used by the rotary decoder.
//!
//! Platform libm implementations of the transcendentals are not guaranteed to
//! round identically, which would break bit-exact reproducibility of forward
//! passes across platforms. These versions use only IEEE add/mul/divide plus
//! argument reduction with split constants, so the same input always produces
//! the same bits. Accuracy is ~1e-14 relative on the ranges the decoder uses
//! (|angle| up to ~1e6, exp arguments within [-700, 700]).

const INV_PIO2: f64 = std::f64::consts::FRAC_2_PI;
#[allow(clippy::excessive_precision)]
const PIO2_1: f64 = 1.570_796_326_734_125_61; // first 33 bits of pi/2
#[allow(clippy::excessive_precision)]
const PIO2_1T: f64 = 6.077_100_506_506_192_2e-11; // pi/2 - PIO2_1

const LOG2_E: f64 = std::f64::consts::LOG2_E;
#[allow(clippy::excessive_precision)]
const LN2_HI: f64 = 6.931_471_803_691_238_2e-1; // upper bits of ln 2
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10; // ln 2 - LN2_HI

/// sin(r) for |r| <= pi/4, Taylor to r^15 (next term ~5e-17).
fn sin_poly(r: f64) -> f64 {
    let r2 = r * r;
    let c15 = 1.0 / 1307674368000.0;
    let c13 = 1.0 / 6227020800.0;
    let c11 = 1.0 / 39916800.0;
    let c9 = 1.0 / 362880.0;
    let c7 = 1.0 / 5040.0;
    let c5 = 1.0 / 120.0;
    let c3 = 1.0 / 6.0;
    let t = c15;
    let t = c13 - r2 * t;
    let t = c11 - r2 * t;
    let t = c9 - r2 * t;
    let t = c7 - r2 * t;
    let t = c5 - r2 * t;
    let t = c3 - r2 * t;
    r - r * r2 * t
}

/// cos(r) for |r| <= pi/4, Taylor to r^16 (next term ~4e-18).
fn cos_poly(r: f64) -> f64 {
    let r2 = r * r;
    let c16 = 1.0 / 20922789888000.0;
    let c14 = 1.0 / 87178291200.0;
    let c12 = 1.0 / 479001600.0;
    let c10 = 1.0 / 3628800.0;
    let c8 = 1.0 / 40320.0;
    let c6 = 1.0 / 720.0;
    let c4 = 1.0 / 24.0;
    let c2 = 1.0 / 2.0;
    let t = c16;
    let t = c14 - r2 * t;
    let t = c12 - r2 * t;
    let t = c10 - r2 * t;
    let t = c8 - r2 * t;
    let t = c6 - r2 * t;
    let t = c4 - r2 * t;
    let t = c2 - r2 * t;
    1.0 - r2 * t
}

/// Reduce x to (quadrant mod 4, remainder in [-pi/4, pi/4]).
fn reduce_pio2(x: f64) -> (i64, f64) {
    let k = (x * INV_PIO2).round();
    let r = (x - k * PIO2_1) - k * PIO2_1T;
    (k as i64, r)
}

/// Deterministic sine. Exact zero at x = 0.
pub fn sin(x: f64) -> f64 {
    if x == 0.0 {
        return x; // preserves signed zero
    }
    let (k, r) = reduce_pio2(x);
    match k.rem_euclid(4) {
        0 => sin_poly(r),
        1 => cos_poly(r),
        2 => -sin_poly(r),
        _ => -cos_poly(r),
    }
}

/// Deterministic cosine. Exact one at x = 0.
pub fn cos(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    let (k, r) = reduce_pio2(x);
    match k.rem_euclid(4) {
        0 => cos_poly(r),
        1 => -sin_poly(r),
        2 => -cos_poly(r),
        _ => sin_poly(r),
    }
}

/// exp(r) for |r| <= ln(2)/2, Taylor to r^13.
fn exp_poly(r: f64) -> f64 {
    let mut t = 1.0 / 6227020800.0;
    for c in [
        1.0 / 479001600.0,
        1.0 / 39916800.0,
        1.0 / 3628800.0,
        1.0 / 362880.0,
        1.0 / 40320.0,
        1.0 / 5040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        1.0 / 2.0,
        1.0,
        1.0,
    ] {
        t = c + r * t;
    }
    t
}

/// Scale by 2^k via exponent-bit construction; splits the scale in the
/// subnormal range so only the final multiply rounds.
fn scalbn(x: f64, k: i64) -> f64 {
    if k > 1023 {
        return f64::INFINITY;
    }
    if k < -1022 {
        if k < -1122 {
            // below even the subnormal range for |x| < 2
            return 0.0;
        }
        // first factor keeps the intermediate normal and exact
        return (x * pow2(k + 100)) * pow2(-100);
    }
    x * pow2(k)
}

fn pow2(k: i64) -> f64 {
    f64::from_bits(((k + 1023) as u64) << 52)
}

/// Deterministic exponential. Exact one at x = 0.
pub fn exp(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x > 709.0 {
        return f64::INFINITY;
    }
    if x < -745.0 {
        return 0.0;
    }
    let k = (x * LOG2_E).round();
    let r = (x - k * LN2_HI) - k * LN2_LO;
    scalbn(exp_poly(r), k as i64)
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Deterministic natural log for x > 0 (atanh series after exponent split).
pub fn ln(x: f64) -> f64 {
    assert!(x > 0.0 && x.is_finite(), "ln domain: {x}");
    if x == 1.0 {
        return 0.0;
    }
    let bits = x.to_bits();
    let mut k = ((bits >> 52) & 0x7ff) as i64 - 1023;
    let mut f = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | (1023u64 << 52));
    if f >= SQRT2 {
        f *= 0.5;
        k += 1;
    }
    let z = (f - 1.0) / (f + 1.0);
    let z2 = z * z;
    // atanh series: ln f = 2 (z + z^3/3 + ... + z^19/19), |z| <= 0.1716
    let mut t = 1.0 / 19.0;
    for c in [
        1.0 / 17.0,
        1.0 / 15.0,
        1.0 / 13.0,
        1.0 / 11.0,
        1.0 / 9.0,
        1.0 / 7.0,
        1.0 / 5.0,
        1.0 / 3.0,
        1.0,
    ] {
        t = c + z2 * t;
    }
    let ln_f = 2.0 * z * t;
    (k as f64) * LN2_HI + ((k as f64) * LN2_LO + ln_f)
}

/// Deterministic x^y for x > 0, via exp(y ln x).
pub fn pow(x: f64, y: f64) -> f64 {
    if y == 0.0 || x == 1.0 {
        return 1.0;
    }
    exp(y * ln(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_std_sin_cos() {
        let mut x = -20000.0;
        while x < 20000.0 {
            assert!((sin(x) - x.sin()).abs() < 1e-12, "sin({x})");
            assert!((cos(x) - x.cos()).abs() < 1e-12, "cos({x})");
            x += 17.731;
        }
        // fractional small angles
        for i in 0..1000 {
            let x = i as f64 * 0.00317;
            assert!((sin(x) - x.sin()).abs() < 1e-14);
            assert!((cos(x) - x.cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_at_zero() {
        assert_eq!(sin(0.0), 0.0);
        assert_eq!(cos(0.0), 1.0);
        assert_eq!(exp(0.0), 1.0);
    }

    #[test]
    fn pythagorean_identity() {
        let mut x = 0.0;
        while x < 5000.0 {
            let (s, c) = (sin(x), cos(x));
            assert!((s * s + c * c - 1.0).abs() < 1e-13, "at {x}");
            x += 0.7919;
        }
    }

    #[test]
    fn matches_std_ln_and_pow() {
        let mut x = 1e-6;
        while x < 1e6 {
            let rel = ((ln(x) - x.ln()) / x.ln().abs().max(1e-3)).abs();
            assert!(rel < 1e-12, "ln({x})");
            x *= 1.7313;
        }
        assert_eq!(ln(1.0), 0.0);
        for i in 1..=32u32 {
            let got = pow(10000.0, -2.0 * i as f64 / 64.0);
            let want = 10000.0_f64.powf(-2.0 * i as f64 / 64.0);
            assert!(((got - want) / want).abs() < 1e-12, "pow i={i}");
        }
    }

    #[test]
    fn matches_std_exp() {
        let mut x = -80.0;
        while x < 80.0 {
            let got = exp(x);
            let want = x.exp();
            let rel = ((got - want) / want).abs();
            assert!(rel < 1e-13, "exp({x}): {got} vs {want}");
            x += 0.321;
        }
        assert_eq!(exp(1000.0), f64::INFINITY);
        assert_eq!(exp(-1000.0), 0.0);
    }

    #[test]
    fn exp_subnormal_range_not_flushed() {
        let got = exp(-744.0);
        let want = (-744.0_f64).exp();
        assert!(got > 0.0 && got < 1e-320);
        // within a couple of ulps of the subnormal reference
        assert!((got - want).abs() <= 2.0 * f64::MIN_POSITIVE * f64::EPSILON);
    }
}
