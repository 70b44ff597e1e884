//! Univariate standard normal functions with attention to the tails.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - cdf(x)`.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Scaled complementary error function `exp(x^2) erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 5.0 {
        (x * x).exp() * erfc(x)
    } else if x.is_infinite() {
        0.0
    } else {
        // continued fraction, evaluated backwards
        let mut f = x;
        for k in (1..=120).rev() {
            f = x + 0.5 * k as f64 / f;
        }
        1.0 / (PI.sqrt() * f)
    }
}

/// `ln(1 - cdf(x))`, accurate far into the upper tail.
pub fn ln_sf(x: f64) -> f64 {
    if x < 1.0 {
        sf(x).ln()
    } else {
        -0.5 * x * x - std::f64::consts::LN_2 + erfcx(x * FRAC_1_SQRT_2).ln()
    }
}

/// `ln cdf(x)`.
pub fn ln_cdf(x: f64) -> f64 {
    ln_sf(-x)
}

/// `ln(cdf(b) - cdf(a))` for `a < b`, avoiding cancellation in either tail.
pub fn ln_prob_between(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        let pa = ln_sf(a);
        let pb = ln_sf(b);
        pa + (-(pb - pa).exp()).ln_1p()
    } else if b < 0.0 {
        let pa = ln_sf(-b);
        let pb = ln_sf(-a);
        pa + (-(pb - pa).exp()).ln_1p()
    } else {
        let pa = cdf(a);
        let pb = sf(b);
        (-pa - pb).ln_1p()
    }
}

/// Inverse of the standard normal CDF.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < 0.5 {
        -SQRT_2 * erfc_inv(2.0 * p)
    } else {
        SQRT_2 * erfc_inv(2.0 * (1.0 - p))
    }
}

/// Inverse Mills ratio `pdf(x) / cdf(x)`.
pub fn inv_mills(x: f64) -> f64 {
    (ln_pdf(x) - ln_cdf(x)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-17);
    }

    #[test]
    fn log_tail_matches_direct_where_both_work() {
        for &x in &[0.5, 2.0, 5.0, 10.0, 20.0, 30.0] {
            let direct = sf(x).ln();
            assert!((ln_sf(x) - direct).abs() < 1e-10 * direct.abs().max(1.0), "x={x}");
        }
        // beyond erfc underflow the log stays finite
        let v = ln_sf(50.0);
        assert!(v.is_finite() && v < -1200.0);
        assert_eq!(ln_sf(f64::INFINITY), f64::NEG_INFINITY);
    }

    #[test]
    fn erfcx_continuity_at_switch() {
        let lo = erfcx(5.0 - 1e-12);
        let hi = erfcx(5.0);
        assert!((lo - hi).abs() / lo < 1e-12);
        for &x in &[6.0f64, 10.0, 20.0] {
            let direct = (x * x).exp() * erfc(x);
            assert!((erfcx(x) - direct).abs() / direct < 1e-12, "x={x}");
        }
    }

    #[test]
    fn prob_between_cases() {
        let direct = cdf(1.0) - cdf(-0.5);
        assert!((ln_prob_between(-0.5, 1.0) - direct.ln()).abs() < 1e-14);
        assert!((ln_prob_between(f64::NEG_INFINITY, f64::INFINITY)).abs() < 1e-15);
        let tail = ln_prob_between(40.0, f64::INFINITY);
        assert!((tail - ln_sf(40.0)).abs() < 1e-12);
        let left = ln_prob_between(f64::NEG_INFINITY, -40.0);
        assert!((left - ln_sf(40.0)).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-4, 0.1, 0.5, 0.9, 1.0 - 1e-6] {
            let x = quantile(p);
            assert!((cdf(x) - p).abs() < 1e-12 * p.max(1e-3), "p={p}");
        }
    }
}
