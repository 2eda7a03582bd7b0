//! Standard-normal distribution helpers that stay accurate in the far tails.
//!
//! `erfc` underflows near |x| ≈ 38, so log-scale quantities switch to a
//! continued-fraction Mills ratio once the argument is deep in a tail.

use statrs::function::erf::{erfc, erfc_inv};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

const TAIL_SWITCH: f64 = 30.0;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

/// Mills ratio `(1 - Φ(t)) / φ(t)` for `t >= TAIL_SWITCH`, by backward
/// evaluation of the continued fraction `1/(t+1/(t+2/(t+3/(t+...))))`.
fn mills_ratio(t: f64) -> f64 {
    let mut acc = t;
    for k in (1..=80).rev() {
        acc = t + k as f64 / acc;
    }
    1.0 / acc
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x < -TAIL_SWITCH {
        let t = -x;
        -0.5 * t * t - LN_SQRT_2PI + mills_ratio(t).ln()
    } else if x > TAIL_SWITCH {
        (-norm_sf(x)).ln_1p()
    } else {
        norm_cdf(x).ln()
    }
}

/// `ln(1 - Φ(x))`.
pub fn log_norm_sf(x: f64) -> f64 {
    log_norm_cdf(-x)
}

/// `ln(exp(a) - exp(b))` for `a >= b`.
fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// `ln(Φ(b) - Φ(a))` for `a < b`, computed in whichever tail keeps precision.
pub fn log_norm_interval(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        log_diff_exp(log_norm_sf(a), log_norm_sf(b))
    } else if b <= 0.0 {
        log_diff_exp(log_norm_cdf(b), log_norm_cdf(a))
    } else {
        (-(norm_cdf(a) + norm_sf(b))).ln_1p()
    }
}

/// Inverse of the upper tail: returns `x` with `1 - Φ(x) = q`.
pub fn norm_isf(q: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * q)
}

/// Standard normal quantile function.
pub fn norm_quantile(p: f64) -> f64 {
    -norm_isf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_symmetry_and_center() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        for &x in &[0.3, 1.7, 4.2, 9.0] {
            assert!((norm_cdf(x) + norm_cdf(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_cdf_continuous_across_tail_switch() {
        let lo = log_norm_cdf(-TAIL_SWITCH - 1e-12);
        let hi = norm_cdf(-TAIL_SWITCH - 1e-12).ln();
        assert!((lo - hi).abs() < 1e-13 * hi.abs(), "{lo} vs {hi}");
        // erfc is still representable here, so both routes must agree
        for &x in &[-31.0, -33.0, -35.0, -37.0] {
            let direct = norm_cdf(x).ln();
            assert!((log_norm_cdf(x) - direct).abs() < 1e-12 * direct.abs());
        }
    }

    #[test]
    fn log_cdf_finite_beyond_underflow() {
        let v = log_norm_cdf(-50.0);
        // leading asymptotic term: -x²/2 - ln(x) - ln√(2π)
        let asym = -1250.0 - 50f64.ln() - LN_SQRT_2PI;
        assert!(v.is_finite());
        assert!((v - asym).abs() < 1e-3);
    }

    #[test]
    fn interval_mass_in_both_tails() {
        let direct = (norm_cdf(1.0) - norm_cdf(-0.5)).ln();
        assert!((log_norm_interval(-0.5, 1.0) - direct).abs() < 1e-14);
        let upper = log_norm_interval(40.0, 41.0);
        let lower = log_norm_interval(-41.0, -40.0);
        assert!(upper.is_finite());
        assert!((upper - lower).abs() < 1e-12);
        // mass on (40, 41) is essentially the whole tail beyond 40
        assert!((upper - log_norm_sf(40.0)).abs() < 1e-10);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-5, 0.01, 0.3, 0.5, 0.77, 0.999] {
            let x = norm_quantile(p);
            assert!((norm_cdf(x) - p).abs() < 1e-10 * p, "p={p}: {}", norm_cdf(x));
        }
        let x = norm_isf(1e-20);
        assert!(((norm_sf(x) - 1e-20) / 1e-20).abs() < 1e-9);
    }
}
