//! Exact draws from a normal distribution restricted to an interval.
//!
//! Inverse-CDF in the tail nearest the interval when it carries enough
//! mass; otherwise uniform or shifted-exponential rejection.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::special::{log_norm_interval, norm_cdf, norm_isf, norm_sf};

const MIN_INVERSION_MASS: f64 = 1e-10;

/// Draws from `N(mean, var)` truncated to `(lo, hi)`; the result lies
/// strictly inside the interval.
pub fn sample_truncnorm<R: Rng + ?Sized>(mean: f64, var: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    assert!(lo < hi, "empty truncation interval ({lo}, {hi})");
    assert!(var > 0.0, "variance must be positive");
    let sd = var.sqrt();
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    loop {
        let z = if b <= 0.0 {
            -standard_truncnorm(-b, -a, rng)
        } else {
            standard_truncnorm(a, b, rng)
        };
        let x = mean + sd * z;
        if x > lo && x < hi {
            return x;
        }
    }
}

/// Standard normal restricted to `(a, b)` with `b > 0`.
fn standard_truncnorm<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if log_norm_interval(a, b) >= MIN_INVERSION_MASS.ln() {
        return invert(a, b, rng);
    }
    if a <= 0.0 {
        // narrow interval around the mode
        return uniform_rejection(a, b, 0.0, rng);
    }
    if (b - a) * a <= 2.0 {
        uniform_rejection(a, b, a, rng)
    } else {
        exponential_rejection(a, b, rng)
    }
}

fn invert<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        let z = if a >= 0.0 {
            let (qa, qb) = (norm_sf(a), norm_sf(b));
            norm_isf(qa - u * (qa - qb))
        } else {
            let (pa, pb) = (norm_cdf(a), norm_cdf(b));
            let p = pa + u * (pb - pa);
            if p < 0.5 {
                -norm_isf(p)
            } else {
                norm_isf(norm_sf(a) - u * (pb - pa))
            }
        };
        if z > a && z < b {
            return z;
        }
    }
}

/// Uniform proposal on `(a, b)`; `peak` is the point of the interval closest to 0.
fn uniform_rejection<R: Rng + ?Sized>(a: f64, b: f64, peak: f64, rng: &mut R) -> f64 {
    loop {
        let z = a + (b - a) * rng.random::<f64>();
        let log_accept = 0.5 * (peak * peak - z * z);
        if rng.random::<f64>().ln() <= log_accept {
            return z;
        }
    }
}

/// Shifted exponential proposal for `a > 0` with optimal rate.
fn exponential_rejection<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        if z >= b {
            continue;
        }
        let d = z - rate;
        if rng.random::<f64>().ln() <= -0.5 * d * d {
            return z;
        }
    }
}
