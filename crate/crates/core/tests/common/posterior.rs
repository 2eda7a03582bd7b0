//! Posterior quantities computed by brute force: dense matrices for the
//! likelihood and adaptive quadrature over the simplex.

use bvss::PanelData;
use statrs::function::gamma::ln_gamma;

use super::{dense_log_lik, integrate};

/// `log [θ^k (1−θ)^(n−k) Γ(kα)/Γ(α)^k]` computed from scratch.
pub fn log_prior_mass(k: usize, n: usize, theta: f64, alpha: f64) -> f64 {
    let k_f = k as f64;
    ln_gamma(k_f * alpha) - k_f * ln_gamma(alpha) + k_f * theta.ln() + (n - k) as f64 * (1.0 - theta).ln()
}

/// Unnormalized log masses of the three outcomes of a pair update:
/// all of `μᵢ + μⱼ` on `i`, all on `j`, or split between them.
pub fn pair_log_masses(data: &PanelData, mu: &[f64], i: usize, j: usize, tau: f64, phi: f64, theta: f64) -> [f64; 3] {
    let n = mu.len();
    let s = mu[i] + mu[j];
    let base = (0..n).filter(|&k| k != i && k != j && mu[k] != 0.0).count();
    let at = |u: f64| {
        let mut m = mu.to_vec();
        m[i] = u;
        m[j] = s - u;
        m
    };
    let lp_i = log_prior_mass(base + 1, n, theta, 1.0) + dense_log_lik(data, &at(s), tau, phi);
    let lp_j = log_prior_mass(base + 1, n, theta, 1.0) + dense_log_lik(data, &at(0.0), tau, phi);
    let ll = |u: f64| dense_log_lik(data, &at(u), tau, phi);
    let grid_max = (1..200)
        .map(|k| ll(s * k as f64 / 200.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let integral = integrate(&|u: f64| (ll(u) - grid_max).exp(), 0.0, s, 1e-11);
    let lp_ij = log_prior_mass(base + 2, n, theta, 1.0) + grid_max + integral.ln();
    [lp_i, lp_j, lp_ij]
}

/// Exact `p(γ | y, τ, φ)` for a three-unit panel, indexed by the bitmask
/// of γ (entries 1..=7).
pub fn three_unit_posterior(data: &PanelData, tau: f64, phi: f64, theta: f64) -> [f64; 8] {
    assert_eq!(data.n(), 3);
    let ll = |mu: [f64; 3]| dense_log_lik(data, &mu, tau, phi);
    let mut logs = [f64::NEG_INFINITY; 8];
    // reference level keeps the integrands in range
    let mut reference = f64::NEG_INFINITY;
    for a in 1..40 {
        for b in 1..(40 - a) {
            let (u, v) = (a as f64 / 40.0, b as f64 / 40.0);
            reference = reference.max(ll([u, v, 1.0 - u - v]));
        }
    }
    for k in 0..3 {
        let mut mu = [0.0; 3];
        mu[k] = 1.0;
        reference = reference.max(ll(mu));
    }
    for mask in 1usize..8 {
        let units: Vec<usize> = (0..3).filter(|k| mask & (1 << k) != 0).collect();
        let prior = log_prior_mass(units.len(), 3, theta, 1.0);
        let mass = match units.len() {
            1 => {
                let mut mu = [0.0; 3];
                mu[units[0]] = 1.0;
                (ll(mu) - reference).exp()
            }
            2 => integrate(
                &|u: f64| {
                    let mut mu = [0.0; 3];
                    mu[units[0]] = u;
                    mu[units[1]] = 1.0 - u;
                    (ll(mu) - reference).exp()
                },
                0.0,
                1.0,
                1e-9,
            ),
            _ => integrate(
                &|u: f64| integrate(&|v: f64| (ll([u, v, 1.0 - u - v]) - reference).exp(), 0.0, 1.0 - u, 1e-9),
                0.0,
                1.0,
                1e-8,
            ),
        };
        logs[mask] = prior + mass.ln();
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    let mut p = [0.0; 8];
    for mask in 1..8 {
        p[mask] = (logs[mask] - top).exp() / total;
    }
    p
}

/// Spike-and-slab log marginal likelihood of γ with a zero-mean slab
/// `w_γ ~ N(0, τ/φ I)`, plus the Bernoulli(θ) inclusion prior.
pub fn spike_slab_log_mass(data: &PanelData, gamma: &[usize], tau: f64, phi: f64, theta: f64) -> f64 {
    let n = data.n();
    let m = data.m();
    let xg = data.x.select_columns(gamma);
    let cov = nalgebra::DMatrix::identity(m, m) + &xg * xg.transpose() * tau;
    let lu = cov.lu();
    let sol = lu.solve(&data.y).unwrap();
    gamma.len() as f64 * theta.ln() + (n - gamma.len()) as f64 * (1.0 - theta).ln() - 0.5 * lu.determinant().ln()
        - 0.5 * phi * data.y.dot(&sol)
}
