//! The soft-simplex spike-and-slab model.
//!
//! Prior, with Gamma in shape-rate form:
//!
//! ```text
//! φ ~ Gamma(κ₁/2, κ₂/2)            γᵢ ~ Bernoulli(θ) i.i.d.
//! τ ~ Gamma(a₁, a₂), τ ≥ τ_floor    μ_γ | γ ~ Dirichlet(α·1)
//! w_γ | γ, μ, τ, φ ~ N(μ_γ, (τ/φ) I)
//! ```
//!
//! and `y = X w + ε`, `ε ~ N(0, φ⁻¹ I)`. Off-support entries of μ and w are
//! exactly zero, so γ is always recoverable from μ.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{BvssError, Result};
use crate::linalg::{quadratic_form, ModelFactor};
use crate::panel::PanelData;

/// Fixed prior constants and sampler knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub kappa1: f64,
    pub kappa2: f64,
    pub a1: f64,
    pub a2: f64,
    pub alpha: f64,
    pub theta: f64,
    pub tau_floor: f64,
    pub n_tau: usize,
    pub eta: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            kappa1: 1.0,
            kappa2: 1.0,
            a1: 0.01,
            a2: 0.1,
            alpha: 1.0,
            theta: 0.2,
            tau_floor: 1e-6,
            n_tau: 10,
            eta: 0.5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("a1", self.a1),
            ("a2", self.a2),
            ("alpha", self.alpha),
            ("tau_floor", self.tau_floor),
            ("eta", self.eta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BvssError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(BvssError::Config(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        if self.n_tau == 0 {
            return Err(BvssError::Config("n_tau must be at least 1".into()));
        }
        Ok(())
    }

    /// The pairwise sampler needs the uniform Dirichlet prior.
    pub fn require_uniform_dirichlet(&self) -> Result<()> {
        if self.alpha != 1.0 {
            return Err(BvssError::Config(format!(
                "the pairwise Gibbs update requires alpha = 1, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// `log Γ(|γ|α)/Γ(α)^|γ| + |γ| log θ + (N − |γ|) log(1 − θ)`: the part
    /// of the prior mass of a model that does not depend on μ.
    pub fn log_model_prior(&self, size: usize, n: usize) -> f64 {
        let k = size as f64;
        ln_gamma(k * self.alpha) - k * ln_gamma(self.alpha)
            + k * self.theta.ln()
            + (n - size) as f64 * (1.0 - self.theta).ln()
    }
}

/// Indices of the nonzero entries.
pub fn support(mu: &[f64]) -> Vec<usize> {
    mu.iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Current Markov chain position.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub mu: Vec<f64>,
    pub tau: f64,
    pub phi: f64,
    pub w: Vec<f64>,
    pub factor: ModelFactor,
}

impl ChainState {
    /// Builds a state with the factor matching the support of `mu` and `w = mu`.
    pub fn new(data: &PanelData, mu: Vec<f64>, tau: f64, phi: f64) -> Result<Self> {
        if mu.len() != data.n() {
            return Err(BvssError::Shape(format!("mu has length {} but panel has {} units", mu.len(), data.n())));
        }
        check_simplex(&mu)?;
        let gamma = support(&mu);
        let factor = ModelFactor::factorize(&data.x, &gamma, tau)?;
        Ok(Self {
            w: mu.clone(),
            mu,
            tau,
            phi,
            factor,
        })
    }

    pub fn gamma(&self) -> Vec<usize> {
        support(&self.mu)
    }

    pub fn model_size(&self) -> usize {
        self.mu.iter().filter(|&&v| v != 0.0).count()
    }
}

pub(crate) fn check_simplex(mu: &[f64]) -> Result<()> {
    if mu.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(BvssError::Domain("mu must be nonnegative and finite".into()));
    }
    let total: f64 = mu.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(BvssError::Domain(format!("mu must sum to 1, sums to {total}")));
    }
    Ok(())
}

/// `y − X_γ μ_γ`.
pub fn residual(data: &PanelData, mu: &[f64]) -> DVector<f64> {
    let mut r = data.y.clone();
    for (j, &m) in mu.iter().enumerate() {
        if m != 0.0 {
            r.axpy(-m, &data.x.column(j), 1.0);
        }
    }
    r
}

/// `(y − X_γμ_γ)ᵀ Σ_{γ,τ} (y − X_γμ_γ)` for the factor's active set.
pub fn residual_quadratic(factor: &ModelFactor, data: &PanelData, mu: &[f64]) -> f64 {
    let r = residual(data, mu);
    quadratic_form(factor, &data.x, &r, &r).max(0.0)
}

/// `log p(y | γ, μ_γ, τ, φ)` up to a constant free of (μ, τ, φ):
/// `(M/2) log φ − (|γ|/2) log τ − ½ log det V − (φ/2) rᵀΣr`.
pub fn log_likelihood(mu: &[f64], tau: f64, phi: f64, data: &PanelData) -> Result<f64> {
    let gamma = support(mu);
    if gamma.is_empty() {
        return Err(BvssError::Domain("the empty model has zero prior mass".into()));
    }
    let factor = ModelFactor::factorize(&data.x, &gamma, tau)?;
    let q = residual_quadratic(&factor, data, mu);
    Ok(log_likelihood_from_parts(data.m(), &factor, phi, q))
}

pub(crate) fn log_likelihood_from_parts(m: usize, factor: &ModelFactor, phi: f64, quad: f64) -> f64 {
    0.5 * m as f64 * phi.ln() - 0.5 * factor.len() as f64 * factor.tau().ln() - 0.5 * factor.log_det()
        - 0.5 * phi * quad
}

/// Shape and rate of the Gamma full conditional of φ.
pub fn phi_conditional(m: usize, quad: f64, h: &Hyperparams) -> (f64, f64) {
    ((m as f64 + h.kappa1) / 2.0, (h.kappa2 + quad) / 2.0)
}

pub(crate) fn sample_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters validated by caller")
        .sample(rng)
}

/// Draws φ from `Gamma((M+κ₁)/2, (κ₂ + rᵀΣr)/2)`.
pub fn draw_phi<R: Rng + ?Sized>(state: &ChainState, data: &PanelData, h: &Hyperparams, rng: &mut R) -> f64 {
    let q = residual_quadratic(&state.factor, data, &state.mu);
    let (shape, rate) = phi_conditional(data.m(), q, h);
    sample_gamma(shape, rate, rng)
}

/// Conditional mean `V⁻¹(X_γᵀy + τ⁻¹μ_γ)` in active-set order.
pub fn conditional_w_mean(factor: &ModelFactor, data: &PanelData, mu: &[f64]) -> Vec<f64> {
    let inv_tau = 1.0 / factor.tau();
    let rhs: Vec<f64> = factor
        .active_set()
        .iter()
        .map(|&j| data.x.column(j).dot(&data.y) + inv_tau * mu[j])
        .collect();
    factor.solve(&rhs)
}

/// Draws `w_γ ~ N(V⁻¹(X_γᵀy + τ⁻¹μ_γ), φ⁻¹V⁻¹)`; zeros off the support.
pub fn draw_w<R: Rng + ?Sized>(state: &ChainState, data: &PanelData, rng: &mut R) -> Vec<f64> {
    let mean = conditional_w_mean(&state.factor, data, &state.mu);
    let mut noise: Vec<f64> = (0..mean.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    // Lᵀ e = z gives Cov(e) = V⁻¹
    state.factor.backward_solve_in_place(&mut noise);
    let scale = state.phi.sqrt().recip();
    let mut w = vec![0.0; data.n()];
    for ((&j, m), e) in state.factor.active_set().iter().zip(&mean).zip(&noise) {
        w[j] = m + scale * e;
    }
    w
}

/// Gamma(a₁, a₂) log density on `[τ_floor, ∞)`; the truncation constant is
/// omitted. Returns −∞ below the floor.
pub fn log_prior_tau(tau: f64, h: &Hyperparams) -> f64 {
    if !(tau >= h.tau_floor) || !tau.is_finite() {
        return f64::NEG_INFINITY;
    }
    h.a1 * h.a2.ln() - ln_gamma(h.a1) + (h.a1 - 1.0) * tau.ln() - h.a2 * tau
}

/// Draws μ from its prior: γᵢ ~ Bernoulli(θ) conditioned on |γ| ≥ 1, then a
/// symmetric Dirichlet on the selected coordinates.
pub fn sample_mu_prior<R: Rng + ?Sized>(h: &Hyperparams, n: usize, rng: &mut R) -> Vec<f64> {
    assert!(n >= 1, "need at least one unit");
    let gamma: Vec<usize> = loop {
        let g: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < h.theta).collect();
        if !g.is_empty() {
            break g;
        }
    };
    let dist = Gamma::new(h.alpha, 1.0).expect("alpha validated");
    let mut mu = vec![0.0; n];
    loop {
        let draws: Vec<f64> = gamma.iter().map(|_| dist.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && draws.iter().all(|&d| d > 0.0) {
            for (&j, d) in gamma.iter().zip(draws) {
                mu[j] = d / total;
            }
            return mu;
        }
    }
}
