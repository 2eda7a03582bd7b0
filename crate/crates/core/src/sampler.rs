//! Metropolis-within-Gibbs sampler for the soft-simplex spike-and-slab model.
//!
//! One iteration sweeps every pair `i < j` in lexicographic order, redrawing
//! `(μᵢ, μⱼ)` jointly from its conditional with `μᵢ + μⱼ` held fixed, then
//! draws φ, takes `n_τ` random-walk steps on `log τ`, and draws `w`.
//!
//! During the sweep the sampler tracks `g = Xᵀ(y − Xμ)` and the residual
//! sum of squares, so every quantity a pair update needs comes from the Gram
//! matrix in `O(|γ|²)` without touching the `M`-dimensional data.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{BvssError, Result};
use crate::linalg::{Gram, ModelFactor};
use crate::model::{
    check_simplex, draw_w, log_prior_tau, phi_conditional, residual, sample_gamma, sample_mu_prior, support,
    ChainState, Hyperparams,
};
use crate::panel::{format_sig17, PanelData};
use crate::special::{log_norm_interval, LN_SQRT_2PI};

pub use crate::truncnorm::sample_truncnorm;

/// Pair mass at or below this is treated as exactly zero.
pub const S_TOL: f64 = 1e-12;

const LAMBDA_REL_TOL: f64 = 1e-12;

/// Conditional law of `(μᵢ, μⱼ)` given the remaining coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConditional {
    /// Mass available to the pair, `μᵢ + μⱼ`.
    pub s: f64,
    /// Location of the truncated normal for `μᵢ` when both are active.
    pub beta_ij: f64,
    /// `(Xᵢ − Xⱼ)ᵀ Σ (Xᵢ − Xⱼ)` under the model with both active.
    pub lambda_ij: f64,
    /// `(Xᵢ − Xⱼ)ᵀ Σ y̌(0)`; only used when `lambda_ij` is numerically zero.
    pub slope_ij: f64,
    /// Log weights for (1,0), (0,1) and (1,1).
    pub logp_i: f64,
    pub logp_j: f64,
    pub logp_ij: f64,
}

impl PairConditional {
    /// Normalized probabilities of the three cases.
    pub fn probabilities(&self) -> [f64; 3] {
        let lp = [self.logp_i, self.logp_j, self.logp_ij];
        let top = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e = lp.map(|v| (v - top).exp());
        let total: f64 = e.iter().sum();
        e.map(|v| v / total)
    }

    /// True when the two columns are indistinguishable under Σ and `μᵢ`
    /// has the exponential-tilt conditional instead of a normal one.
    pub fn is_flat(&self) -> bool {
        self.beta_ij.is_nan()
    }
}

/// One stored post-burn-in iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub mu: Vec<f64>,
    pub tau: f64,
    pub phi: f64,
    pub w: Vec<f64>,
}

impl Draw {
    pub fn model_size(&self) -> usize {
        self.mu.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Result of [`run_chain`].
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerOutput {
    pub draws: Vec<Draw>,
    /// Per draw, `X̃_γ V⁻¹(X_γᵀy + τ⁻¹μ_γ)`.
    pub rb_counterfactual: Vec<Vec<f64>>,
    pub acceptance_rate_tau: f64,
    pub seed: u64,
    pub n_iter: usize,
    pub n_burnin: usize,
    /// Pair updates that were not skipped because both coordinates were zero.
    pub pair_updates: u64,
}

impl SamplerOutput {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    /// One row per draw: `tau, phi, model_size, mu_1..mu_N, w_1..w_N`.
    pub fn write_trace_csv<W: Write>(&self, writer: W, unit_names: &[String], comment: Option<&str>) -> Result<()> {
        let mut out = writer;
        if let Some(c) = comment {
            writeln!(out, "# {c}").map_err(|e| BvssError::io("<trace>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iteration".to_owned(), "tau".into(), "phi".into(), "model_size".into()];
        header.extend(unit_names.iter().map(|u| format!("mu_{u}")));
        header.extend(unit_names.iter().map(|u| format!("w_{u}")));
        w.write_record(&header)?;
        for (t, d) in self.draws.iter().enumerate() {
            let mut rec = vec![
                (self.n_burnin + t + 1).to_string(),
                format_sig17(d.tau),
                format_sig17(d.phi),
                d.model_size().to_string(),
            ];
            rec.extend(d.mu.iter().map(|&v| format_sig17(v)));
            rec.extend(d.w.iter().map(|&v| format_sig17(v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| BvssError::io("<trace>", e))?;
        Ok(())
    }
}

/// Chain settings beyond the hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub seed: u64,
    pub tau_init: f64,
    pub phi_init: f64,
    /// Starting μ; drawn from the prior when absent.
    pub mu_init: Option<Vec<f64>>,
    /// Debug switches that hold τ or φ at their initial values.
    pub freeze_tau: bool,
    pub freeze_phi: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iter: 1000,
            n_burnin: 500,
            seed: 0,
            tau_init: 1.0,
            phi_init: 1.0,
            mu_init: None,
            freeze_tau: false,
            freeze_phi: false,
        }
    }
}

/// `g = Xᵀe` and `eᵀe` for `e = y − Xμ`.
#[derive(Debug, Clone)]
struct Residual {
    g: Vec<f64>,
    ee: f64,
}

impl Residual {
    fn fresh(data: &PanelData, mu: &[f64]) -> Self {
        let e = residual(data, mu);
        Self {
            g: data.x.tr_mul(&e).iter().copied().collect(),
            ee: e.dot(&e),
        }
    }

    /// Applies `μᵢ += di`, `μⱼ += dj`.
    fn shift(&mut self, gram: &Gram, i: usize, di: f64, j: usize, dj: f64) {
        let g = gram.matrix();
        self.ee += -2.0 * (di * self.g[i] + dj * self.g[j])
            + di * di * g[(i, i)]
            + 2.0 * di * dj * g[(i, j)]
            + dj * dj * g[(j, j)];
        for (k, gk) in self.g.iter_mut().enumerate() {
            *gk -= di * g[(k, i)] + dj * g[(k, j)];
        }
    }

    /// `eᵀ Σ e` under `f`.
    fn sigma_quad(&self, f: &ModelFactor) -> f64 {
        let z = whiten(f, |k| self.g[k]);
        (self.ee - dot(&z, &z)).max(0.0)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// `L⁻¹ (X_γᵀa)` given a lookup for the entries of `Xᵀa`.
fn whiten(f: &ModelFactor, xa: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut z: Vec<f64> = f.active_set().iter().map(|&k| xa(k)).collect();
    f.forward_solve_in_place(&mut z);
    z
}

fn log_a(f: &ModelFactor, h: &Hyperparams, n: usize) -> f64 {
    let k = f.len();
    h.log_model_prior(k, n) - 0.5 * k as f64 * f.tau().ln() - 0.5 * f.log_det()
}

/// `log ∫₀ˢ exp(c u) du`.
fn log_tilt_integral(c: f64, s: f64) -> f64 {
    let cs = c * s;
    if cs.abs() < 1e-10 {
        s.ln() + 0.5 * cs
    } else if cs > 0.0 {
        cs + (-(-cs).exp_m1()).ln() - c.ln()
    } else {
        (-cs.exp_m1()).ln() - (-c).ln()
    }
}

/// Draws from the density `∝ exp(c u)` on `(0, s)`.
fn sample_tilt<R: Rng + ?Sized>(c: f64, s: f64, rng: &mut R) -> f64 {
    let v: f64 = rng.random();
    let cs = c * s;
    if cs.abs() < 1e-10 {
        v * s
    } else if cs > 0.0 {
        s + (v + (1.0 - v) * (-cs).exp()).ln() / c
    } else {
        (v * cs.exp_m1()).ln_1p() / c
    }
}

/// Candidate factors and the conditional for one pair.
struct PairWork {
    cond: PairConditional,
    f_i: ModelFactor,
    f_j: ModelFactor,
    f_ij: ModelFactor,
}

struct Engine<'a> {
    data: &'a PanelData,
    gram: &'a Gram,
    h: &'a Hyperparams,
}

impl Engine<'_> {
    fn pair_work(&self, mu: &[f64], factor: &ModelFactor, res: &Residual, phi: f64, i: usize, j: usize) -> Result<PairWork> {
        let n = self.data.n();
        let g = self.gram.matrix();
        let (mi, mj) = (mu[i], mu[j]);
        let s = mi + mj;

        let mut base = factor.clone();
        if mi != 0.0 {
            base.remove_column(self.gram, i)?;
        }
        if mj != 0.0 {
            base.remove_column(self.gram, j)?;
        }
        let f_i = base.update_add(self.gram, i)?;
        let f_j = base.update_add(self.gram, j)?;
        let f_ij = f_i.update_add(self.gram, j)?;

        // r = y − Σ_{k≠i,j} μ_k X_k
        let rg = |k: usize| res.g[k] + mi * g[(k, i)] + mj * g[(k, j)];
        let rr = res.ee + 2.0 * (mi * res.g[i] + mj * res.g[j])
            + mi * mi * g[(i, i)]
            + 2.0 * mi * mj * g[(i, j)]
            + mj * mj * g[(j, j)];
        let (rgi, rgj) = (rg(i), rg(j));

        let za = whiten(&f_i, |k| rg(k) - s * g[(k, i)]);
        let q_i = (rr - 2.0 * s * rgi + s * s * g[(i, i)] - dot(&za, &za)).max(0.0);
        let bb = rr - 2.0 * s * rgj + s * s * g[(j, j)];
        let zb = whiten(&f_j, |k| rg(k) - s * g[(k, j)]);
        let q_j = (bb - dot(&zb, &zb)).max(0.0);

        let zb = whiten(&f_ij, |k| rg(k) - s * g[(k, j)]);
        let zd = whiten(&f_ij, |k| g[(k, i)] - g[(k, j)]);
        let q0 = (bb - dot(&zb, &zb)).max(0.0);
        let dd = g[(i, i)] - 2.0 * g[(i, j)] + g[(j, j)];
        let lambda = (dd - dot(&zd, &zd)).max(0.0);
        let slope = rgi - rgj - s * (g[(i, j)] - g[(j, j)]) - dot(&zd, &zb);

        let logp_i = log_a(&f_i, self.h, n) - 0.5 * phi * q_i;
        let logp_j = log_a(&f_j, self.h, n) - 0.5 * phi * q_j;
        let scale = g[(i, i)].max(g[(j, j)]).max(1.0);
        let (beta, logp_ij) = if lambda <= LAMBDA_REL_TOL * scale {
            (f64::NAN, log_a(&f_ij, self.h, n) - 0.5 * phi * q0 + log_tilt_integral(phi * slope, s))
        } else {
            let beta = slope / lambda;
            let root = (phi * lambda).sqrt();
            let lp = log_a(&f_ij, self.h, n) + LN_SQRT_2PI - root.ln()
                - 0.5 * phi * (q0 - beta * slope)
                + log_norm_interval(-beta * root, (s - beta) * root);
            (beta, lp)
        };
        Ok(PairWork {
            cond: PairConditional {
                s,
                beta_ij: beta,
                lambda_ij: lambda,
                slope_ij: slope,
                logp_i,
                logp_j,
                logp_ij,
            },
            f_i,
            f_j,
            f_ij,
        })
    }

    /// Redraws `(μᵢ, μⱼ)`; returns false when the pair was skipped.
    fn update_pair<R: Rng + ?Sized>(
        &self,
        state: &mut ChainState,
        res: &mut Residual,
        i: usize,
        j: usize,
        rng: &mut R,
    ) -> Result<bool> {
        let (mi, mj) = (state.mu[i], state.mu[j]);
        if mi == 0.0 && mj == 0.0 {
            return Ok(false);
        }
        let s = mi + mj;
        let (new_i, new_j, factor) = if s <= S_TOL {
            let mut f = state.factor.clone();
            if mi != 0.0 {
                f.remove_column(self.gram, i)?;
            }
            if mj != 0.0 {
                f.remove_column(self.gram, j)?;
            }
            (0.0, 0.0, f)
        } else {
            let work = self.pair_work(&state.mu, &state.factor, res, state.phi, i, j)?;
            let p = work.cond.probabilities();
            let v: f64 = rng.random();
            if v < p[0] {
                (s, 0.0, work.f_i)
            } else if v < p[0] + p[1] {
                (0.0, s, work.f_j)
            } else {
                let c = &work.cond;
                let u = if c.is_flat() {
                    sample_tilt(state.phi * c.slope_ij, s, rng)
                } else {
                    sample_truncnorm(c.beta_ij, 1.0 / (state.phi * c.lambda_ij), 0.0, s, rng)
                };
                let rest = s - u;
                if !(u > 0.0) {
                    (0.0, s, work.f_j)
                } else if !(rest > 0.0) {
                    (s, 0.0, work.f_i)
                } else {
                    (u, rest, work.f_ij)
                }
            }
        };
        res.shift(self.gram, i, new_i - mi, j, new_j - mj);
        state.mu[i] = new_i;
        state.mu[j] = new_j;
        state.factor = factor;
        Ok(true)
    }

    fn sweep<R: Rng + ?Sized>(&self, state: &mut ChainState, res: &mut Residual, rng: &mut R) -> Result<u64> {
        let n = self.data.n();
        let mut updated = 0;
        for i in 0..n {
            for j in i + 1..n {
                if self.update_pair(state, res, i, j, rng)? {
                    updated += 1;
                }
            }
        }
        Ok(updated)
    }

    fn log_lik(&self, factor: &ModelFactor, res: &Residual, phi: f64) -> f64 {
        let k = factor.len() as f64;
        0.5 * self.data.m() as f64 * phi.ln() - 0.5 * k * factor.tau().ln() - 0.5 * factor.log_det()
            - 0.5 * phi * res.sigma_quad(factor)
    }

    fn mh_tau<R: Rng + ?Sized>(&self, state: &mut ChainState, res: &Residual, rng: &mut R) -> Result<usize> {
        let step = Normal::new(0.0, self.h.eta.sqrt()).expect("eta validated");
        let mut current = self.log_lik(&state.factor, res, state.phi) + log_prior_tau(state.tau, self.h);
        let mut accepted = 0;
        for _ in 0..self.h.n_tau {
            let log_prop = state.tau.ln() + step.sample(rng);
            let prop = log_prop.exp();
            // the uniform is drawn unconditionally to keep the stream aligned
            let v: f64 = rng.random();
            if !(prop >= self.h.tau_floor) || !prop.is_finite() {
                continue;
            }
            let f = state.factor.refactor(self.gram, prop)?;
            let cand = self.log_lik(&f, res, state.phi) + log_prior_tau(prop, self.h);
            let log_ratio = cand - current + log_prop - state.tau.ln();
            if v.ln() < log_ratio {
                state.tau = prop;
                state.factor = f;
                current = cand;
                accepted += 1;
            }
        }
        Ok(accepted)
    }

    fn rb_counterfactual(&self, state: &ChainState) -> Vec<f64> {
        let inv_tau = 1.0 / state.tau;
        let rhs: Vec<f64> = state
            .factor
            .active_set()
            .iter()
            .map(|&k| self.data.x.column(k).dot(&self.data.y) + inv_tau * state.mu[k])
            .collect();
        let mean = state.factor.solve(&rhs);
        let mut cf = DVector::zeros(self.data.m_post());
        for (&k, m) in state.factor.active_set().iter().zip(mean) {
            cf.axpy(m, &self.data.x_post.column(k), 1.0);
        }
        cf.iter().copied().collect()
    }
}

fn check_state(state: &ChainState, data: &PanelData) -> Result<()> {
    if state.mu.len() != data.n() {
        return Err(BvssError::Shape(format!("state has {} units, panel has {}", state.mu.len(), data.n())));
    }
    check_simplex(&state.mu)
}

fn refreshed_factor(state: &ChainState, gram: &Gram) -> Result<ModelFactor> {
    ModelFactor::factorize(gram, &support(&state.mu), state.tau)
}

/// Conditional of `(μᵢ, μⱼ)` at `state`. Requires `μᵢ + μⱼ > S_TOL`.
pub fn pair_conditional(
    state: &ChainState,
    data: &PanelData,
    h: &Hyperparams,
    i: usize,
    j: usize,
) -> Result<PairConditional> {
    check_state(state, data)?;
    let n = data.n();
    if i == j || i >= n || j >= n {
        return Err(BvssError::Domain(format!("invalid pair ({i}, {j}) for {n} units")));
    }
    let s = state.mu[i] + state.mu[j];
    if s <= S_TOL {
        return Err(BvssError::Domain(format!("pair mass {s} is below the degeneracy tolerance")));
    }
    let gram = Gram::new(&data.x);
    let factor = refreshed_factor(state, &gram)?;
    let engine = Engine { data, gram: &gram, h };
    let res = Residual::fresh(data, &state.mu);
    Ok(engine.pair_work(&state.mu, &factor, &res, state.phi, i, j)?.cond)
}

/// One Gibbs update of `(μᵢ, μⱼ)` holding the other coordinates fixed.
pub fn gibbs_pair_update<R: Rng + ?Sized>(
    state: &ChainState,
    data: &PanelData,
    h: &Hyperparams,
    i: usize,
    j: usize,
    rng: &mut R,
) -> Result<ChainState> {
    check_state(state, data)?;
    if i >= j || j >= data.n() {
        return Err(BvssError::Domain(format!("pair update needs i < j < N, got ({i}, {j})")));
    }
    let gram = Gram::new(&data.x);
    let engine = Engine { data, gram: &gram, h };
    let mut next = state.clone();
    next.factor = refreshed_factor(state, &gram)?;
    let mut res = Residual::fresh(data, &state.mu);
    engine.update_pair(&mut next, &mut res, i, j, rng)?;
    Ok(next)
}

/// `n_τ` random-walk Metropolis steps on `log τ`; returns the new state and
/// the number of accepted proposals.
pub fn mh_update_tau<R: Rng + ?Sized>(
    state: &ChainState,
    data: &PanelData,
    h: &Hyperparams,
    rng: &mut R,
) -> Result<(ChainState, usize)> {
    check_state(state, data)?;
    let gram = Gram::new(&data.x);
    let engine = Engine { data, gram: &gram, h };
    let mut next = state.clone();
    next.factor = refreshed_factor(state, &gram)?;
    let res = Residual::fresh(data, &state.mu);
    let accepted = engine.mh_tau(&mut next, &res, rng)?;
    Ok((next, accepted))
}

/// Log acceptance ratio of a τ proposal, as used by [`mh_update_tau`].
pub fn tau_log_acceptance(state: &ChainState, data: &PanelData, h: &Hyperparams, proposal: f64) -> Result<f64> {
    if !(proposal >= h.tau_floor) {
        return Ok(f64::NEG_INFINITY);
    }
    let ll = |tau: f64| crate::model::log_likelihood(&state.mu, tau, state.phi, data);
    Ok(ll(proposal)? - ll(state.tau)? + log_prior_tau(proposal, h) - log_prior_tau(state.tau, h) + proposal.ln()
        - state.tau.ln())
}

/// Runs the chain with default initialization.
pub fn run_chain(data: &PanelData, h: &Hyperparams, n_iter: usize, n_burnin: usize, seed: u64) -> Result<SamplerOutput> {
    run_chain_with(
        data,
        h,
        &ChainConfig {
            n_iter,
            n_burnin,
            seed,
            ..Default::default()
        },
    )
}

/// Runs the chain under an explicit [`ChainConfig`].
pub fn run_chain_with(data: &PanelData, h: &Hyperparams, cfg: &ChainConfig) -> Result<SamplerOutput> {
    h.validate()?;
    h.require_uniform_dirichlet()?;
    if cfg.n_iter <= cfg.n_burnin {
        return Err(BvssError::Config(format!(
            "n_iter ({}) must exceed n_burnin ({})",
            cfg.n_iter, cfg.n_burnin
        )));
    }
    if !(cfg.tau_init >= h.tau_floor && cfg.phi_init > 0.0) {
        return Err(BvssError::Config("initial tau must be at least tau_floor and phi positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gram = Gram::new(&data.x);
    let engine = Engine { data, gram: &gram, h };
    let mu0 = match &cfg.mu_init {
        Some(mu) => mu.clone(),
        None => sample_mu_prior(h, data.n(), &mut rng),
    };
    let mut state = ChainState::new(data, mu0, cfg.tau_init, cfg.phi_init)?;
    state.factor = refreshed_factor(&state, &gram)?;
    let mut res = Residual::fresh(data, &state.mu);

    let kept = cfg.n_iter - cfg.n_burnin;
    let mut draws = Vec::with_capacity(kept);
    let mut rb = Vec::with_capacity(kept);
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    let mut pair_updates = 0u64;

    for t in 0..cfg.n_iter {
        let wrap = |e: BvssError| BvssError::Sampler {
            iteration: t + 1,
            source: Box::new(e),
        };
        pair_updates += engine.sweep(&mut state, &mut res, &mut rng).map_err(wrap)?;

        let total: f64 = state.mu.iter().sum();
        if total != 1.0 {
            state.mu.iter_mut().for_each(|v| *v /= total);
        }
        state.factor = refreshed_factor(&state, &gram).map_err(wrap)?;
        res = Residual::fresh(data, &state.mu);

        if !cfg.freeze_phi {
            let (shape, rate) = phi_conditional(data.m(), res.sigma_quad(&state.factor), h);
            state.phi = sample_gamma(shape, rate, &mut rng);
        }
        if !cfg.freeze_tau {
            accepted += engine.mh_tau(&mut state, &res, &mut rng).map_err(wrap)?;
            proposed += h.n_tau;
        }
        state.w = draw_w(&state, data, &mut rng);

        if t >= cfg.n_burnin {
            rb.push(engine.rb_counterfactual(&state));
            draws.push(Draw {
                mu: state.mu.clone(),
                tau: state.tau,
                phi: state.phi,
                w: state.w.clone(),
            });
        }
    }

    Ok(SamplerOutput {
        draws,
        rb_counterfactual: rb,
        acceptance_rate_tau: if proposed == 0 { 0.0 } else { accepted as f64 / proposed as f64 },
        seed: cfg.seed,
        n_iter: cfg.n_iter,
        n_burnin: cfg.n_burnin,
        pair_updates,
    })
}
