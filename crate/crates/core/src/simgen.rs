//! Simulation designs and the replicate harness used to compare BVS-SS
//! with the baseline estimators.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_lasso_cv, fit_ols, fit_qp, EstimatorResult};
use crate::error::{BvssError, Result};
use crate::inference::att_from_draws;
use crate::model::Hyperparams;
use crate::panel::{format_sig17, PanelData};
use crate::sampler::{run_chain_with, ChainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    /// Gaussian design, sparse weights.
    Sparse,
    /// Treated and control units all driven by four common factors.
    FactorNonsparse,
    /// Factor-driven controls, sparse weights for the treated unit.
    FactorSparse,
}

impl FromStr for DgpKind {
    type Err = BvssError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Self::Sparse),
            "factor_nonsparse" => Ok(Self::FactorNonsparse),
            "factor_sparse" => Ok(Self::FactorSparse),
            other => Err(BvssError::Config(format!("unknown DGP kind {other:?}"))),
        }
    }
}

impl fmt::Display for DgpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sparse => "sparse",
            Self::FactorNonsparse => "factor_nonsparse",
            Self::FactorSparse => "factor_sparse",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub m: usize,
    pub m_post: usize,
    pub n: usize,
    pub j: usize,
    pub lambda_scale: f64,
    pub delta_star: f64,
    pub seed: u64,
    /// Drops the regression noise ε and ε̃; treatment effects keep their spread.
    pub noiseless: bool,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self {
            kind: DgpKind::Sparse,
            m: 100,
            m_post: 100,
            n: 20,
            j: 5,
            lambda_scale: 1.0,
            delta_star: 0.5,
            seed: 0,
            noiseless: false,
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.j == 0 || self.j > self.n {
            return Err(BvssError::Config(format!("need 1 <= J <= N, got J = {} and N = {}", self.j, self.n)));
        }
        if self.n < 2 || self.m == 0 || self.m_post == 0 {
            return Err(BvssError::Config("need N >= 2 and at least one pre and post period".into()));
        }
        if !(self.lambda_scale > 0.0 && self.lambda_scale.is_finite()) {
            return Err(BvssError::Config("lambda_scale must be positive".into()));
        }
        if !self.delta_star.is_finite() {
            return Err(BvssError::Config("delta_star must be finite".into()));
        }
        Ok(())
    }

    /// `w*ⱼ = λ·j/S_J` for `j ≤ J`, where `S_J = J(J+1)/2`.
    pub fn w_star(&self) -> Vec<f64> {
        let s_j = (self.j * (self.j + 1)) as f64 / 2.0;
        (1..=self.n)
            .map(|j| if j <= self.j { self.lambda_scale * j as f64 / s_j } else { 0.0 })
            .collect()
    }

    /// `φ* = ν* = 4/‖w*‖²`.
    pub fn phi_star(&self) -> f64 {
        4.0 / self.w_star().iter().map(|w| w * w).sum::<f64>()
    }

    pub fn gamma_star(&self) -> Vec<usize> {
        (0..self.j).collect()
    }
}

/// Ground truth of one simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub w_star: Vec<f64>,
    pub gamma_star: Vec<usize>,
    pub delta_draws: Vec<f64>,
}

const FACTOR_NOISE_SD: f64 = 0.5;

/// Four factor series over `t` periods from zero initial conditions.
pub fn factor_series<R: Rng + ?Sized>(t: usize, rng: &mut R) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(t, 4);
    let z = |rng: &mut R| -> f64 { rng.sample(StandardNormal) };
    let (mut f2, mut f3) = (0.0, 0.0);
    let (mut u2_prev, mut u3_prev, mut u3_prev2) = (0.0, 0.0, 0.0);
    for i in 0..t {
        let f1 = z(rng);
        let u1 = z(rng);
        let u2 = z(rng);
        let u3 = z(rng);
        f2 = 0.9 * f2 + u1;
        f3 = 0.5 * f3 + u2 + 0.5 * u2_prev;
        let f4 = u3 + 0.8 * u3_prev + 0.4 * u3_prev2;
        u2_prev = u2;
        u3_prev2 = u3_prev;
        u3_prev = u3;
        f[(i, 0)] = f1;
        f[(i, 1)] = f2;
        f[(i, 2)] = f3;
        f[(i, 3)] = f4;
    }
    f
}

/// Loadings for `rows` series: Unif[1,2] for the first `strong`, else the
/// constant `−2/T`.
fn loadings<R: Rng + ?Sized>(rows: usize, strong: usize, total_t: usize, rng: &mut R) -> DMatrix<f64> {
    let weak = -2.0 / total_t as f64;
    DMatrix::from_fn(rows, 4, |r, _| if r < strong { rng.random_range(1.0..2.0) } else { weak })
}

/// Simulates one panel and its ground truth.
pub fn generate<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<(PanelData, Truth)> {
    spec.validate()?;
    let (m, mp, n) = (spec.m, spec.m_post, spec.n);
    let w_star = spec.w_star();
    let phi_star = spec.phi_star();
    let sd = 1.0 / phi_star.sqrt();
    let noise = Normal::new(0.0, sd).expect("finite sd");
    let delta_dist = Normal::new(spec.delta_star, sd).expect("finite sd");
    let eps = |rng: &mut R| if spec.noiseless { 0.0 } else { noise.sample(rng) };
    let ws = DVector::from_column_slice(&w_star);

    let (x, x_post, y0, y0_post) = match spec.kind {
        DgpKind::Sparse => {
            let x = DMatrix::from_fn(m, n, |_, _| rng.sample(StandardNormal));
            let xp = DMatrix::from_fn(mp, n, |_, _| rng.sample(StandardNormal));
            let y = &x * &ws + DVector::from_fn(m, |_, _| eps(rng));
            let yp = &xp * &ws + DVector::from_fn(mp, |_, _| eps(rng));
            (x, xp, y, yp)
        }
        DgpKind::FactorSparse => {
            let f = factor_series(m + mp, rng);
            let lam = loadings(n, spec.j + 1, m + mp, rng);
            let e = Normal::new(0.0, FACTOR_NOISE_SD).expect("finite sd");
            let all = &f * lam.transpose() + DMatrix::from_fn(m + mp, n, |_, _| e.sample(rng));
            let x = all.rows(0, m).into_owned();
            let xp = all.rows(m, mp).into_owned();
            let y = &x * &ws + DVector::from_fn(m, |_, _| eps(rng));
            let yp = &xp * &ws + DVector::from_fn(mp, |_, _| eps(rng));
            (x, xp, y, yp)
        }
        DgpKind::FactorNonsparse => {
            let f = factor_series(m + mp, rng);
            let lam = loadings(n + 1, spec.j + 1, m + mp, rng);
            let e = Normal::new(0.0, FACTOR_NOISE_SD).expect("finite sd");
            let noise_sd = if spec.noiseless { 0.0 } else { 1.0 };
            let all = &f * lam.transpose()
                + DMatrix::from_fn(m + mp, n + 1, |_, c| {
                    let v = e.sample(rng);
                    if c == 0 {
                        v * noise_sd
                    } else {
                        v
                    }
                });
            let y = DVector::from_fn(m, |t, _| all[(t, 0)]);
            let yp = DVector::from_fn(mp, |t, _| all[(m + t, 0)]);
            let x = all.view((0, 1), (m, n)).into_owned();
            let xp = all.view((m, 1), (mp, n)).into_owned();
            (x, xp, y, yp)
        }
    };
    let delta: Vec<f64> = (0..mp).map(|_| delta_dist.sample(rng)).collect();
    let y_post = y0_post + DVector::from_column_slice(&delta);
    let panel = PanelData::new(y0, x, y_post, x_post)?;
    Ok((
        panel,
        Truth {
            w_star,
            gamma_star: spec.gamma_star(),
            delta_draws: delta,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bvss,
    Ols,
    OlsOracle,
    Qp,
    QpOracle,
    Lasso,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Bvss,
        Method::Ols,
        Method::OlsOracle,
        Method::Qp,
        Method::QpOracle,
        Method::Lasso,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Bvss => "bvss",
            Method::Ols => "ols",
            Method::OlsOracle => "ols_oracle",
            Method::Qp => "qp",
            Method::QpOracle => "qp_oracle",
            Method::Lasso => "lasso",
        }
    }
}

impl FromStr for Method {
    type Err = BvssError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| BvssError::Config(format!("unknown method {s:?}")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Outcome of one method on one replicate; `None` fields mark a method that
/// did not converge.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub att: Option<f64>,
    pub att_sq_error: Option<f64>,
    pub l1_loss: Option<f64>,
    pub model_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub outcomes: Vec<MethodOutcome>,
    /// Posterior means from the BVS-SS chain, when it was run.
    pub tau_mean: Option<f64>,
    pub phi_mean: Option<f64>,
}

impl ReplicateResult {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }
}

/// Settings shared by every replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub hyper: Hyperparams,
    pub n_iter: usize,
    pub n_burnin: usize,
    pub lasso_folds: usize,
    pub lasso_lambdas: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            n_iter: 1000,
            n_burnin: 500,
            lasso_folds: 10,
            lasso_lambdas: 100,
        }
    }
}

fn support_l1(support: &[usize], gamma_star: &[usize], n: usize) -> f64 {
    let mut a = vec![false; n];
    for &j in support {
        a[j] = true;
    }
    let mut b = vec![false; n];
    for &j in gamma_star {
        b[j] = true;
    }
    a.iter().zip(&b).filter(|(p, q)| p != q).count() as f64
}

fn baseline_outcome(method: Method, r: EstimatorResult, truth: &Truth, delta_star: f64, n: usize) -> MethodOutcome {
    if !r.converged {
        return MethodOutcome {
            method,
            att: None,
            att_sq_error: None,
            l1_loss: None,
            model_size: None,
        };
    }
    MethodOutcome {
        method,
        att: Some(r.att),
        att_sq_error: Some((r.att - delta_star).powi(2)),
        l1_loss: Some(support_l1(&r.support, &truth.gamma_star, n)),
        model_size: Some(r.support.len() as f64),
    }
}

/// Runs every method on one simulated panel.
pub fn run_replicate(spec: &DgpSpec, methods: &[Method], cfg: &SimConfig, replicate: usize, seed: u64) -> Result<ReplicateResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (panel, truth) = generate(spec, &mut rng)?;
    let n = panel.n();
    let mut outcomes = Vec::with_capacity(methods.len());
    let (mut tau_mean, mut phi_mean) = (None, None);
    for &method in methods {
        let outcome = match method {
            Method::Bvss => {
                let out = run_chain_with(
                    &panel,
                    &cfg.hyper,
                    &ChainConfig {
                        n_iter: cfg.n_iter,
                        n_burnin: cfg.n_burnin,
                        seed,
                        ..Default::default()
                    },
                )?;
                let s = att_from_draws(&out, &panel, 0.95, true)?;
                tau_mean = Some(s.tau_mean);
                phi_mean = Some(s.phi_mean);
                let l1 = out
                    .draws
                    .iter()
                    .map(|d| {
                        let sup: Vec<usize> = (0..n).filter(|&i| d.mu[i] > 0.0).collect();
                        support_l1(&sup, &truth.gamma_star, n)
                    })
                    .sum::<f64>()
                    / out.draws.len() as f64;
                MethodOutcome {
                    method,
                    att: Some(s.mean),
                    att_sq_error: Some((s.mean - spec.delta_star).powi(2)),
                    l1_loss: Some(l1),
                    model_size: Some(s.model_size_mean),
                }
            }
            Method::Ols => baseline_outcome(method, fit_ols(&panel, None)?, &truth, spec.delta_star, n),
            Method::OlsOracle => {
                baseline_outcome(method, fit_ols(&panel, Some(&truth.gamma_star))?, &truth, spec.delta_star, n)
            }
            Method::Qp => baseline_outcome(method, fit_qp(&panel, None)?, &truth, spec.delta_star, n),
            Method::QpOracle => {
                baseline_outcome(method, fit_qp(&panel, Some(&truth.gamma_star))?, &truth, spec.delta_star, n)
            }
            Method::Lasso => baseline_outcome(
                method,
                fit_lasso_cv(&panel, cfg.lasso_folds.min(panel.m()), cfg.lasso_lambdas, seed)?,
                &truth,
                spec.delta_star,
                n,
            ),
        };
        outcomes.push(outcome);
    }
    Ok(ReplicateResult {
        replicate,
        seed,
        outcomes,
        tau_mean,
        phi_mean,
    })
}

/// Across-replicate summary for one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mse: Option<f64>,
    /// `MSE(OLS on the true support) / MSE(method)`, in percent.
    pub relative_efficiency: Option<f64>,
    pub mean_l1_loss: Option<f64>,
    pub mean_model_size: Option<f64>,
    pub n_ok: usize,
    pub n_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub spec: DgpSpec,
    pub n_rep: usize,
    pub base_seed: u64,
    pub summaries: Vec<MethodSummary>,
    /// Mean over replicates of the BVS-SS posterior means.
    pub tau_mean: Option<f64>,
    pub phi_mean: Option<f64>,
    /// Mean over replicates of `E[τ|y] / E[φ|y]`.
    pub tau_phi_ratio: Option<f64>,
    #[serde(skip)]
    pub replicates: Vec<ReplicateResult>,
}

impl SimulationReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Long format: `replicate,seed,method,metric,value`.
    pub fn write_metrics_csv<W: Write>(&self, writer: W, comment: Option<&str>) -> Result<()> {
        let mut out = writer;
        if let Some(c) = comment {
            writeln!(out, "# {c}").map_err(|e| BvssError::io("<metrics>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replicate", "seed", "method", "metric", "value"])?;
        let fmt = |v: Option<f64>| v.map(format_sig17).unwrap_or_else(|| "NA".into());
        for r in &self.replicates {
            let (rep, seed) = (r.replicate.to_string(), r.seed.to_string());
            for o in &r.outcomes {
                for (metric, value) in [
                    ("att", o.att),
                    ("att_sq_error", o.att_sq_error),
                    ("l1_loss", o.l1_loss),
                    ("model_size", o.model_size),
                ] {
                    w.write_record([rep.as_str(), &seed, o.method.label(), metric, &fmt(value)])?;
                }
            }
            if r.tau_mean.is_some() {
                w.write_record([rep.as_str(), &seed, "bvss", "tau_mean", &fmt(r.tau_mean)])?;
                w.write_record([rep.as_str(), &seed, "bvss", "phi_mean", &fmt(r.phi_mean)])?;
            }
        }
        w.flush().map_err(|e| BvssError::io("<metrics>", e))?;
        Ok(())
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut k) = (0.0, 0usize);
    for v in values {
        s += v;
        k += 1;
    }
    (k > 0).then(|| s / k as f64)
}

/// Runs `n_rep` replicates with seeds `base_seed + r` in parallel and
/// aggregates them in replicate order.
pub fn run_replicates(
    spec: &DgpSpec,
    methods: &[Method],
    n_rep: usize,
    base_seed: u64,
    cfg: &SimConfig,
) -> Result<SimulationReport> {
    spec.validate()?;
    if n_rep == 0 {
        return Err(BvssError::Config("n_rep must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(BvssError::Config("no methods requested".into()));
    }
    let replicates = (0..n_rep)
        .into_par_iter()
        .map(|r| run_replicate(spec, methods, cfg, r, base_seed.wrapping_add(r as u64)))
        .collect::<Result<Vec<_>>>()?;

    let mse_of = |m: Method| mean_of(replicates.iter().filter_map(|r| r.outcome(m)?.att_sq_error));
    let oracle_mse = mse_of(Method::OlsOracle);
    let summaries = methods
        .iter()
        .map(|&m| {
            let ok: Vec<&MethodOutcome> =
                replicates.iter().filter_map(|r| r.outcome(m)).filter(|o| o.att.is_some()).collect();
            let mse = mse_of(m);
            MethodSummary {
                method: m,
                mse,
                relative_efficiency: match (oracle_mse, mse) {
                    (Some(o), Some(v)) if v > 0.0 => Some(100.0 * o / v),
                    (Some(_), Some(_)) => Some(100.0),
                    _ => None,
                },
                mean_l1_loss: mean_of(ok.iter().filter_map(|o| o.l1_loss)),
                mean_model_size: mean_of(ok.iter().filter_map(|o| o.model_size)),
                n_ok: ok.len(),
                n_missing: n_rep - ok.len(),
            }
        })
        .collect();
    Ok(SimulationReport {
        spec: spec.clone(),
        n_rep,
        base_seed,
        summaries,
        tau_mean: mean_of(replicates.iter().filter_map(|r| r.tau_mean)),
        phi_mean: mean_of(replicates.iter().filter_map(|r| r.phi_mean)),
        tau_phi_ratio: mean_of(replicates.iter().filter_map(|r| Some(r.tau_mean? / r.phi_mean?))),
        replicates,
    })
}
