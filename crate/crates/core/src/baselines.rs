//! Frequentist comparators: least squares, simplex-constrained least
//! squares and cross-validated Lasso. None of them has an intercept.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{BvssError, Result};
use crate::linalg::{ols_fit, qp_simplex};
use crate::panel::PanelData;

/// A point estimate of the synthetic-control weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub w_hat: Vec<f64>,
    pub support: Vec<usize>,
    pub att: f64,
    pub method_tag: String,
    pub converged: bool,
}

impl EstimatorResult {
    fn new(w_hat: Vec<f64>, data: &PanelData, tag: impl Into<String>, converged: bool) -> Result<Self> {
        let support = (0..w_hat.len()).filter(|&i| w_hat[i] != 0.0).collect();
        Ok(Self {
            att: att_plugin(&w_hat, data)?,
            w_hat,
            support,
            method_tag: tag.into(),
            converged,
        })
    }
}

/// `mean(Ỹ¹ − X̃w)`.
pub fn att_plugin(w: &[f64], data: &PanelData) -> Result<f64> {
    if w.len() != data.n() {
        return Err(BvssError::Shape(format!("weights have length {} but panel has {} units", w.len(), data.n())));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(BvssError::Domain("weights must be finite".into()));
    }
    let cf = &data.x_post * DVector::from_column_slice(w);
    Ok((&data.y_post - cf).mean())
}

fn resolve_support(data: &PanelData, support: Option<&[usize]>) -> Result<Vec<usize>> {
    let n = data.n();
    let s: Vec<usize> = match support {
        Some(s) => s.to_vec(),
        None => (0..n).collect(),
    };
    if s.is_empty() {
        return Err(BvssError::Domain("empty support".into()));
    }
    if let Some(&bad) = s.iter().find(|&&j| j >= n) {
        return Err(BvssError::Bounds { index: bad, lo: 0, hi: n });
    }
    Ok(s)
}

fn tag(base: &str, support: Option<&[usize]>) -> String {
    match support {
        Some(_) => format!("{base}_oracle"),
        None => base.to_owned(),
    }
}

/// Least squares on `support` (all columns by default). A rank-deficient
/// design yields a zero vector flagged as not converged.
pub fn fit_ols(data: &PanelData, support: Option<&[usize]>) -> Result<EstimatorResult> {
    let s = resolve_support(data, support)?;
    let name = tag("ols", support);
    let n = data.n();
    if s.len() > data.m() {
        return EstimatorResult::new(vec![0.0; n], data, name, false);
    }
    match ols_fit(&data.x, &s, &data.y) {
        Ok(fit) => {
            let mut w = vec![0.0; n];
            for (&j, v) in s.iter().zip(fit.mu_hat) {
                w[j] = v;
            }
            EstimatorResult::new(w, data, name, true)
        }
        Err(BvssError::Rank { .. }) => EstimatorResult::new(vec![0.0; n], data, name, false),
        Err(e) => Err(e),
    }
}

const QP_SNAP: f64 = 1e-10;

/// Least squares over the simplex on `support`.
pub fn fit_qp(data: &PanelData, support: Option<&[usize]>) -> Result<EstimatorResult> {
    let s = resolve_support(data, support)?;
    let x_sub = data.x.select_columns(&s);
    let scale = 2.0 * x_sub.tr_mul(&data.y).amax().max(1.0);
    let qp = qp_simplex(&x_sub, &data.y, 1e-9 * scale, 50_000)?;
    let mut w = vec![0.0; data.n()];
    for (&j, &v) in s.iter().zip(&qp.w) {
        w[j] = if v < QP_SNAP { 0.0 } else { v };
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    EstimatorResult::new(w, data, tag("qp", support), qp.converged)
}

/// Lasso settings. Columns are rescaled to `(1/M)‖x_j‖² = 1` without
/// centering when `standardize` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    pub n_folds: usize,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub standardize: bool,
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            n_folds: 10,
            n_lambda: 100,
            lambda_min_ratio: 1e-4,
            standardize: true,
            tol: 1e-9,
            max_sweeps: 100_000,
            seed: 0,
        }
    }
}

/// Coefficient path for `(1/2M)‖y − Xw‖² + λ‖w‖₁` at each λ, on the
/// original column scale, plus a flag for whether every fit converged.
pub fn lasso_path(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambdas: &[f64],
    cfg: &LassoConfig,
) -> (Vec<Vec<f64>>, bool) {
    let m = x.nrows() as f64;
    let n = x.ncols();
    let scales: Vec<f64> = (0..n)
        .map(|j| {
            let s = (x.column(j).norm_squared() / m).sqrt();
            if cfg.standardize && s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let g = x.tr_mul(x);
    let xy = x.tr_mul(y);
    // standardized covariances
    let gs = DMatrix::from_fn(n, n, |a, b| g[(a, b)] / (m * scales[a] * scales[b]));
    let zy: Vec<f64> = (0..n).map(|j| xy[j] / (m * scales[j])).collect();

    let mut b = vec![0.0; n];
    // c = Zᵀ(y − Zb)/M
    let mut c = zy.clone();
    let mut all_converged = true;
    let mut path = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut converged = false;
        for _ in 0..cfg.max_sweeps {
            let mut max_change: f64 = 0.0;
            for j in 0..n {
                let d = gs[(j, j)];
                if d == 0.0 {
                    continue;
                }
                let rho = c[j] + d * b[j];
                let new = soft_threshold(rho, lambda) / d;
                let delta = new - b[j];
                if delta != 0.0 {
                    for (k, ck) in c.iter_mut().enumerate() {
                        *ck -= delta * gs[(k, j)];
                    }
                    b[j] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < cfg.tol {
                converged = true;
                break;
            }
        }
        all_converged &= converged;
        path.push(b.iter().zip(&scales).map(|(v, s)| v / s).collect());
    }
    (path, all_converged)
}

fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// Log-spaced grid from `max|Zᵀy|/M` down to `ratio` times that.
pub fn lambda_grid(x: &DMatrix<f64>, y: &DVector<f64>, n_lambda: usize, ratio: f64, standardize: bool) -> Vec<f64> {
    let m = x.nrows() as f64;
    let lambda_max = (0..x.ncols())
        .map(|j| {
            let col = x.column(j);
            let s = (col.norm_squared() / m).sqrt();
            let s = if standardize && s > 0.0 { s } else { 1.0 };
            (col.dot(y) / (m * s)).abs()
        })
        .fold(0.0, f64::max);
    if n_lambda == 1 || lambda_max == 0.0 {
        return vec![lambda_max; n_lambda.max(1)];
    }
    let step = ratio.ln() / (n_lambda - 1) as f64;
    (0..n_lambda).map(|k| lambda_max * (step * k as f64).exp()).collect()
}

/// Lasso with λ chosen by k-fold cross-validation (minimum CV error).
pub fn fit_lasso_cv(data: &PanelData, n_folds: usize, n_lambda: usize, seed: u64) -> Result<EstimatorResult> {
    fit_lasso_cv_with(
        data,
        &LassoConfig {
            n_folds,
            n_lambda,
            seed,
            ..Default::default()
        },
    )
}

pub fn fit_lasso_cv_with(data: &PanelData, cfg: &LassoConfig) -> Result<EstimatorResult> {
    let m = data.m();
    if cfg.n_folds < 2 || cfg.n_folds > m {
        return Err(BvssError::Config(format!("need 2 <= n_folds <= M, got {} folds for M = {m}", cfg.n_folds)));
    }
    if cfg.n_lambda == 0 {
        return Err(BvssError::Config("n_lambda must be positive".into()));
    }
    let lambdas = lambda_grid(&data.x, &data.y, cfg.n_lambda, cfg.lambda_min_ratio, cfg.standardize);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut fold_of = vec![0; m];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % cfg.n_folds;
    }

    let mut cv_err = vec![0.0; lambdas.len()];
    let mut converged = true;
    for fold in 0..cfg.n_folds {
        let train: Vec<usize> = (0..m).filter(|&r| fold_of[r] != fold).collect();
        let test: Vec<usize> = (0..m).filter(|&r| fold_of[r] == fold).collect();
        let xt = data.x.select_rows(&train);
        let yt = DVector::from_iterator(train.len(), train.iter().map(|&r| data.y[r]));
        let (path, ok) = lasso_path(&xt, &yt, &lambdas, cfg);
        converged &= ok;
        let xv = data.x.select_rows(&test);
        for (k, coef) in path.iter().enumerate() {
            let pred = &xv * DVector::from_column_slice(coef);
            cv_err[k] += test.iter().zip(pred.iter()).map(|(&r, p)| (data.y[r] - p).powi(2)).sum::<f64>();
        }
    }
    let best = (0..lambdas.len())
        .min_by(|&a, &b| cv_err[a].total_cmp(&cv_err[b]))
        .expect("nonempty grid");
    let (path, ok) = lasso_path(&data.x, &data.y, &lambdas[..=best], cfg);
    let w = path.into_iter().last().expect("nonempty path");
    log::debug!("lasso cv picked lambda {:.3e} (index {best})", lambdas[best]);
    EstimatorResult::new(w, data, "lasso", converged && ok)
}
