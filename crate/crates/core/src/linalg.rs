//! Dense kernels for the sampler and the baseline estimators.
//!
//! [`ModelFactor`] holds the Cholesky factor of `V = X_γᵀX_γ + τ⁻¹I` for an
//! ordered active set and supports appending or deleting one column in
//! O(|γ|²). Σ = I − X_γ V⁻¹ X_γᵀ is never formed; quadratic forms go through
//! two triangular solves instead.

use nalgebra::{DMatrix, DVector};

use crate::error::{BvssError, Result};

/// Access to column inner products `X_aᵀX_b`.
pub trait CrossProducts {
    fn n_cols(&self) -> usize;
    fn cross(&self, a: usize, b: usize) -> f64;
}

impl CrossProducts for DMatrix<f64> {
    fn n_cols(&self) -> usize {
        self.ncols()
    }

    fn cross(&self, a: usize, b: usize) -> f64 {
        self.column(a).dot(&self.column(b))
    }
}

/// Precomputed `XᵀX`.
#[derive(Debug, Clone)]
pub struct Gram {
    g: DMatrix<f64>,
}

impl Gram {
    pub fn new(x: &DMatrix<f64>) -> Self {
        Self { g: x.tr_mul(x) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }
}

impl CrossProducts for Gram {
    fn n_cols(&self) -> usize {
        self.g.ncols()
    }

    #[inline]
    fn cross(&self, a: usize, b: usize) -> f64 {
        self.g[(a, b)]
    }
}

/// Cholesky factor of `X_γᵀX_γ + ridge·I` over an ordered active set,
/// where `ridge = 1/τ`.
///
/// The factor is stored as packed lower-triangular rows so that appending a
/// column only pushes one new row.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFactor {
    active: Vec<usize>,
    packed: Vec<f64>,
    tau: f64,
    ridge: f64,
}

#[inline]
fn row_start(r: usize) -> usize {
    r * (r + 1) / 2
}

const RANK_TOL: f64 = 1e-14;
const REBUILD_TOL: f64 = 1e-12;

impl ModelFactor {
    /// Factor of the empty model.
    pub fn empty(tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(BvssError::Domain(format!("tau must be positive, got {tau}")));
        }
        Ok(Self {
            active: Vec::new(),
            packed: Vec::new(),
            tau,
            ridge: 1.0 / tau,
        })
    }

    /// Factor of the plain Gram matrix `X_γᵀX_γ` (the τ → ∞ limit).
    pub fn gram_only<C: CrossProducts>(cross: &C, gamma: &[usize]) -> Result<Self> {
        let mut f = Self {
            active: Vec::new(),
            packed: Vec::new(),
            tau: f64::INFINITY,
            ridge: 0.0,
        };
        for &j in gamma {
            f.push_column(cross, j)?;
        }
        Ok(f)
    }

    /// Factorizes `X_γᵀX_γ + τ⁻¹I` from scratch.
    pub fn factorize<C: CrossProducts>(cross: &C, gamma: &[usize], tau: f64) -> Result<Self> {
        let mut f = Self::empty(tau)?;
        for (pivot, &j) in gamma.iter().enumerate() {
            f.push_column(cross, j).map_err(|e| match e {
                BvssError::Rank { .. } => BvssError::NotPositiveDefinite { pivot },
                other => other,
            })?;
        }
        Ok(f)
    }

    /// Same active set, new τ.
    pub fn refactor<C: CrossProducts>(&self, cross: &C, tau: f64) -> Result<Self> {
        Self::factorize(cross, &self.active, tau)
    }

    /// Returns the factor for `γ ∪ {j}`, with `j` appended last.
    pub fn update_add<C: CrossProducts>(&self, cross: &C, j: usize) -> Result<Self> {
        let mut f = self.clone();
        f.push_column(cross, j)?;
        Ok(f)
    }

    /// Returns the factor for `γ \ {j}`.
    pub fn update_remove<C: CrossProducts>(&self, cross: &C, j: usize) -> Result<Self> {
        let mut f = self.clone();
        f.remove_column(cross, j)?;
        Ok(f)
    }

    /// In-place append; errors if `j` is already active or numerically dependent.
    pub fn push_column<C: CrossProducts>(&mut self, cross: &C, j: usize) -> Result<()> {
        if j >= cross.n_cols() {
            return Err(BvssError::Bounds {
                index: j,
                lo: 0,
                hi: cross.n_cols(),
            });
        }
        if self.active.contains(&j) {
            return Err(BvssError::Domain(format!("column {j} already active")));
        }
        let k = self.active.len();
        let mut row: Vec<f64> = self.active.iter().map(|&a| cross.cross(a, j)).collect();
        self.forward_solve_in_place(&mut row);
        let diag_full = cross.cross(j, j) + self.ridge;
        let d2 = diag_full - row.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > RANK_TOL * diag_full.abs().max(f64::MIN_POSITIVE)) {
            return Err(BvssError::Rank { index: j });
        }
        debug_assert_eq!(self.packed.len(), row_start(k));
        self.packed.extend_from_slice(&row);
        self.packed.push(d2.sqrt());
        self.active.push(j);
        Ok(())
    }

    /// In-place deletion of column `j`.
    ///
    /// Deleting row/column p leaves the trailing block needing a rank-one
    /// update with the dropped column, which cannot lose definiteness; a
    /// collapsing diagonal still triggers a fresh factorization.
    pub fn remove_column<C: CrossProducts>(&mut self, cross: &C, j: usize) -> Result<()> {
        let p = self
            .active
            .iter()
            .position(|&a| a == j)
            .ok_or_else(|| BvssError::Domain(format!("column {j} is not active")))?;
        let k = self.active.len();
        let m = k - p - 1;
        // trailing block T (m × m) and dropped column v
        let mut v: Vec<f64> = (p + 1..k).map(|r| self.packed[row_start(r) + p]).collect();
        let mut t = vec![0.0; m * m];
        for a in 0..m {
            let r = p + 1 + a;
            for b in 0..=a {
                t[a * m + b] = self.packed[row_start(r) + p + 1 + b];
            }
        }
        let mut unstable = false;
        for c in 0..m {
            let lkk = t[c * m + c];
            let r = lkk.hypot(v[c]);
            if !(r > REBUILD_TOL * lkk.abs()) {
                unstable = true;
                break;
            }
            let cs = r / lkk;
            let sn = v[c] / lkk;
            t[c * m + c] = r;
            for i in c + 1..m {
                let lic = (t[i * m + c] + sn * v[i]) / cs;
                t[i * m + c] = lic;
                v[i] = cs * v[i] - sn * lic;
            }
        }
        let mut active = self.active.clone();
        active.remove(p);
        if unstable {
            log::warn!("cholesky column deletion unstable; refactorizing {} columns", active.len());
            let fresh = if self.tau.is_finite() {
                Self::factorize(cross, &active, self.tau)?
            } else {
                Self::gram_only(cross, &active)?
            };
            *self = fresh;
            return Ok(());
        }
        let mut packed = Vec::with_capacity(row_start(k - 1));
        for r in 0..p {
            packed.extend_from_slice(&self.packed[row_start(r)..row_start(r) + r + 1]);
        }
        for a in 0..m {
            let r = p + 1 + a;
            packed.extend_from_slice(&self.packed[row_start(r)..row_start(r) + p]);
            packed.extend_from_slice(&t[a * m..a * m + a + 1]);
        }
        self.packed = packed;
        self.active = active;
        Ok(())
    }

    pub fn active_set(&self) -> &[usize] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    #[inline]
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        if c > r {
            0.0
        } else {
            self.packed[row_start(r) + c]
        }
    }

    /// Dense copy of the lower-triangular factor.
    pub fn chol(&self) -> DMatrix<f64> {
        let k = self.len();
        DMatrix::from_fn(k, k, |r, c| self.entry(r, c))
    }

    /// `log det V = 2 Σ log diag(L)`.
    pub fn log_det(&self) -> f64 {
        (0..self.len()).map(|r| self.entry(r, r).ln()).sum::<f64>() * 2.0
    }

    /// Solves `L z = b` in place.
    pub fn forward_solve_in_place(&self, b: &mut [f64]) {
        for r in 0..b.len() {
            let row = &self.packed[row_start(r)..row_start(r) + r + 1];
            let mut acc = b[r];
            for c in 0..r {
                acc -= row[c] * b[c];
            }
            b[r] = acc / row[r];
        }
    }

    /// Solves `Lᵀ x = z` in place.
    pub fn backward_solve_in_place(&self, z: &mut [f64]) {
        let k = z.len();
        for r in (0..k).rev() {
            let mut acc = z[r];
            for i in r + 1..k {
                acc -= self.packed[row_start(i) + r] * z[i];
            }
            z[r] = acc / self.packed[row_start(r) + r];
        }
    }

    /// `V⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut z = b.to_vec();
        self.forward_solve_in_place(&mut z);
        self.backward_solve_in_place(&mut z);
        z
    }

    /// `X_γᵀ a` in active-set order.
    pub fn project(&self, x: &DMatrix<f64>, a: &DVector<f64>) -> Vec<f64> {
        self.active.iter().map(|&j| x.column(j).dot(a)).collect()
    }
}

/// `aᵀ Σ_{γ,τ} b = aᵀb − (X_γᵀa)ᵀ V⁻¹ (X_γᵀb)`.
pub fn quadratic_form(f: &ModelFactor, x: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let mut za = f.project(x, a);
    let mut zb = f.project(x, b);
    f.forward_solve_in_place(&mut za);
    f.forward_solve_in_place(&mut zb);
    a.dot(b) - za.iter().zip(&zb).map(|(p, q)| p * q).sum::<f64>()
}

/// Unconstrained least squares on the columns in `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub mu_hat: Vec<f64>,
    pub rss: f64,
}

/// Least squares with and without the affine constraint `1ᵀμ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedFit {
    pub mu_hat: Vec<f64>,
    pub mu_check: Vec<f64>,
    pub b_gamma: f64,
    pub rss_unconstrained: f64,
}

fn residual_ss(x: &DMatrix<f64>, gamma: &[usize], y: &DVector<f64>, coef: &[f64]) -> f64 {
    let mut r = y.clone();
    for (&j, &c) in gamma.iter().zip(coef) {
        r.axpy(-c, &x.column(j), 1.0);
    }
    r.norm_squared()
}

fn check_design(x: &DMatrix<f64>, gamma: &[usize], y: &DVector<f64>) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(BvssError::Shape(format!(
            "response has length {} but design has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    if gamma.is_empty() {
        return Err(BvssError::Domain("empty model".into()));
    }
    Ok(())
}

/// OLS coefficients `μ̂_γ = (X_γᵀX_γ)⁻¹X_γᵀy` and residual sum of squares.
pub fn ols_fit(x: &DMatrix<f64>, gamma: &[usize], y: &DVector<f64>) -> Result<OlsFit> {
    check_design(x, gamma, y)?;
    let f = ModelFactor::gram_only(x, gamma)?;
    let mu_hat = f.solve(&f.project(x, y));
    let rss = residual_ss(x, gamma, y, &mu_hat);
    Ok(OlsFit { mu_hat, rss })
}

/// OLS plus the `1ᵀμ = 1` constrained estimator `μ̌_γ` and the deviation
/// `b_γ = (1 − 1ᵀμ̂)² / 1ᵀ(X_γᵀX_γ)⁻¹1`, so that for every `u` with
/// `1ᵀu = 1`: `‖y − X_γu‖² = rss + b_γ + ‖X_γ(u − μ̌_γ)‖²`.
pub fn constrained_fit(x: &DMatrix<f64>, gamma: &[usize], y: &DVector<f64>) -> Result<ConstrainedFit> {
    check_design(x, gamma, y)?;
    let f = ModelFactor::gram_only(x, gamma)?;
    let mu_hat = f.solve(&f.project(x, y));
    let rss = residual_ss(x, gamma, y, &mu_hat);
    let (mu_check, b_gamma) = affine_correction(&f, &mu_hat);
    Ok(ConstrainedFit {
        mu_hat,
        mu_check,
        b_gamma,
        rss_unconstrained: rss,
    })
}

fn affine_correction(gram_factor: &ModelFactor, mu_hat: &[f64]) -> (Vec<f64>, f64) {
    let h = gram_factor.solve(&vec![1.0; mu_hat.len()]);
    let denom: f64 = h.iter().sum();
    let gap = 1.0 - mu_hat.iter().sum::<f64>();
    let mu_check = mu_hat.iter().zip(&h).map(|(m, hi)| m + gap / denom * hi).collect();
    let mut b = gap * gap / denom;
    if (-1e-12..0.0).contains(&b) {
        b = 0.0;
    }
    (mu_check, b)
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&vi| (vi - theta).max(0.0)).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 && (total - 1.0).abs() > 1e-13 {
        w.iter_mut().for_each(|wi| *wi /= total);
    }
    w
}

/// Result of [`qp_simplex`].
#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub w: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Stationarity violation on the simplex given the active face:
/// with `∇ = 2Xᵀ(Xw − y)` and `λ = min_{w_i>0} ∇_i`, the largest of
/// `|∇_i − λ|` over the support and `(λ − ∇_i)₊` off it.
pub fn simplex_kkt_residual(gradient: &[f64], w: &[f64]) -> f64 {
    let lambda = gradient
        .iter()
        .zip(w)
        .filter(|(_, &wi)| wi > 0.0)
        .map(|(&g, _)| g)
        .fold(f64::INFINITY, f64::min);
    if !lambda.is_finite() {
        return f64::INFINITY;
    }
    gradient
        .iter()
        .zip(w)
        .map(|(&g, &wi)| if wi > 0.0 { (g - lambda).abs() } else { (lambda - g).max(0.0) })
        .fold(0.0, f64::max)
}

struct QuadObjective {
    h: DMatrix<f64>,
    c: DVector<f64>,
    yy: f64,
}

impl QuadObjective {
    fn value(&self, w: &DVector<f64>) -> f64 {
        (w.dot(&(&self.h * w)) - 2.0 * self.c.dot(w) + self.yy).max(0.0)
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        (&self.h * w - &self.c) * 2.0
    }
}

/// Minimizes `‖y − Xw‖²` over the simplex by accelerated projected
/// gradient with adaptive restart.
///
/// Step size is `1/L` with `L` the power-iteration estimate (100 steps) of the
/// largest eigenvalue of `2XᵀX`. Whenever the iterate's support admits a
/// nonnegative equality-constrained least-squares solution, that face
/// solution is tried as a polished candidate.
pub fn qp_simplex(x: &DMatrix<f64>, y: &DVector<f64>, tol: f64, max_iter: usize) -> Result<QpResult> {
    let n = x.ncols();
    if n == 0 {
        return Err(BvssError::Shape("qp_simplex needs at least one column".into()));
    }
    if y.len() != x.nrows() {
        return Err(BvssError::Shape("response length does not match design rows".into()));
    }
    let gram = Gram::new(x);
    let obj = QuadObjective {
        h: gram.matrix().clone(),
        c: x.tr_mul(y),
        yy: y.norm_squared(),
    };
    let lipschitz = 2.0 * power_iteration(&obj.h, 100) * 1.01;
    if n == 1 || lipschitz == 0.0 {
        let w = DVector::from_element(n, 1.0 / n as f64);
        let grad = obj.gradient(&w);
        return Ok(QpResult {
            objective: obj.value(&w),
            kkt_residual: simplex_kkt_residual(grad.as_slice(), w.as_slice()),
            w: w.as_slice().to_vec(),
            iterations: 0,
            converged: true,
        });
    }
    let step = 1.0 / lipschitz;
    let project = |v: &DVector<f64>| DVector::from_vec(project_simplex(v.as_slice()));

    let mut w = DVector::from_element(n, 1.0 / n as f64);
    let mut f_w = obj.value(&w);
    let mut z = w.clone();
    let mut t = 1.0_f64;
    let mut best = (w.clone(), f_w, f64::INFINITY);
    let mut last_polish_support: Vec<usize> = Vec::new();

    for iter in 1..=max_iter {
        let grad_z = obj.gradient(&z);
        let w_next = project(&(&z - grad_z * step));
        let f_next = obj.value(&w_next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if f_next > f_w {
            // restart momentum from the last accepted iterate
            t = 1.0;
            z = w.clone();
        } else {
            z = &w_next + (&w_next - &w) * ((t - 1.0) / t_next);
            t = t_next;
            w = w_next;
            f_w = f_next;
        }

        if iter % 10 == 0 || iter == max_iter {
            let grad = obj.gradient(&w);
            let res = simplex_kkt_residual(grad.as_slice(), w.as_slice());
            if res < best.2 || f_w < best.1 {
                best = (w.clone(), f_w, res);
            }
            if res <= tol {
                return Ok(QpResult {
                    w: w.as_slice().to_vec(),
                    objective: f_w,
                    kkt_residual: res,
                    iterations: iter,
                    converged: true,
                });
            }
            let support: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
            if support != last_polish_support {
                if let Some(cand) = polish_face(&gram, &obj, &support) {
                    let g = obj.gradient(&cand);
                    let r = simplex_kkt_residual(g.as_slice(), cand.as_slice());
                    let fc = obj.value(&cand);
                    if r <= tol && fc <= f_w + 1e-12 * f_w.abs().max(1.0) {
                        return Ok(QpResult {
                            w: cand.as_slice().to_vec(),
                            objective: fc,
                            kkt_residual: r,
                            iterations: iter,
                            converged: true,
                        });
                    }
                }
                last_polish_support = support;
            }
        }
    }
    let (w, objective, kkt_residual) = best;
    Ok(QpResult {
        w: w.as_slice().to_vec(),
        objective,
        kkt_residual,
        iterations: max_iter,
        converged: false,
    })
}

fn polish_face(gram: &Gram, obj: &QuadObjective, support: &[usize]) -> Option<DVector<f64>> {
    if support.is_empty() {
        return None;
    }
    let f = ModelFactor::gram_only(gram, support).ok()?;
    let c: Vec<f64> = support.iter().map(|&j| obj.c[j]).collect();
    let mu_hat = f.solve(&c);
    let (mu_check, _) = affine_correction(&f, &mu_hat);
    if mu_check.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let mut w = DVector::zeros(obj.c.len());
    for (&j, &v) in support.iter().zip(&mu_check) {
        w[j] = v;
    }
    let total = w.sum();
    Some(w / total)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn power_iteration(a: &DMatrix<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    // deterministic, non-degenerate start vector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let av = a * &v;
        let nrm = av.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&av);
        v = av / nrm;
    }
    lambda.max((a * &v).norm())
}
