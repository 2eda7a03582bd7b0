#![allow(dead_code)]

use bvss::PanelData;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Panel with `y = X w + noise` for a random simplex `w`.
pub fn random_panel(rng: &mut ChaCha8Rng, m: usize, m_post: usize, n: usize, noise: f64) -> PanelData {
    let x = gaussian_matrix(rng, m, n);
    let x_post = gaussian_matrix(rng, m_post, n);
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let w = DVector::from_iterator(n, raw.into_iter().map(|v| v / total));
    let y = &x * &w + gaussian_vector(rng, m) * noise;
    let y_post = &x_post * &w + gaussian_vector(rng, m_post) * noise;
    PanelData::new(y, x, y_post, x_post).unwrap()
}

/// Dense `Σ = (I + τ X_γ X_γᵀ)⁻¹` via LU.
pub fn dense_sigma(x: &DMatrix<f64>, gamma: &[usize], tau: f64) -> DMatrix<f64> {
    let m = x.nrows();
    let xg = x.select_columns(gamma);
    let a = DMatrix::identity(m, m) + &xg * xg.transpose() * tau;
    a.lu().try_inverse().expect("invertible")
}

/// Log marginal likelihood of `μ` from dense matrices (drops no terms that
/// depend on `γ` or `μ`).
pub fn dense_log_lik(data: &PanelData, mu: &[f64], tau: f64, phi: f64) -> f64 {
    let gamma: Vec<usize> = (0..mu.len()).filter(|&k| mu[k] != 0.0).collect();
    let m = data.m();
    let xg = data.x.select_columns(&gamma);
    let cov = DMatrix::identity(m, m) + &xg * xg.transpose() * tau;
    let lu = cov.clone().lu();
    let e = &data.y - &data.x * DVector::from_column_slice(mu);
    let sol = lu.solve(&e).unwrap();
    0.5 * m as f64 * phi.ln() - 0.5 * lu.determinant().ln() - 0.5 * phi * e.dot(&sol)
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WK[7] * fc;
    let mut gauss = GK_WG[3] * fc;
    for k in 0..7 {
        let d = h * GK_X[k];
        let s = f(c - d) + f(c + d);
        kronrod += GK_WK[k] * s;
        if k % 2 == 1 {
            gauss += GK_WG[k / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7, 15) quadrature to relative tolerance `rel`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    let mut pieces = vec![(a, b, gk15(f, a, b))];
    for _ in 0..5000 {
        let total: f64 = pieces.iter().map(|p| p.2 .0).sum();
        let err: f64 = pieces.iter().map(|p| p.2 .1).sum();
        if err <= rel * total.abs() {
            return total;
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .map(|(k, _)| k)
            .unwrap();
        let (lo, hi, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        pieces.push((lo, mid, gk15(f, lo, mid)));
        pieces.push((mid, hi, gk15(f, mid, hi)));
    }
    panic!("quadrature did not converge");
}

/// Two-sided Kolmogorov–Smirnov statistic `sup |F_n − F|`.
pub fn ks_statistic(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov tail probability `P(√n D > t)`.
pub fn kolmogorov_sf(t: f64) -> f64 {
    if t < 0.2 {
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
        total += sign * (-2.0 * k * k * t * t).exp();
    }
    (2.0 * total).clamp(0.0, 1.0)
}

pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub mod posterior;
