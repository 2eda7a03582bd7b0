//! Least squares under `1ᵀμ = 1` and over the simplex.

use bvss::linalg::{constrained_fit, project_simplex, qp_simplex};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> bvss::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DMatrix::from_fn(30, 4, |_, _| StandardNormal.sample(&mut rng));
    let w = DVector::from_vec(vec![0.7, 0.5, -0.2, 0.0]);
    let noise: DVector<f64> = DVector::from_fn(30, |_, _| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
    let y = &x * &w + noise;

    let fit = constrained_fit(&x, &[0, 1, 2, 3], &y)?;
    println!("OLS              {:?}", round(&fit.mu_hat));
    println!("sum-to-one       {:?}", round(&fit.mu_check));
    println!("rss {:.4}, b_gamma {:.4}", fit.rss_unconstrained, fit.b_gamma);

    // every u with 1ᵀu = 1 splits its residual sum of squares the same way
    let u = DVector::from_vec(vec![0.25; 4]);
    let direct = (&y - &x * &u).norm_squared();
    let d = &u - DVector::from_column_slice(&fit.mu_check);
    let split = fit.rss_unconstrained + fit.b_gamma + (&x * d).norm_squared();
    println!("‖y − Xu‖² = {direct:.6} = {split:.6}");

    let qp = qp_simplex(&x, &y, 1e-10, 50_000)?;
    println!("simplex QP       {:?} ({} iterations)", round(&qp.w), qp.iterations);
    println!("projected OLS    {:?}", round(&project_simplex(&fit.mu_hat)));
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
