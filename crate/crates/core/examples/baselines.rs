//! The frequentist comparators on one simulated panel.

use bvss::baselines::{fit_lasso_cv, fit_ols, fit_qp};
use bvss::simgen::{generate, DgpSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> bvss::Result<()> {
    let spec = DgpSpec { m: 100, n: 20, ..Default::default() };
    let (panel, truth) = generate(&spec, &mut ChaCha8Rng::seed_from_u64(7))?;
    let gamma = &truth.gamma_star;
    let fits = [
        fit_ols(&panel, None)?,
        fit_ols(&panel, Some(gamma))?,
        fit_qp(&panel, None)?,
        fit_qp(&panel, Some(gamma))?,
        fit_lasso_cv(&panel, 10, 100, 0)?,
    ];
    println!("true ATT {}", spec.delta_star);
    for f in &fits {
        let l1: f64 = f.w_hat.iter().zip(&truth.w_star).map(|(a, b)| (a - b).abs()).sum();
        println!(
            "{:<11} ATT {:>8.4}  |support| {:>2}  ‖ŵ − w*‖₁ {:.3}  converged {}",
            f.method_tag,
            f.att,
            f.support.len(),
            l1,
            f.converged
        );
    }
    Ok(())
}
