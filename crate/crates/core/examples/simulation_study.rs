//! Replicates of the sparse design, comparing BVS-SS with the baselines.
//!
//! `cargo run --release --example simulation_study -- 200 20 1 20`
//! runs M = 200, N = 20, ‖w*‖₁ = 1 with 20 replicates. An optional fifth
//! argument sets the base seed (default 1).

use bvss::simgen::{run_replicates, DgpSpec, Method, SimConfig};

fn main() -> bvss::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let get = |i: usize, d: f64| args.get(i).copied().unwrap_or(d);
    let (m, n) = (get(0, 100.0) as usize, get(1, 20.0) as usize);
    let spec = DgpSpec {
        m,
        m_post: m,
        n,
        j: if n >= 50 { 10 } else { 5 },
        lambda_scale: get(2, 1.0),
        ..Default::default()
    };
    let n_rep = get(3, 10.0) as usize;
    let start = std::time::Instant::now();
    let report = run_replicates(&spec, &Method::ALL, n_rep, get(4, 1.0) as u64, &SimConfig::default())?;
    println!("M={m} N={n} lambda={} reps={n_rep} ({:.1?})", spec.lambda_scale, start.elapsed());
    println!("{:<11} {:>10} {:>8} {:>8} {:>8} {:>7}", "method", "mse", "RE%", "l1", "size", "missing");
    for s in &report.summaries {
        let f = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{x:.4}"));
        println!(
            "{:<11} {:>10} {:>8} {:>8} {:>8} {:>7}",
            s.method.label(),
            f(s.mse),
            f(s.relative_efficiency),
            f(s.mean_l1_loss),
            f(s.mean_model_size),
            s.n_missing
        );
    }
    if let (Some(t), Some(p), Some(r)) = (report.tau_mean, report.phi_mean, report.tau_phi_ratio) {
        println!("posterior means: tau {t:.4e}, phi {p:.3}, tau/phi {r:.4e}");
    }
    Ok(())
}
