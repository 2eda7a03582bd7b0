//! Mixing diagnostics and the trace export.

use bvss::inference::effective_sample_size;
use bvss::simgen::{generate, DgpSpec};
use bvss::{diagnostics, run_chain, Hyperparams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> bvss::Result<()> {
    let spec = DgpSpec { m: 100, n: 20, ..Default::default() };
    let (panel, _) = generate(&spec, &mut ChaCha8Rng::seed_from_u64(5))?;
    let out = run_chain(&panel, &Hyperparams::default(), 3000, 500, 9)?;
    let d = diagnostics(&out)?;
    println!("{} draws", d.n_draws);
    println!("ESS tau {:.0}, phi {:.0}, |γ| {:.0}", d.ess_tau.ess, d.ess_phi.ess, d.ess_model_size.ess);
    println!("tau acceptance rate {:.3}", d.acceptance_rate_tau);

    let w1: Vec<f64> = out.draws.iter().map(|d| d.w[0]).collect();
    println!("ESS of w_1 {:.0}", effective_sample_size(&w1).ess);

    let path = std::env::temp_dir().join("bvss_example_trace.csv");
    out.write_trace_csv(std::fs::File::create(&path).expect("temp file"), &panel.unit_names, None)?;
    println!("trace written to {}", path.display());
    Ok(())
}
