//! Full workflow on a CSV panel: load, sample, summarize.
//!
//! `cargo run --release --example fit_panel -- panel.csv 40`
//! fits the panel whose first post-treatment row is 40. Without arguments
//! a simulated panel is written to a temporary file and fitted.

use std::path::PathBuf;

use bvss::panel::write_panel;
use bvss::simgen::{generate, DgpSpec};
use bvss::{att_from_draws, diagnostics, inclusion_probs, load_panel, run_chain, Hyperparams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> bvss::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (path, treatment_at) = match args.as_slice() {
        [p, t] => (PathBuf::from(p), t.parse().expect("treatment row")),
        _ => {
            let spec = DgpSpec { m: 60, m_post: 20, n: 12, ..Default::default() };
            let (panel, _) = generate(&spec, &mut ChaCha8Rng::seed_from_u64(1))?;
            let path = std::env::temp_dir().join("bvss_example_panel.csv");
            write_panel(&panel, std::fs::File::create(&path).expect("temp file"))?;
            println!("wrote simulated panel to {} (true ATT 0.5)", path.display());
            (path, spec.m)
        }
    };

    let panel = load_panel(&path, treatment_at)?;
    let out = run_chain(&panel, &Hyperparams::default(), 1000, 500, 42)?;
    let att = att_from_draws(&out, &panel, 0.95, true)?;
    println!("ATT {:.4}  95% CI ({:.4}, {:.4})", att.mean, att.ci_lo, att.ci_hi);
    println!("posterior mean |γ| {:.2}, tau {:.3e}, phi {:.3}", att.model_size_mean, att.tau_mean, att.phi_mean);

    let incl = inclusion_probs(&out)?;
    let mut ranked: Vec<(usize, f64)> = incl.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (j, p) in ranked.iter().take(5) {
        println!("  {:<10} inclusion {:.3}", panel.unit_names[*j], p);
    }
    let d = diagnostics(&out)?;
    println!("ESS tau {:.0}, phi {:.0}; tau acceptance {:.2}", d.ess_tau.ess, d.ess_phi.ess, d.acceptance_rate_tau);
    Ok(())
}
