//! With a very large τ the slab around μ is flat, so pair-update model
//! probabilities approach those of a zero-mean spike-and-slab regression.

use bvss::model::{ChainState, Hyperparams};
use bvss::sampler::pair_conditional;
use bvss::simgen::{generate, DgpSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> bvss::Result<()> {
    let spec = DgpSpec { m: 30, n: 6, ..Default::default() };
    let (panel, _) = generate(&spec, &mut ChaCha8Rng::seed_from_u64(2))?;
    let h = Hyperparams::default();
    println!("{:>10} {:>28}", "tau", "P(i only, j only, both)");
    for tau in [1e-2, 1.0, 1e2, 1e4, 1e6] {
        let state = ChainState::new(&panel, vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0], tau, 10.0)?;
        let p = pair_conditional(&state, &panel, &h, 0, 1)?.probabilities();
        println!("{tau:>10.0e} {:>8.4} {:>9.4} {:>9.4}", p[0], p[1], p[2]);
    }
    Ok(())
}
