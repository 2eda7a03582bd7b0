//! One Gibbs update of a coordinate pair, repeated to show the three
//! outcomes and the truncated-normal split.

use bvss::model::{ChainState, Hyperparams};
use bvss::sampler::{gibbs_pair_update, pair_conditional};
use bvss::simgen::{generate, DgpSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> bvss::Result<()> {
    let spec = DgpSpec { m: 20, n: 4, j: 2, ..Default::default() };
    let (panel, _) = generate(&spec, &mut ChaCha8Rng::seed_from_u64(4))?;
    let h = Hyperparams::default();
    let state = ChainState::new(&panel, vec![0.3, 0.3, 0.4, 0.0], 1.0, 4.0)?;
    let c = pair_conditional(&state, &panel, &h, 0, 1)?;
    let p = c.probabilities();
    println!("s = {:.2}, beta = {:.4}, Lambda = {:.4}", c.s, c.beta_ij, c.lambda_ij);
    println!("P(unit 1 only) {:.4}, P(unit 2 only) {:.4}, P(both) {:.4}", p[0], p[1], p[2]);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut counts = [0usize; 3];
    let mut split_sum = 0.0;
    let n = 20_000;
    for _ in 0..n {
        let next = gibbs_pair_update(&state, &panel, &h, 0, 1, &mut rng)?;
        match (next.mu[0] > 0.0, next.mu[1] > 0.0) {
            (true, false) => counts[0] += 1,
            (false, true) => counts[1] += 1,
            _ => {
                counts[2] += 1;
                split_sum += next.mu[0];
            }
        }
    }
    let f = counts.map(|c| c as f64 / n as f64);
    println!("observed       {:.4}                 {:.4}                 {:.4}", f[0], f[1], f[2]);
    if counts[2] > 0 {
        println!("mean mu_1 when both selected {:.4}", split_sum / counts[2] as f64);
    }
    Ok(())
}
