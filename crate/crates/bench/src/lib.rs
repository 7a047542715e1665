//! Shared fixtures for the criterion benchmarks.

use funcbo::gp::{GridSampler, Observation};
use funcbo::{GridFunction, GridSpec, ScalarKernelSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `n` prior draws on a 1-d grid of `rho` points, each paired with a value.
pub fn prior_dataset(n: usize, rho: usize, seed: u64) -> Vec<Observation<GridFunction>> {
    let spec = GridSpec::unit_interval(rho).expect("valid grid");
    let sampler = GridSampler::new(&ScalarKernelSpec::se(0.3).expect("valid kernel"), spec)
        .expect("factorisable grid Gram");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let g = sampler.sample(&mut rng);
            let y = -g.l2_norm() + 0.01 * i as f64;
            Observation::new(g, y).expect("finite")
        })
        .collect()
}
