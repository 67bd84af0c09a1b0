//! Shared inputs for the benchmarks in `benches/`.

use bundlenet::PointCloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` points uniform in `[-1, 1]^d`.
pub fn uniform_cloud(n: usize, d: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    PointCloud::new(d, data).expect("nonzero dimension")
}
