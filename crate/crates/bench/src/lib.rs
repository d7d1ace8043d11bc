//! Fixtures shared by the benchmarks.

use productae::train::{Batch, SnrPolicy};
use productae::{ModelConfig, Real, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform entries in [-1, 1).
pub fn random_tensor<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape.to_vec(), &data).expect("shape matches data")
}

/// A training batch at a fixed SNR.
pub fn fixed_batch<T: Real>(
    cfg: &ModelConfig,
    size: usize,
    snr_db: f64,
    seed: u64,
) -> Result<Batch<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch::sample(&mut rng, cfg, size, SnrPolicy::Fixed(snr_db))
}
