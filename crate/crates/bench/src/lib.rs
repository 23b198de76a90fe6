//! Shared fixtures for the benchmarks.

use lru_mor::deep_ssm::{DeepSsm, DeepSsmConfig};
use lru_mor::lru::{LruInit, LruParams};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_lru(seed: u64, n_x: usize, n_u: usize, n_y: usize) -> LruParams {
    LruParams::init(&mut ChaCha8Rng::seed_from_u64(seed), n_x, n_u, n_y, &LruInit::default())
}

pub fn random_input(seed: u64, channels: usize, t: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(channels, t, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_model(seed: u64, cfg: &DeepSsmConfig) -> DeepSsm {
    DeepSsm::init(&mut ChaCha8Rng::seed_from_u64(seed), cfg, &LruInit::default()).expect("valid config")
}
