//! Fixtures shared by the benchmarks.

use msynfd_core::check::random_example;
use msynfd_core::{EncodedExample, Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const VOCAB: usize = 200;

pub fn desk_config() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        heads: 4,
        hops: 3,
        d_hidden: 64,
        ..ModelConfig::default()
    }
}

pub fn model(cfg: ModelConfig) -> Model {
    Model::new(cfg, VOCAB, None).expect("valid bench config")
}

pub fn examples(count: usize, n: usize, hops: usize, seed: u64) -> Vec<EncodedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_example(n, VOCAB, hops, &mut rng)).collect()
}
