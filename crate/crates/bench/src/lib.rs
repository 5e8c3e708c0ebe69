//! Fixtures shared by the benchmarks.

use modssd_core::synth::{generate, SynthDataset, SynthSpec, TokenSpec};
use modssd_core::EmbeddingSpace;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Unit-normalized random vocabulary of `size` tokens.
pub fn random_space(size: usize, dim: usize, seed: u64) -> EmbeddingSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..size).map(|i| (format!("w{i:06}"), (0..dim).map(|_| rng.sample(StandardNormal)).collect()));
    let mut space = EmbeddingSpace::from_rows(rows).expect("valid rows");
    space.normalize();
    space
}

pub fn token_corpus(n: usize, dim: usize, vocab_size: usize, seed: u64) -> SynthDataset {
    generate(&SynthSpec {
        n,
        dim,
        k_true: 5,
        tokens: Some(TokenSpec { vocab_size, ..TokenSpec::default() }),
        seed,
        ..SynthSpec::default()
    })
    .expect("valid spec")
}
