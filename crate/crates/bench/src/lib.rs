//! Fixtures shared by the benchmarks.

use mixflow::linalg::haar_random_unitary;
use mixflow::{generate_dataset, ComplexMatrix, MixedUnitaryChannel, ObjectiveInstance};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Data drawn from a random rank-`rank` channel on `C^dim`.
pub fn instance(dim: usize, rank: usize, pairs: usize, seed: u64) -> (MixedUnitaryChannel, ObjectiveInstance) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = MixedUnitaryChannel::random(dim, rank, &mut rng);
    let data = generate_dataset(&truth, pairs, &mut rng).expect("valid dataset");
    (truth, ObjectiveInstance::new(data).expect("consistent pairs"))
}

/// Uniform weights and Haar unitaries.
pub fn point(dim: usize, components: usize, seed: u64) -> (Vec<f64>, Vec<ComplexMatrix>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = vec![1.0 / components as f64; components];
    let us = (0..components).map(|_| haar_random_unitary(dim, &mut rng).into_inner()).collect();
    (p, us)
}
