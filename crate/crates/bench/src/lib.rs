//! Seeded fixtures shared by the benchmarks in `benches/`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use svig_core::sample::GameSampler;
use svig_core::{GameSpec, ScenarioTree};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tree(steps: usize) -> ScenarioTree {
    ScenarioTree::new(steps, 1.0).expect("benchmark depths are within the tree limit")
}

/// Random game with the default sampler, on a tree of `steps` steps.
pub fn game(steps: usize, seed: u64) -> GameSpec {
    GameSampler::default().sample(&tree(steps), &mut rng(seed))
}
