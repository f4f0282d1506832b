//! Memetic (genetic algorithm + hill climbing) search over discrete
//! hyperparameter spaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`space`]: genes, search spaces, chromosomes and the single-gene neighborhood.
//! * [`landscapes`]: the fitness-evaluator contract, memoization, and synthetic
//!   landscapes with brute-force optima.
//! * [`evolve`]: population generation, top-2 selection, crossover, worst-2 replacement.
//! * [`localsearch`]: hill climbing used as the hybrid's mutation and as a baseline.
//! * [`extproto`]: line-delimited JSON protocol for out-of-process evaluators.
//! * [`driver`]: hybrid / GA / HC run loops, run logs, benchmark comparison.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default). See [`par::Execution`].

pub mod driver;
pub mod evolve;
pub mod extproto;
pub mod landscapes;
pub mod localsearch;
pub mod par;
pub mod space;

use rand::SeedableRng;

/// The PRNG used for every stochastic decision: ChaCha8, seeded through
/// `SeedableRng::seed_from_u64`.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}
