use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use memetic_hpo::driver::{bench_compare, EvaluatorSpec, RunConfig};
use memetic_hpo::landscapes::{brute_force_optimum, default_cnn_space, EvalError, FitnessEvaluator, HashedLandscape};
use memetic_hpo::par::Execution;
use memetic_hpo::space::Chromosome;

/// Hashed landscape with artificial per-call work, standing in for an
/// evaluator that is expensive relative to the search bookkeeping.
struct Busy(HashedLandscape, u32);

impl FitnessEvaluator for Busy {
    fn evaluate(&self, c: &Chromosome) -> Result<f64, EvalError> {
        let mut acc = 0u64;
        for i in 0..self.1 {
            acc = acc.wrapping_mul(6364136223846793005).wrapping_add(u64::from(i));
        }
        black_box(acc);
        self.0.evaluate(c)
    }
}

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn brute_force(c: &mut Criterion) {
    let space = default_cnn_space();
    let mut group = c.benchmark_group("brute_force_default_space");
    group.sample_size(10).measurement_time(Duration::from_secs(5));
    for work in [0u32, 200] {
        let land = Busy(HashedLandscape::new(1), work);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, work), &exec, |b, &exec| {
                b.iter(|| brute_force_optimum(&space, &land, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_table(c: &mut Criterion) {
    let mut group = c.benchmark_group("bench_compare_16_reps");
    group.sample_size(10).measurement_time(Duration::from_secs(5));
    for (name, exec) in MODES {
        let config = RunConfig {
            max_generations: 20,
            execution: exec,
            evaluator: EvaluatorSpec::Hashed { seed: 3 },
            ..RunConfig::default()
        };
        group.bench_function(name, |b| b.iter(|| bench_compare(&config, 16).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, brute_force, bench_table);
criterion_main!(benches);
