use memetic_hpo::driver::{run, run_with_evaluator, Algorithm, EvaluatorSpec, GenerationRecord, RunConfig, SpaceSpec};
use memetic_hpo::extproto::{ExternalEvaluator, SessionOptions};
use memetic_hpo::landscapes::{FitnessEvaluator, TrapLandscape, TrapParams};
use memetic_hpo::localsearch::{hill_climb, random_restart_hc, HcBudget, HcStrategy, HillClimb};
use memetic_hpo::seeded_rng;
use memetic_hpo::space::{EvaluatedChromosome, GeneSpec, SearchSpace};

fn ternary(genes: usize) -> SearchSpace {
    SearchSpace::new((0..genes).map(|i| GeneSpec::ordinal(format!("g{i}"), ["0", "1", "2"])).collect()).unwrap()
}

#[test]
fn restarts_escape_a_ninety_percent_trap() {
    let space = ternary(8);
    let land = TrapLandscape::new(&space, TrapParams { target_radius: 2, ..Default::default() }).unwrap();
    let hc = HillClimb::new(HcStrategy::SteepestAscent, HcBudget::new(1_000_000).unwrap());

    // Basin sizes by enumeration: steepest ascent is deterministic, so each
    // start either reaches the target or it does not.
    let size = space.cardinality().unwrap();
    let trapped = (0..size)
        .filter(|&rank| {
            let start = space.chromosome_at(rank);
            let f = land.evaluate(&start).unwrap();
            let out = hc.run(&space, &EvaluatedChromosome::new(start, f), &land, &mut seeded_rng(0)).unwrap();
            out.best.fitness < 1.0
        })
        .count();
    let trap_share = trapped as f64 / size as f64;
    assert!((0.85..=0.95).contains(&trap_share), "trap basin covers {trap_share}");

    let p_success = 1.0 - trap_share.powi(50);
    let macro_runs = 100;
    let failures = (0..macro_runs)
        .filter(|&seed| {
            let out = random_restart_hc(&space, 50, &land, &hc, &mut seeded_rng(seed)).unwrap();
            out.best.fitness < 1.0
        })
        .count();
    let expected = macro_runs as f64 * (1.0 - p_success);
    let sd = (macro_runs as f64 * p_success * (1.0 - p_success)).sqrt();
    assert!(
        failures as f64 <= expected + 3.0 * sd,
        "{failures} of {macro_runs} macro-runs missed the target (expected {expected:.2} ± {sd:.2})"
    );
}

#[test]
fn trap_start_is_stuck_at_trap_value() {
    let space = ternary(6);
    let land = TrapLandscape::new(&space, TrapParams::default()).unwrap();
    let start = space.chromosome_at(1);
    let f = land.evaluate(&start).unwrap();
    let out = hill_climb(
        &space,
        &EvaluatedChromosome::new(start, f),
        &land,
        HcStrategy::FirstImprovement,
        HcBudget::new(10_000).unwrap(),
        &mut seeded_rng(3),
    )
    .unwrap();
    assert_eq!(out.best.fitness, land.trap_value());
    assert_eq!(&out.best.chromosome, land.trap());
}

#[test]
fn records_reach_the_sink_in_order() {
    let config = RunConfig { max_generations: 7, ..RunConfig::default() };
    let mut seen: Vec<GenerationRecord> = Vec::new();
    let result = run(&config, Algorithm::Hybrid, &mut |r| {
        seen.push(r.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, result.records);
    assert_eq!(seen.iter().map(|r| r.generation).collect::<Vec<_>>(), (1..=7).collect::<Vec<_>>());
    for w in seen.windows(2) {
        assert!(w[0].best.fitness <= w[1].best.fitness);
        assert!(w[0].evaluations <= w[1].evaluations);
    }
    for r in &seen {
        let child = r.child_best.as_ref().unwrap();
        assert!(child.fitness <= r.best.fitness);
    }
}

#[test]
fn sink_errors_abort_the_run() {
    let err = run(&RunConfig::default(), Algorithm::Ga, &mut |_| Err(std::io::Error::other("disk full"))).unwrap_err();
    assert!(err.to_string().contains("disk full"));
}

#[test]
fn hc_on_best_climbs_the_elite() {
    let config = RunConfig {
        evaluator: EvaluatorSpec::Separable { seed: 4, weights: None },
        hc_on_best: true,
        hc_budget: Some(HcBudget::new(100_000).unwrap()),
        max_generations: 1,
        ..RunConfig::default()
    };
    let result = run(&config, Algorithm::Hybrid, &mut |_| Ok(())).unwrap();
    assert_eq!(result.best_fitness(), Some(1.0));
}

#[test]
fn external_echo_runs_are_reproducible() {
    let space = memetic_hpo::landscapes::default_cnn_space();
    let argv: Vec<String> =
        [env!("CARGO_BIN_EXE_memetic-hpo"), "proto", "echo", "--seed", "2"].map(String::from).to_vec();
    let config = RunConfig { max_generations: 4, space: SpaceSpec::DefaultCnn, ..RunConfig::default() };
    let options = SessionOptions { window: 4, ..SessionOptions::default() };
    let records: Vec<_> = (0..2)
        .map(|_| {
            let evaluator = ExternalEvaluator::spawn(space.clone(), &argv, options, true, None).unwrap();
            run_with_evaluator(&config, &space, Algorithm::Hybrid, evaluator, &mut |_| Ok(())).unwrap().records
        })
        .collect();
    assert_eq!(records[0], records[1]);
    assert_eq!(records[0].len(), 4);
}

#[test]
fn single_restart_into_trap_basin_returns_trap_value() {
    let space = ternary(6);
    let land = TrapLandscape::new(&space, TrapParams::default()).unwrap();
    let evaluator = EvaluatorSpec::Trap { target: None, trap: None, trap_value: 0.8, slope: 0.5, target_radius: 0 };
    let base = RunConfig {
        space: SpaceSpec::Inline(space.clone()),
        evaluator,
        max_generations: 1,
        hc_budget: Some(HcBudget::new(100_000).unwrap()),
        ..RunConfig::default()
    };
    // The first draw of the run's rng stream is the restart's start point;
    // pick a seed whose start lies in the trap basin (anything but the target
    // and its neighbours).
    let seed = (0..100u64)
        .find(|&s| {
            let start = memetic_hpo::space::random_chromosome(&space, &mut seeded_rng(s));
            start.hamming(land.target()) > 1
        })
        .unwrap();
    let result = run(&RunConfig { seed, ..base }, Algorithm::Hc, &mut |_| Ok(())).unwrap();
    assert_eq!(result.best_fitness(), Some(land.trap_value()));
}

#[test]
fn per_generation_evaluations_are_bounded() {
    for seed in 0..10 {
        let config = RunConfig { seed, max_generations: 10, ..RunConfig::default() };
        let space = config.space.build();
        let budget = config.hc_budget_for(&space).max_evaluations();
        let result = run(&config, Algorithm::Hybrid, &mut |_| Ok(())).unwrap();
        let mut previous = 0;
        for (i, r) in result.records.iter().enumerate() {
            let initial = if i == 0 { config.population_size as u64 } else { 0 };
            assert!(r.evaluations - previous <= 2 + 2 * budget + initial);
            previous = r.evaluations;
        }
        assert_eq!(previous, result.evaluations);
    }
}

#[test]
fn every_arm_reaches_the_separable_optimum_with_ample_budget() {
    use memetic_hpo::driver::bench_compare;
    let config = RunConfig {
        evaluator: EvaluatorSpec::Separable { seed: 12, weights: None },
        max_generations: 400,
        hc_budget: Some(HcBudget::new(100_000).unwrap()),
        ..RunConfig::default()
    };
    let table = bench_compare(&config, 5).unwrap();
    for algorithm in Algorithm::ALL {
        let row = table.row(algorithm, "final").unwrap();
        assert_eq!((row.mean, row.min), (Some(1.0), Some(1.0)), "{algorithm:?}");
    }
}

#[test]
fn two_rep_bench_is_well_formed() {
    let table = memetic_hpo::driver::bench_compare(&RunConfig::default(), 2).unwrap();
    for row in &table.rows {
        assert!(row.stddev.is_some() && row.failures == 0, "{row:?}");
        assert!(row.min <= row.mean && row.mean <= row.max);
    }
}
