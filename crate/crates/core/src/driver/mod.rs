//! The optimization loops: the hybrid (GA + hill-climbing mutation), the pure
//! GA baseline and the random-restart hill-climbing baseline.
//!
//! A run is fully determined by its [`RunConfig`] when the evaluator is
//! deterministic: one ChaCha8 stream seeded from `config.seed` drives every
//! random decision, and batch evaluations are joined in member order before
//! the stream is touched again.

pub mod bench;
pub mod config;
mod records;

pub use bench::{bench_compare, BenchRow, BenchSection, BenchTable};
pub use config::{ConfigError, EvaluatorSpec, FailurePolicy, RunConfig, SpaceSpec};
pub use records::{GeneMap, GenerationRecord, MemberRecord, RunResult, Termination};

use std::io;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolve::{crossover, generate_population, random_mutation, replace_worst, select_parents, Population};
use crate::extproto::{ProtoError, StderrSink};
use crate::landscapes::{CachedEvaluator, EvalError, FitnessEvaluator, ZeroOnFailure};
use crate::localsearch::{climb_from_random_start, HcBudget, HillClimb};
use crate::space::{Chromosome, EvaluatedChromosome, SearchSpace};
use crate::{seeded_rng, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Hybrid,
    Ga,
    Hc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ga, Algorithm::Hc, Algorithm::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hybrid => "hybrid",
            Algorithm::Ga => "ga",
            Algorithm::Hc => "hc",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hybrid" => Ok(Algorithm::Hybrid),
            "ga" => Ok(Algorithm::Ga),
            "hc" => Ok(Algorithm::Hc),
            other => Err(format!("unknown algorithm {other:?}; expected hybrid, ga or hc")),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("evaluator could not be started: {0}")]
    Evaluator(#[from] ProtoError),
    #[error("writing run log: {0}")]
    Io(#[from] io::Error),
}

/// Receives each generation record as soon as it is complete.
pub type RecordSink<'a> = &'a mut dyn FnMut(&GenerationRecord) -> io::Result<()>;

/// Builds the configured evaluator and runs `algorithm`.
pub fn run(config: &RunConfig, algorithm: Algorithm, sink: RecordSink<'_>) -> Result<RunResult, RunError> {
    run_with_stderr(config, algorithm, sink, None)
}

/// Like [`run`]; evaluator stderr lines (external evaluators only) go to `stderr_sink`.
pub fn run_with_stderr(
    config: &RunConfig,
    algorithm: Algorithm,
    sink: RecordSink<'_>,
    stderr_sink: Option<StderrSink>,
) -> Result<RunResult, RunError> {
    config.validate()?;
    let space = config.space.build();
    if config.evaluator.is_external() {
        let evaluator = config.evaluator.spawn(&space, stderr_sink)??;
        run_with_evaluator(config, &space, algorithm, evaluator, sink)
    } else {
        let evaluator = config.evaluator.build_synthetic(&space)?;
        run_with_evaluator(config, &space, algorithm, evaluator, sink)
    }
}

pub fn run_hybrid(config: &RunConfig) -> Result<RunResult, RunError> {
    run(config, Algorithm::Hybrid, &mut |_| Ok(()))
}

pub fn run_ga(config: &RunConfig) -> Result<RunResult, RunError> {
    run(config, Algorithm::Ga, &mut |_| Ok(()))
}

pub fn run_hc(config: &RunConfig) -> Result<RunResult, RunError> {
    run(config, Algorithm::Hc, &mut |_| Ok(()))
}

/// Runs `algorithm` against an explicit evaluator, ignoring `config.evaluator`
/// and `config.space`.
pub fn run_with_evaluator<E: FitnessEvaluator>(
    config: &RunConfig,
    space: &SearchSpace,
    algorithm: Algorithm,
    evaluator: E,
    sink: RecordSink<'_>,
) -> Result<RunResult, RunError> {
    let evaluator: Box<dyn FitnessEvaluator + '_> = match config.on_evaluation_error {
        FailurePolicy::Fail => Box::new(evaluator),
        FailurePolicy::Zero => Box::new(ZeroOnFailure(evaluator)),
    };
    let mut run = Run {
        config,
        space,
        cache: CachedEvaluator::new(evaluator),
        rng: seeded_rng(config.seed),
        hill_climb: HillClimb::new(config.hc_strategy, config.hc_budget_for(space)).with_exec(config.execution),
        started: Instant::now(),
        records: Vec::new(),
        sink,
    };
    let outcome = match algorithm {
        Algorithm::Hybrid => run.evolve(true),
        Algorithm::Ga => run.evolve(false),
        Algorithm::Hc => run.restarts(),
    };
    let (termination, failure) = match outcome {
        Ok(t) => (t, None),
        Err(Stop::Eval(e)) => (Termination::EvaluatorFailure, Some(e.to_string())),
        Err(Stop::Io(e)) => return Err(RunError::Io(e)),
    };
    let best = run.records.last().map(|r| r.best.clone());
    Ok(RunResult {
        algorithm,
        seed: config.seed,
        generations: run.records.len(),
        best,
        termination,
        failure,
        evaluations: run.cache.misses(),
        cache_hits: run.cache.hits(),
        records: run.records,
    })
}

enum Stop {
    Eval(EvalError),
    Io(io::Error),
}

impl From<EvalError> for Stop {
    fn from(e: EvalError) -> Self {
        Stop::Eval(e)
    }
}

struct Run<'a, E> {
    config: &'a RunConfig,
    space: &'a SearchSpace,
    cache: CachedEvaluator<E>,
    rng: SeededRng,
    hill_climb: HillClimb,
    started: Instant,
    records: Vec<GenerationRecord>,
    sink: RecordSink<'a>,
}

impl<E: FitnessEvaluator> Run<'_, E> {
    fn evaluate_all(&self, batch: Vec<Chromosome>) -> Result<Vec<EvaluatedChromosome>, EvalError> {
        let scores = self.cache.evaluate_batch(&batch, self.config.execution);
        batch.into_iter().zip(scores).map(|(c, f)| Ok(EvaluatedChromosome::new(c, f?))).collect()
    }

    fn remaining_budget(&self) -> Option<u64> {
        self.config.max_evaluations.map(|cap| cap.saturating_sub(self.cache.misses()))
    }

    fn budget_spent(&self) -> bool {
        self.remaining_budget() == Some(0)
    }

    /// Hill climbing with its budget capped by what is left of the run budget.
    fn climber(&self) -> Option<HillClimb> {
        match self.remaining_budget() {
            Some(0) => None,
            Some(left) => {
                let cap = left.min(self.hill_climb.budget.max_evaluations());
                Some(self.hill_climb.with_budget(HcBudget::new(cap).expect("cap is positive")))
            }
            None => Some(self.hill_climb),
        }
    }

    fn record(
        &mut self,
        members: &[EvaluatedChromosome],
        best: &EvaluatedChromosome,
        child_best: Option<&EvaluatedChromosome>,
    ) -> Result<(), Stop> {
        let record = GenerationRecord {
            generation: self.records.len() + 1,
            members: members.iter().map(|m| MemberRecord::new(self.space, m)).collect(),
            best: MemberRecord::new(self.space, best),
            child_best: child_best.map(|c| MemberRecord::new(self.space, c)),
            evaluations: self.cache.misses(),
            elapsed_ms: self.config.log_wall_clock.then(|| self.started.elapsed().as_millis() as u64),
        };
        (self.sink)(&record).map_err(Stop::Io)?;
        self.records.push(record);
        Ok(())
    }

    /// Shared generation loop of the hybrid (`hybrid = true`) and the pure GA.
    fn evolve(&mut self, hybrid: bool) -> Result<Termination, Stop> {
        let initial = generate_population(self.space, self.config.population_size, &mut self.rng)
            .expect("population size validated");
        let mut population = Population::new(self.evaluate_all(initial)?).expect("population size validated");
        let mutation_rate = self.config.mutation_rate_for(self.space);

        for generation in 1..=self.config.max_generations {
            if population.best().fitness >= self.config.fitness_threshold {
                let best = population.best().clone();
                self.record(population.members(), &best, None)?;
                return Ok(Termination::ThresholdReached);
            }
            if generation > 1 && self.budget_spent() {
                return Ok(Termination::EvaluationBudgetExhausted);
            }

            let (p1, p2) = select_parents(&population);
            let (c1, c2) = crossover(&p1.chromosome, &p2.chromosome, self.config.crossover, &mut self.rng)
                .expect("parents share the space");

            let children = if hybrid {
                let evaluated = self.evaluate_all(vec![c1, c2])?;
                let mut improved = Vec::with_capacity(2);
                for child in evaluated {
                    match self.climber() {
                        Some(hc) => {
                            let outcome = hc.run(self.space, &child, &self.cache, &mut self.rng)?;
                            improved.push(outcome.best);
                        }
                        None => improved.push(child),
                    }
                }
                if self.config.hc_on_best {
                    if let Some(hc) = self.climber() {
                        let outcome = hc.run(self.space, population.best(), &self.cache, &mut self.rng)?;
                        if outcome.best.fitness > population.best().fitness {
                            population.replace_at(0, outcome.best);
                        }
                    }
                }
                improved
            } else {
                let m1 = random_mutation(self.space, &c1, mutation_rate, &mut self.rng);
                let m2 = random_mutation(self.space, &c2, mutation_rate, &mut self.rng);
                self.evaluate_all(vec![m1, m2])?
            };

            let child_best = children.iter().min_by(|a, b| a.rank_cmp(b)).cloned().expect("two children");
            population = replace_worst(&population, children).expect("capacity validated");
            let best = population.best().clone();
            self.record(population.members(), &best, Some(&child_best))?;
        }
        Ok(Termination::GenerationsExhausted)
    }

    /// Random-restart hill climbing, one restart per generation record.
    fn restarts(&mut self) -> Result<Termination, Stop> {
        let mut best: Option<EvaluatedChromosome> = None;
        for _ in 1..=self.config.max_generations {
            if best.as_ref().is_some_and(|b| b.fitness >= self.config.fitness_threshold) {
                return Ok(Termination::ThresholdReached);
            }
            let Some(hc) = self.climber() else {
                return Ok(Termination::EvaluationBudgetExhausted);
            };
            let outcome = climb_from_random_start(self.space, &self.cache, &hc, &mut self.rng)?;
            let found = outcome.best;
            if best.as_ref().is_none_or(|b| found.fitness > b.fitness) {
                best = Some(found.clone());
            }
            let current = best.clone().expect("set above");
            self.record(std::slice::from_ref(&current), &current, Some(&found))?;
        }
        if best.is_some_and(|b| b.fitness >= self.config.fitness_threshold) {
            return Ok(Termination::ThresholdReached);
        }
        Ok(Termination::GenerationsExhausted)
    }
}
