//! Repeated runs of several algorithms on common seeds, summarized per
//! generation checkpoint.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::{run, Algorithm, ConfigError, RunConfig, RunError, RunResult, Termination};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// Generations at which the best-so-far fitness is summarized.
    pub checkpoints: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { checkpoints: vec![1, 2, 3], algorithms: Algorithm::ALL.to_vec() }
    }
}

impl BenchSection {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.checkpoints.is_empty() || self.checkpoints.contains(&0) {
            return Err(ConfigError::Invalid("bench.checkpoints must be non-empty generation numbers >= 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(ConfigError::Invalid("bench.algorithms must not be empty".into()));
        }
        let mut seen = self.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return Err(ConfigError::Invalid("bench.algorithms contains duplicates".into()));
        }
        Ok(())
    }
}

/// One replicate. `result` is `Err` when the evaluator could not be started.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub result: Result<RunResult, String>,
}

impl BenchRun {
    pub fn failed(&self) -> bool {
        match &self.result {
            Ok(r) => r.termination == Termination::EvaluatorFailure || r.records.is_empty(),
            Err(_) => true,
        }
    }

    /// Best-so-far fitness after `generation`, carrying the last record
    /// forward when the run stopped early.
    pub fn best_at(&self, generation: usize) -> Option<f64> {
        if self.failed() {
            return None;
        }
        let records = &self.result.as_ref().ok()?.records;
        let idx = generation.min(records.len()) - 1;
        Some(records[idx].best.fitness)
    }

    pub fn final_best(&self) -> Option<f64> {
        if self.failed() {
            return None;
        }
        self.result.as_ref().ok()?.best_fitness()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    pub checkpoint: String,
    pub mean: Option<f64>,
    /// Sample standard deviation (n - 1 denominator).
    pub stddev: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub failures: usize,
}

impl BenchRow {
    fn new(algorithm: Algorithm, checkpoint: String, samples: &[Option<f64>]) -> Self {
        let values: Vec<f64> = samples.iter().flatten().copied().collect();
        let failures = samples.len() - values.len();
        let n = values.len() as f64;
        let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / n);
        let stddev = mean
            .filter(|_| values.len() >= 2)
            .map(|m| (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self {
            algorithm,
            checkpoint,
            mean,
            stddev,
            min: values.iter().copied().reduce(f64::min),
            max: values.iter().copied().reduce(f64::max),
            failures,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchTable {
    pub reps: usize,
    pub checkpoints: Vec<usize>,
    pub algorithms: Vec<Algorithm>,
    pub rows: Vec<BenchRow>,
    /// Every replicate, grouped by algorithm in `algorithms` order, then by seed.
    pub runs: Vec<BenchRun>,
}

/// Runs each configured algorithm `reps` times on seeds `config.seed`,
/// `config.seed + 1`, ... so that arms share their random starts.
pub fn bench_compare(config: &RunConfig, reps: usize) -> Result<BenchTable, RunError> {
    if reps < 2 {
        return Err(ConfigError::Invalid(format!("bench needs at least 2 repetitions, got {reps}")).into());
    }
    config.validate()?;
    let section = &config.bench;
    let jobs: Vec<(Algorithm, u64)> = section
        .algorithms
        .iter()
        .flat_map(|&a| (0..reps as u64).map(move |r| (a, config.seed.wrapping_add(r))))
        .collect();

    // External evaluators are expensive processes; never run several at once.
    let exec = if config.evaluator.is_external() { Execution::Sequential } else { config.execution };
    let runs: Vec<Result<BenchRun, RunError>> = exec.map(&jobs, |&(algorithm, seed)| {
        let job = RunConfig { seed, ..config.clone() };
        let result = match run(&job, algorithm, &mut |_| Ok(())) {
            Ok(r) => Ok(r),
            Err(RunError::Evaluator(e)) => Err(e.to_string()),
            Err(e) => return Err(e),
        };
        Ok(BenchRun { algorithm, seed, result })
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for &algorithm in &section.algorithms {
        let arm: Vec<&BenchRun> = runs.iter().filter(|r| r.algorithm == algorithm).collect();
        for &k in &section.checkpoints {
            let samples: Vec<_> = arm.iter().map(|r| r.best_at(k)).collect();
            rows.push(BenchRow::new(algorithm, format!("generation_{k}"), &samples));
        }
        let samples: Vec<_> = arm.iter().map(|r| r.final_best()).collect();
        rows.push(BenchRow::new(algorithm, "final".into(), &samples));
        let samples: Vec<_> = arm.iter().map(|r| r.result.as_ref().ok().map(|x| x.evaluations as f64)).collect();
        rows.push(BenchRow::new(algorithm, "evaluations".into(), &samples));
    }
    Ok(BenchTable {
        reps,
        checkpoints: section.checkpoints.clone(),
        algorithms: section.algorithms.clone(),
        rows,
        runs,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl BenchTable {
    pub fn row(&self, algorithm: Algorithm, checkpoint: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm && r.checkpoint == checkpoint)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "algorithm,checkpoint,mean,stddev,min,max,failures")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.algorithm.name(),
                r.checkpoint,
                cell(r.mean),
                cell(r.stddev),
                cell(r.min),
                cell(r.max),
                r.failures
            )?;
        }
        Ok(())
    }

    /// Human-readable table: one row per checkpoint, one column per algorithm.
    pub fn render(&self) -> String {
        let mut labels: Vec<String> = self.checkpoints.iter().map(|k| format!("generation_{k}")).collect();
        labels.push("final".into());
        labels.push("evaluations".into());
        let mut out = format!("{:<14}", "checkpoint");
        for a in &self.algorithms {
            out.push_str(&format!("{:>22}", a.name()));
        }
        out.push('\n');
        for label in &labels {
            out.push_str(&format!("{label:<14}"));
            for &a in &self.algorithms {
                let text = match self.row(a, label) {
                    Some(BenchRow { mean: Some(m), stddev, .. }) => {
                        format!("{m:.4} ± {:.4}", stddev.unwrap_or(0.0))
                    }
                    _ => "-".into(),
                };
                out.push_str(&format!("{text:>22}"));
            }
            out.push('\n');
        }
        out
    }
}
