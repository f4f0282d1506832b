//! The JSON run-configuration document.
//!
//! ```json
//! {
//!   "population_size": 5,
//!   "max_generations": 3,
//!   "fitness_threshold": 1.0,
//!   "seed": 42,
//!   "crossover": "uniform",
//!   "hc_strategy": "first_improvement",
//!   "hc_budget": 42,
//!   "space": "default_cnn",
//!   "evaluator": {"kind": "hashed", "seed": 7}
//! }
//! ```
//!
//! Every key is optional. `space` is either `"default_cnn"` or
//! `{"genes": [{"name": "k", "kind": "ordinal", "domain": ["3", "5"]}, ...]}`.
//! `evaluator.kind` is one of `hashed`, `separable`, `trap` or `external`.
//! See the README for the full key list.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use super::bench::BenchSection;
use crate::evolve::CrossoverMode;
use crate::extproto::{ExternalEvaluator, ProtoError, SessionOptions, StderrSink};
use crate::landscapes::{
    default_cnn_space, FitnessEvaluator, HashedLandscape, LandscapeError, SeparableLandscape, TrapLandscape, TrapParams,
};
use crate::localsearch::{HcBudget, HcStrategy};
use crate::par::Execution;
use crate::seeded_rng;
use crate::space::{Chromosome, SearchSpace};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("config {path}: at `{key}`: {message}")]
    Parse { path: String, key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid evaluator: {0}")]
    Landscape(#[from] LandscapeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Abort the run on the first failed evaluation.
    #[default]
    Fail,
    /// Score failed evaluations as 0.0 and continue.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub fitness_threshold: f64,
    pub seed: u64,
    pub crossover: CrossoverMode,
    pub hc_strategy: HcStrategy,
    /// Per-climb evaluation cap; defaults to twice the neighborhood size.
    pub hc_budget: Option<HcBudget>,
    /// Also hill-climb the population best each generation (hybrid only).
    pub hc_on_best: bool,
    /// Pure-GA per-gene mutation rate; defaults to 1 / gene count.
    pub ga_mutation_rate: Option<f64>,
    /// Stop starting new work once the evaluator has been called this many times.
    pub max_evaluations: Option<u64>,
    pub on_evaluation_error: FailurePolicy,
    /// Adds `elapsed_ms` to every generation record (makes logs non-reproducible).
    pub log_wall_clock: bool,
    pub execution: Execution,
    pub space: SpaceSpec,
    pub evaluator: EvaluatorSpec,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            population_size: 5,
            max_generations: 3,
            fitness_threshold: 1.0,
            seed: 0,
            crossover: CrossoverMode::default(),
            hc_strategy: HcStrategy::default(),
            hc_budget: None,
            hc_on_best: false,
            ga_mutation_rate: None,
            max_evaluations: None,
            on_evaluation_error: FailurePolicy::default(),
            log_wall_clock: false,
            execution: Execution::default(),
            space: SpaceSpec::DefaultCnn,
            evaluator: EvaluatorSpec::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SpaceSpec {
    #[serde(serialize_with = "serialize_default_cnn")]
    DefaultCnn,
    Inline(SearchSpace),
}

fn serialize_default_cnn<S: serde::Serializer>(s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str("default_cnn")
}

impl<'de> Deserialize<'de> for SpaceSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let value = serde_json::Value::deserialize(d)?;
        match value {
            serde_json::Value::String(s) if s == "default_cnn" => Ok(SpaceSpec::DefaultCnn),
            serde_json::Value::String(s) => Err(D::Error::custom(format!(
                "unknown space preset {s:?}; expected \"default_cnn\" or an object with `genes`"
            ))),
            other => SearchSpace::deserialize(other).map(SpaceSpec::Inline).map_err(D::Error::custom),
        }
    }
}

impl SpaceSpec {
    pub fn build(&self) -> SearchSpace {
        match self {
            SpaceSpec::DefaultCnn => default_cnn_space(),
            SpaceSpec::Inline(space) => space.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CommandLine {
    /// Split with POSIX shell quoting rules.
    Line(String),
    Argv(Vec<String>),
}

impl CommandLine {
    pub fn argv(&self) -> Result<Vec<String>, ConfigError> {
        let argv = match self {
            CommandLine::Line(s) => {
                shell_words::split(s).map_err(|e| ConfigError::Invalid(format!("evaluator.command: {e}")))?
            }
            CommandLine::Argv(v) => v.clone(),
        };
        if argv.is_empty() {
            return Err(ConfigError::Invalid("evaluator.command is empty".into()));
        }
        Ok(argv)
    }
}

fn default_handshake_secs() -> f64 {
    60.0
}

fn default_request_secs() -> f64 {
    6.0 * 3600.0
}

fn default_window() -> usize {
    1
}

fn default_trap_value() -> f64 {
    TrapParams::default().trap_value
}

fn default_slope() -> f64 {
    TrapParams::default().slope
}

/// On the wire this is an object whose `kind` key selects the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(remote = "Self", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorSpec {
    Hashed {
        #[serde(default)]
        seed: u64,
    },
    Separable {
        /// Seed for uniformly drawn weights, used when `weights` is absent.
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        weights: Option<Vec<Vec<f64>>>,
    },
    Trap {
        /// Allele indices; defaults to the last value of every gene.
        #[serde(default)]
        target: Option<Vec<u32>>,
        /// Allele indices; defaults to the first value of every gene.
        #[serde(default)]
        trap: Option<Vec<u32>>,
        #[serde(default = "default_trap_value")]
        trap_value: f64,
        #[serde(default = "default_slope")]
        slope: f64,
        #[serde(default)]
        target_radius: usize,
    },
    External {
        command: CommandLine,
        #[serde(default = "default_handshake_secs")]
        handshake_timeout_secs: f64,
        #[serde(default = "default_request_secs")]
        request_timeout_secs: f64,
        #[serde(default = "default_window")]
        window: usize,
        /// Whether the evaluator returns the same fitness for the same genes.
        #[serde(default)]
        deterministic: bool,
    },
}

// serde's internally tagged enums buffer their content and lose the key path
// of nested errors, so the tag is moved in and out by hand around the derived
// externally tagged form.
impl<'de> Deserialize<'de> for EvaluatorSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut fields = serde_json::Map::deserialize(deserializer)?;
        let kind = match fields.remove("kind") {
            Some(serde_json::Value::String(k)) => k,
            Some(other) => return Err(D::Error::custom(format!("`kind` must be a string, got {other}"))),
            None => return Err(D::Error::missing_field("kind")),
        };
        let mut tagged = serde_json::Map::new();
        tagged.insert(kind, serde_json::Value::Object(fields));
        let mut track = serde_path_to_error::Track::new();
        let de = serde_path_to_error::Deserializer::new(serde_json::Value::Object(tagged), &mut track);
        EvaluatorSpec::deserialize(de).map_err(|e| {
            let path = track.path().to_string();
            match path.split_once('.') {
                Some((_, field)) => D::Error::custom(format!("field `{field}`: {e}")),
                None => D::Error::custom(e),
            }
        })
    }
}

impl Serialize for EvaluatorSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::Error;
        let value = EvaluatorSpec::serialize(self, serde_json::value::Serializer).map_err(S::Error::custom)?;
        let serde_json::Value::Object(outer) = value else {
            return Err(S::Error::custom("evaluator spec did not serialize to an object"));
        };
        let (kind, inner) = outer.into_iter().next().expect("one variant");
        let mut fields = serde_json::Map::new();
        fields.insert("kind".into(), serde_json::Value::String(kind));
        if let serde_json::Value::Object(inner) = inner {
            fields.extend(inner);
        }
        fields.serialize(serializer)
    }
}

impl Default for EvaluatorSpec {
    fn default() -> Self {
        EvaluatorSpec::Hashed { seed: 0 }
    }
}

impl EvaluatorSpec {
    pub fn is_external(&self) -> bool {
        matches!(self, EvaluatorSpec::External { .. })
    }

    /// Builds a synthetic landscape. External evaluators are spawned with
    /// [`EvaluatorSpec::spawn`] instead.
    pub fn build_synthetic(&self, space: &SearchSpace) -> Result<Box<dyn FitnessEvaluator>, ConfigError> {
        Ok(match self {
            EvaluatorSpec::Hashed { seed } => Box::new(HashedLandscape::new(*seed)),
            EvaluatorSpec::Separable { seed, weights } => match weights {
                Some(w) => Box::new(SeparableLandscape::new(space, w.clone())?),
                None => Box::new(SeparableLandscape::random(space, &mut seeded_rng(*seed))),
            },
            EvaluatorSpec::Trap { target, trap, trap_value, slope, target_radius } => Box::new(TrapLandscape::new(
                space,
                TrapParams {
                    target: target.clone().map(Chromosome::new),
                    trap: trap.clone().map(Chromosome::new),
                    trap_value: *trap_value,
                    slope: *slope,
                    target_radius: *target_radius,
                },
            )?),
            EvaluatorSpec::External { .. } => {
                return Err(ConfigError::Invalid("external evaluator is not synthetic".into()))
            }
        })
    }

    pub fn session_options(&self) -> Option<SessionOptions> {
        match self {
            EvaluatorSpec::External { handshake_timeout_secs, request_timeout_secs, window, .. } => {
                Some(SessionOptions {
                    handshake_timeout: Duration::from_secs_f64(*handshake_timeout_secs),
                    request_timeout: Duration::from_secs_f64(*request_timeout_secs),
                    window: (*window).max(1),
                })
            }
            _ => None,
        }
    }

    pub fn spawn(
        &self,
        space: &SearchSpace,
        stderr_sink: Option<StderrSink>,
    ) -> Result<Result<ExternalEvaluator, ProtoError>, ConfigError> {
        let EvaluatorSpec::External { command, deterministic, .. } = self else {
            return Err(ConfigError::Invalid("not an external evaluator".into()));
        };
        let argv = command.argv()?;
        let options = self.session_options().expect("external");
        Ok(ExternalEvaluator::spawn(space.clone(), &argv, options, *deterministic, stderr_sink))
    }
}

impl RunConfig {
    /// Parses a config document; errors name the offending key path.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            ConfigError::Parse {
                path: origin.to_owned(),
                key: if key.is_empty() { ".".into() } else { key },
                message: e.into_inner().to_string(),
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.population_size < 3 {
            return bad(format!("population_size must be at least 3, got {}", self.population_size));
        }
        if self.max_generations < 1 {
            return bad("max_generations must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.fitness_threshold) {
            return bad(format!("fitness_threshold must lie in [0, 1], got {}", self.fitness_threshold));
        }
        if let Some(rate) = self.ga_mutation_rate {
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("ga_mutation_rate must lie in [0, 1], got {rate}"));
            }
        }
        if self.max_evaluations == Some(0) {
            return bad("max_evaluations must be positive".into());
        }
        let space = self.space.build();
        if self.crossover == CrossoverMode::OnePoint && space.gene_count() < 2 {
            return bad("one_point crossover needs at least 2 genes".into());
        }
        if let EvaluatorSpec::External { handshake_timeout_secs, request_timeout_secs, .. } = &self.evaluator {
            for (key, v) in
                [("handshake_timeout_secs", handshake_timeout_secs), ("request_timeout_secs", request_timeout_secs)]
            {
                if !(v.is_finite() && *v > 0.0) {
                    return bad(format!("evaluator.{key} must be positive"));
                }
            }
        } else {
            self.evaluator.build_synthetic(&space)?;
        }
        self.bench.validate()?;
        Ok(())
    }

    pub fn hc_budget_for(&self, space: &SearchSpace) -> HcBudget {
        self.hc_budget.unwrap_or_else(|| HcBudget::default_for(space))
    }

    pub fn mutation_rate_for(&self, space: &SearchSpace) -> f64 {
        self.ga_mutation_rate.unwrap_or(1.0 / space.gene_count() as f64)
    }
}
