//! Fitness evaluators: the evaluator contract, a memoizing wrapper, synthetic
//! landscapes whose optima can be found by enumeration, and the default CNN
//! search space.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::Rng;
use thiserror::Error;

use crate::par::Execution;
use crate::space::{Chromosome, EvaluatedChromosome, GeneSpec, SearchSpace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    /// The evaluator could not score this particular chromosome (for example
    /// the trainer ran out of memory). Other chromosomes may still succeed.
    #[error("evaluation failed: {0}")]
    Failed(String),
    #[error("fitness {0} is outside [0, 1]")]
    OutOfRange(f64),
    /// The evaluator as a whole is unusable.
    #[error("evaluator session failed: {0}")]
    Session(String),
}

/// Maps a chromosome to a fitness in `[0, 1]`.
///
/// Implementations take `&self` so that one evaluator can be shared by
/// parallel workers; evaluators with internal state synchronize it themselves.
pub trait FitnessEvaluator: Send + Sync {
    fn evaluate(&self, c: &Chromosome) -> Result<f64, EvalError>;

    /// Evaluates independent chromosomes, results in input order. Evaluators
    /// that can pipeline or batch requests override this.
    fn evaluate_many(&self, batch: &[Chromosome], exec: Execution) -> Vec<Result<f64, EvalError>> {
        exec.map(batch, |c| self.evaluate(c))
    }

    /// Whether equal chromosomes always receive equal fitness.
    fn is_deterministic(&self) -> bool {
        true
    }
}

impl<E: FitnessEvaluator + ?Sized> FitnessEvaluator for &E {
    fn evaluate(&self, c: &Chromosome) -> Result<f64, EvalError> {
        (**self).evaluate(c)
    }

    fn evaluate_many(&self, batch: &[Chromosome], exec: Execution) -> Vec<Result<f64, EvalError>> {
        (**self).evaluate_many(batch, exec)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

impl<E: FitnessEvaluator + ?Sized> FitnessEvaluator for Box<E> {
    fn evaluate(&self, c: &Chromosome) -> Result<f64, EvalError> {
        (**self).evaluate(c)
    }

    fn evaluate_many(&self, batch: &[Chromosome], exec: Execution) -> Vec<Result<f64, EvalError>> {
        (**self).evaluate_many(batch, exec)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

/// Rejects non-finite or out-of-range values instead of clamping them.
pub fn check_fitness(value: f64) -> Result<f64, EvalError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(EvalError::OutOfRange(value))
    }
}

/// Memoizes an inner evaluator by chromosome identity.
///
/// Failed evaluations are not cached. Two threads that miss on the same
/// chromosome at the same time may both call the inner evaluator; the first
/// stored value wins and both callers return it. [`CachedEvaluator::evaluate_batch`]
/// deduplicates before dispatching, so it never double-evaluates.
pub struct CachedEvaluator<E> {
    inner: E,
    cache: Mutex<HashMap<Chromosome, f64>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<E: FitnessEvaluator> CachedEvaluator<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, cache: Mutex::new(HashMap::new()), hits: AtomicU64::new(0), misses: AtomicU64::new(0) }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    /// Number of inner evaluator invocations.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn distinct_cached(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    pub fn cached(&self, c: &Chromosome) -> Option<f64> {
        self.cache.lock().unwrap().get(c).copied()
    }

    fn call_inner(&self, c: &Chromosome) -> Result<f64, EvalError> {
        self.misses.fetch_add(1, Ordering::SeqCst);
        check_fitness(self.inner.evaluate(c)?)
    }

    fn store(&self, c: &Chromosome, value: f64) -> f64 {
        *self.cache.lock().unwrap().entry(c.clone()).or_insert(value)
    }

    /// Evaluates a batch, calling the inner evaluator once per distinct
    /// uncached chromosome. Results come back in input order.
    pub fn evaluate_batch(&self, batch: &[Chromosome], exec: Execution) -> Vec<Result<f64, EvalError>> {
        let mut pending: Vec<Chromosome> = Vec::new();
        {
            let cache = self.cache.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            for c in batch {
                if !cache.contains_key(c) && seen.insert(c) {
                    pending.push(c.clone());
                }
            }
        }
        self.misses.fetch_add(pending.len() as u64, Ordering::SeqCst);
        let fresh = self.inner.evaluate_many(&pending, exec);
        let mut failures: HashMap<&Chromosome, EvalError> = HashMap::new();
        for (c, r) in pending.iter().zip(fresh) {
            match r.and_then(check_fitness) {
                Ok(v) => {
                    self.store(c, v);
                }
                Err(e) => {
                    failures.insert(c, e);
                }
            }
        }
        let fresh_set: std::collections::HashSet<&Chromosome> = pending.iter().collect();
        let mut first_use = std::collections::HashSet::new();
        batch
            .iter()
            .map(|c| {
                if !(fresh_set.contains(c) && first_use.insert(c)) {
                    self.hits.fetch_add(1, Ordering::SeqCst);
                }
                if let Some(e) = failures.get(c) {
                    return Err(e.clone());
                }
                Ok(self.cached(c).expect("value stored above"))
            })
            .collect()
    }
}

impl<E: FitnessEvaluator> FitnessEvaluator for CachedEvaluator<E> {
    fn evaluate(&self, c: &Chromosome) -> Result<f64, EvalError> {
        if let Some(v) = self.cached(c) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(v);
        }
        let v = self.call_inner(c)?;
        Ok(self.store(c, v))
    }

    fn evaluate_many(&self, batch: &[Chromosome], exec: Execution) -> Vec<Result<f64, EvalError>> {
        self.evaluate_batch(batch, exec)
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}

/// Replaces per-chromosome evaluation failures with fitness 0.0. Session
/// failures still propagate.
pub struct ZeroOnFailure<E>(pub E);

impl<E: FitnessEvaluator> FitnessEvaluator for ZeroOnFailure<E> {
    fn evaluate(&self, c: &Chromosome) -> Result<f64, EvalError> {
        match self.0.evaluate(c) {
            Err(EvalError::Failed(_)) => Ok(0.0),
            other => other,
        }
    }

    fn evaluate_many(&self, batch: &[Chromosome], exec: Execution) -> Vec<Result<f64, EvalError>> {
        self.0
            .evaluate_many(batch, exec)
            .into_iter()
            .map(|r| match r {
                Err(EvalError::Failed(_)) => Ok(0.0),
                other => other,
            })
            .collect()
    }

    fn is_deterministic(&self) -> bool {
        self.0.is_deterministic()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LandscapeError {
    #[error("landscape expects {expected} genes, got {got}")]
    GeneCount { expected: usize, got: usize },
    #[error("gene {gene}: expected {expected} weights, got {got}")]
    WeightCount { gene: String, expected: usize, got: usize },
    #[error("gene {gene}: weights must be finite and non-negative")]
    BadWeight { gene: String },
    #[error("{which} chromosome is not inside the search space")]
    OutsideSpace { which: &'static str },
    #[error("trap value must lie in [0, 1), got {0}")]
    TrapValue(f64),
    #[error("slope must lie in (0, 1], got {0}")]
    Slope(f64),
    #[error("target and trap differ in {distance} genes; need at least target_radius + 2 = {needed}")]
    TrapTooClose { distance: usize, needed: usize },
}

/// Per-gene additive scores normalized by the best attainable total.
///
/// Single-gene moves can always reach the optimum, which makes this landscape
/// the reference for hill-climbing correctness.
#[derive(Debug, Clone)]
pub struct SeparableLandscape {
    weights: Vec<Vec<f64>>,
    best_total: f64,
}

impl SeparableLandscape {
    /// Ties for the best value of a gene are broken in favour of the lowest
    /// index by shrinking the later duplicates, so the optimum is unique.
    pub fn new(space: &SearchSpace, mut weights: Vec<Vec<f64>>) -> Result<Self, LandscapeError> {
        if weights.len() != space.gene_count() {
            return Err(LandscapeError::GeneCount { expected: space.gene_count(), got: weights.len() });
        }
        for (gene, w) in space.genes().iter().zip(weights.iter_mut()) {
            if w.len() != gene.size() {
                return Err(LandscapeError::WeightCount {
                    gene: gene.name.clone(),
                    expected: gene.size(),
                    got: w.len(),
                });
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(LandscapeError::BadWeight { gene: gene.name.clone() });
            }
            let max = w.iter().copied().fold(0.0, f64::max);
            if max == 0.0 {
                w[0] = 1e-9;
            } else {
                let first = w.iter().position(|&x| x == max).unwrap();
                for x in w.iter_mut().skip(first + 1) {
                    if *x == max {
                        *x = max * (1.0 - 1e-9);
                    }
                }
            }
        }
        let best_total = weights.iter().map(|w| w.iter().copied().fold(0.0, f64::max)).sum();
        Ok(Self { weights, best_total })
    }

    /// Weights drawn uniformly from `[0, 1)` in gene-major order.
    pub fn random<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Self {
        let weights = space.genes().iter().map(|g| (0..g.size()).map(|_| rng.gen::<f64>()).collect()).collect();
        Self::new(space, weights).expect("generated weights are well-formed")
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// The unique maximizer: the best-weighted value of every gene.
    pub fn optimum(&self) -> Chromosome {
        Chromosome::new(
            self.weights
                .iter()
                .map(|w| {
                    let max = w.iter().copied().fold(0.0, f64::max);
                    w.iter().position(|&x| x == max).unwrap() as u32
                })
                .collect(),
        )
    }
}

impl FitnessEvaluator for SeparableLandscape {
    fn evaluate(&self, c: &Chromosome) -> Result<f64, EvalError> {
        let total: f64 = self.weights.iter().zip(c.alleles()).map(|(w, &a)| w[a as usize]).sum();
        Ok(total / self.best_total)
    }
}

/// Deceptive two-basin landscape.
///
/// * the target scores 1.0;
/// * chromosomes within `target_radius` of the target score
///   `1 - (1 - trap_value) * d_target / (target_radius + 1)`, always above `trap_value`;
/// * everything else scores `trap_value * (1 - slope * d_trap / genes)`, which
///   rises toward the trap chromosome.
///
/// With `target_radius = 0` this is the classic needle-plus-deceptive-slope trap.
#[derive(Debug, Clone)]
pub struct TrapLandscape {
    target: Chromosome,
    trap: Chromosome,
    trap_value: f64,
    slope: f64,
    target_radius: usize,
}

#[derive(Debug, Clone)]
pub struct TrapParams {
    /// Defaults to the last domain index of every gene.
    pub target: Option<Chromosome>,
    /// Defaults to index 0 of every gene.
    pub trap: Option<Chromosome>,
    pub trap_value: f64,
    pub slope: f64,
    pub target_radius: usize,
}

impl Default for TrapParams {
    fn default() -> Self {
        Self { target: None, trap: None, trap_value: 0.8, slope: 0.5, target_radius: 0 }
    }
}

impl TrapLandscape {
    pub fn new(space: &SearchSpace, params: TrapParams) -> Result<Self, LandscapeError> {
        let target = params
            .target
            .unwrap_or_else(|| Chromosome::new(space.genes().iter().map(|g| g.size() as u32 - 1).collect()));
        let trap = params.trap.unwrap_or_else(|| Chromosome::new(vec![0; space.gene_count()]));
        if !space.contains(&target) {
            return Err(LandscapeError::OutsideSpace { which: "target" });
        }
        if !space.contains(&trap) {
            return Err(LandscapeError::OutsideSpace { which: "trap" });
        }
        if !(0.0..1.0).contains(&params.trap_value) {
            return Err(LandscapeError::TrapValue(params.trap_value));
        }
        if !(params.slope > 0.0 && params.slope <= 1.0) {
            return Err(LandscapeError::Slope(params.slope));
        }
        let distance = target.hamming(&trap);
        let needed = params.target_radius + 2;
        if distance < needed {
            return Err(LandscapeError::TrapTooClose { distance, needed });
        }
        Ok(Self {
            target,
            trap,
            trap_value: params.trap_value,
            slope: params.slope,
            target_radius: params.target_radius,
        })
    }

    pub fn target(&self) -> &Chromosome {
        &self.target
    }

    pub fn trap(&self) -> &Chromosome {
        &self.trap
    }

    pub fn trap_value(&self) -> f64 {
        self.trap_value
    }

    fn score(&self, c: &Chromosome) -> f64 {
        let d_target = c.hamming(&self.target);
        if d_target == 0 {
            return 1.0;
        }
        if d_target <= self.target_radius {
            return 1.0 - (1.0 - self.trap_value) * d_target as f64 / (self.target_radius + 1) as f64;
        }
        let genes = c.len() as f64;
        self.trap_value * (1.0 - self.slope * c.hamming(&self.trap) as f64 / genes)
    }
}

impl FitnessEvaluator for TrapLandscape {
    fn evaluate(&self, c: &Chromosome) -> Result<f64, EvalError> {
        Ok(self.score(c))
    }
}

/// SplitMix64 finalizer (Steele, Lea & Flood 2014).
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Top 53 bits of `h` as a value in `[0, 1)`.
pub fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// `h = splitmix64(seed)`, then `h = splitmix64(h ^ allele)` for each allele
/// in gene order; fitness is `unit_from_hash(h)`.
pub fn allele_hash(seed: u64, alleles: &[u32]) -> u64 {
    alleles.iter().fold(splitmix64(seed), |h, &a| splitmix64(h ^ u64::from(a)))
}

/// Unstructured landscape: an independent pseudo-random fitness per chromosome.
#[derive(Debug, Clone, Copy)]
pub struct HashedLandscape {
    seed: u64,
}

impl HashedLandscape {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl FitnessEvaluator for HashedLandscape {
    fn evaluate(&self, c: &Chromosome) -> Result<f64, EvalError> {
        Ok(unit_from_hash(allele_hash(self.seed, c.alleles())))
    }
}

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Token-level counterpart of [`allele_hash`], used by processes that only
/// see gene tokens: `h = splitmix64(h ^ fnv1a64(token))` per token.
pub fn token_fitness<'a, I>(seed: u64, tokens: I) -> f64
where
    I: IntoIterator<Item = &'a str>,
{
    let h = tokens.into_iter().fold(splitmix64(seed), |h, t| splitmix64(h ^ fnv1a64(t.as_bytes())));
    unit_from_hash(h)
}

/// The ten-gene CNN hyperparameter space:
///
/// | gene | values |
/// |---|---|
/// | f1 | 32, 64, 128 |
/// | f2 | 64, 128, 256 |
/// | k | 3, 5 |
/// | a1, a2 | relu, elu, tanh |
/// | d1, d2 | 0.2, 0.3, 0.4, 0.5 |
/// | f3 | 256, 512, 1024 |
/// | optimizer | sgd, adam, rmsprop |
/// | epochs | 10, 20, 30 |
pub fn default_cnn_space() -> SearchSpace {
    let dropout = ["0.2", "0.3", "0.4", "0.5"];
    let activation = ["relu", "elu", "tanh"];
    SearchSpace::new(vec![
        GeneSpec::ordinal("f1", ["32", "64", "128"]),
        GeneSpec::ordinal("f2", ["64", "128", "256"]),
        GeneSpec::ordinal("k", ["3", "5"]),
        GeneSpec::categorical("a1", activation),
        GeneSpec::categorical("a2", activation),
        GeneSpec::ordinal("d1", dropout),
        GeneSpec::ordinal("d2", dropout),
        GeneSpec::ordinal("f3", ["256", "512", "1024"]),
        GeneSpec::categorical("optimizer", ["sgd", "adam", "rmsprop"]),
        GeneSpec::ordinal("epochs", ["10", "20", "30"]),
    ])
    .expect("default space is valid")
}

pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BruteForceError {
    #[error("search space has {} points, above the brute-force limit of {BRUTE_FORCE_LIMIT}", .cardinality.map_or_else(|| "more than 2^64".to_string(), |n| n.to_string()))]
    TooLarge { cardinality: Option<u64> },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Exhaustive maximum; ties go to the lexicographically smallest chromosome.
pub fn brute_force_optimum<E: FitnessEvaluator + ?Sized>(
    space: &SearchSpace,
    evaluator: &E,
    exec: Execution,
) -> Result<EvaluatedChromosome, BruteForceError> {
    let cardinality = space.cardinality();
    let total = match cardinality {
        Some(n) if n <= BRUTE_FORCE_LIMIT => n,
        _ => return Err(BruteForceError::TooLarge { cardinality }),
    };
    let best = exec.try_reduce_range(
        0..total,
        |rank| {
            let c = space.chromosome_at(rank);
            let f = check_fitness(evaluator.evaluate(&c)?)?;
            Ok::<_, EvalError>((f, rank))
        },
        |a, b| {
            // Larger fitness wins; on ties the smaller rank (lexicographic order).
            match a.0.total_cmp(&b.0) {
                std::cmp::Ordering::Greater => a,
                std::cmp::Ordering::Less => b,
                std::cmp::Ordering::Equal => {
                    if a.1 <= b.1 {
                        a
                    } else {
                        b
                    }
                }
            }
        },
    )?;
    let (fitness, rank) = best.expect("a valid space has at least one point");
    Ok(EvaluatedChromosome::new(space.chromosome_at(rank), fitness))
}
