//! Hill climbing over the single-gene neighborhood.
//!
//! Used as the hybrid's mutation step and, wrapped in random restarts, as a
//! standalone baseline. Only strict improvements are accepted, so a climb
//! always terminates.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::landscapes::{EvalError, FitnessEvaluator};
use crate::par::Execution;
use crate::space::{neighbors, random_chromosome, EvaluatedChromosome, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HcStrategy {
    /// Scan neighbors in shuffled order and take the first strict improvement.
    #[default]
    FirstImprovement,
    /// Evaluate every neighbor and move to the best strict improvement.
    SteepestAscent,
}

/// Cap on evaluator calls made by one climb (cache hits included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct HcBudget(u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("hill-climbing budget must be at least 1")]
pub struct ZeroBudget;

impl HcBudget {
    pub fn new(max_evaluations: u64) -> Result<Self, ZeroBudget> {
        if max_evaluations == 0 {
            Err(ZeroBudget)
        } else {
            Ok(Self(max_evaluations))
        }
    }

    /// Two full neighborhood scans.
    pub fn default_for(space: &SearchSpace) -> Self {
        Self((2 * space.neighborhood_size()).max(1) as u64)
    }

    pub fn max_evaluations(self) -> u64 {
        self.0
    }
}

impl TryFrom<u64> for HcBudget {
    type Error = ZeroBudget;

    fn try_from(v: u64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<HcBudget> for u64 {
    fn from(b: HcBudget) -> u64 {
        b.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HcOutcome {
    pub best: EvaluatedChromosome,
    pub evaluations: u64,
    /// The climb stopped because the budget ran out, not at a confirmed local optimum.
    pub budget_exhausted: bool,
    /// Fitness of the start point followed by every accepted move.
    pub trajectory: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillClimb {
    pub strategy: HcStrategy,
    pub budget: HcBudget,
    /// Parallelism for the neighbor scan of steepest ascent.
    pub exec: Execution,
}

impl HillClimb {
    pub fn new(strategy: HcStrategy, budget: HcBudget) -> Self {
        Self { strategy, budget, exec: Execution::default() }
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_budget(mut self, budget: HcBudget) -> Self {
        self.budget = budget;
        self
    }

    pub fn run<E, R>(
        &self,
        space: &SearchSpace,
        start: &EvaluatedChromosome,
        evaluator: &E,
        rng: &mut R,
    ) -> Result<HcOutcome, EvalError>
    where
        E: FitnessEvaluator + ?Sized,
        R: Rng + ?Sized,
    {
        let mut state = Climb {
            current: start.clone(),
            used: 0,
            limit: self.budget.max_evaluations(),
            trajectory: vec![start.fitness],
        };
        let exhausted = match self.strategy {
            HcStrategy::SteepestAscent => self.steepest(space, evaluator, &mut state)?,
            HcStrategy::FirstImprovement => first_improvement(space, evaluator, rng, &mut state)?,
        };
        Ok(HcOutcome {
            best: state.current,
            evaluations: state.used,
            budget_exhausted: exhausted,
            trajectory: state.trajectory,
        })
    }

    fn steepest<E: FitnessEvaluator + ?Sized>(
        &self,
        space: &SearchSpace,
        evaluator: &E,
        state: &mut Climb,
    ) -> Result<bool, EvalError> {
        loop {
            let remaining = state.limit - state.used;
            if remaining == 0 {
                return Ok(true);
            }
            let mut candidates = neighbors(space, &state.current.chromosome);
            let partial = (candidates.len() as u64) > remaining;
            candidates.truncate(remaining as usize);
            let scores = self.exec.map(&candidates, |c| evaluator.evaluate(c));
            state.used += candidates.len() as u64;

            let mut best: Option<(usize, f64)> = None;
            for (i, score) in scores.into_iter().enumerate() {
                let f = score?;
                let bar = best.map_or(state.current.fitness, |(_, b)| b);
                if f > bar {
                    best = Some((i, f));
                }
            }
            match best {
                Some((i, f)) => {
                    state.current = EvaluatedChromosome::new(candidates.swap_remove(i), f);
                    state.trajectory.push(f);
                }
                None => return Ok(partial),
            }
        }
    }
}

struct Climb {
    current: EvaluatedChromosome,
    used: u64,
    limit: u64,
    trajectory: Vec<f64>,
}

fn first_improvement<E, R>(
    space: &SearchSpace,
    evaluator: &E,
    rng: &mut R,
    state: &mut Climb,
) -> Result<bool, EvalError>
where
    E: FitnessEvaluator + ?Sized,
    R: Rng + ?Sized,
{
    'scan: loop {
        let mut candidates = neighbors(space, &state.current.chromosome);
        candidates.shuffle(rng);
        for c in candidates {
            if state.used == state.limit {
                return Ok(true);
            }
            let f = evaluator.evaluate(&c)?;
            state.used += 1;
            if f > state.current.fitness {
                state.current = EvaluatedChromosome::new(c, f);
                state.trajectory.push(f);
                continue 'scan;
            }
        }
        return Ok(false);
    }
}

pub fn hill_climb<E, R>(
    space: &SearchSpace,
    start: &EvaluatedChromosome,
    evaluator: &E,
    strategy: HcStrategy,
    budget: HcBudget,
    rng: &mut R,
) -> Result<HcOutcome, EvalError>
where
    E: FitnessEvaluator + ?Sized,
    R: Rng + ?Sized,
{
    HillClimb::new(strategy, budget).run(space, start, evaluator, rng)
}

/// Climbs from each child in list order. Returns the improved children and
/// the total number of evaluator calls.
pub fn mutate_children<E, R>(
    space: &SearchSpace,
    children: &[EvaluatedChromosome],
    evaluator: &E,
    hc: &HillClimb,
    rng: &mut R,
) -> Result<(Vec<EvaluatedChromosome>, u64), EvalError>
where
    E: FitnessEvaluator + ?Sized,
    R: Rng + ?Sized,
{
    let mut out = Vec::with_capacity(children.len());
    let mut used = 0;
    for child in children {
        let outcome = hc.run(space, child, evaluator, rng)?;
        used += outcome.evaluations;
        out.push(outcome.best);
    }
    Ok((out, used))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub best: EvaluatedChromosome,
    /// One entry per restart, in order.
    pub climbs: Vec<HcOutcome>,
    /// Evaluator calls including the start evaluations.
    pub evaluations: u64,
}

/// One climb from a fresh random start: draws the start, evaluates it, climbs.
pub fn climb_from_random_start<E, R>(
    space: &SearchSpace,
    evaluator: &E,
    hc: &HillClimb,
    rng: &mut R,
) -> Result<HcOutcome, EvalError>
where
    E: FitnessEvaluator + ?Sized,
    R: Rng + ?Sized,
{
    let start = random_chromosome(space, rng);
    let fitness = evaluator.evaluate(&start)?;
    let mut outcome = hc.run(space, &EvaluatedChromosome::new(start, fitness), evaluator, rng)?;
    outcome.evaluations += 1;
    Ok(outcome)
}

/// Best of `restarts` independent climbs; earlier restarts win ties.
pub fn random_restart_hc<E, R>(
    space: &SearchSpace,
    restarts: usize,
    evaluator: &E,
    hc: &HillClimb,
    rng: &mut R,
) -> Result<RestartOutcome, EvalError>
where
    E: FitnessEvaluator + ?Sized,
    R: Rng + ?Sized,
{
    assert!(restarts >= 1, "at least one restart is required");
    let mut climbs = Vec::with_capacity(restarts);
    for _ in 0..restarts {
        climbs.push(climb_from_random_start(space, evaluator, hc, rng)?);
    }
    let best = climbs
        .iter()
        .map(|c| &c.best)
        .fold(None::<&EvaluatedChromosome>, |acc, b| match acc {
            Some(a) if a.fitness >= b.fitness => Some(a),
            _ => Some(b),
        })
        .cloned()
        .expect("restarts >= 1");
    let evaluations = climbs.iter().map(|c| c.evaluations).sum();
    Ok(RestartOutcome { best, climbs, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscapes::{brute_force_optimum, HashedLandscape, SeparableLandscape, TrapLandscape, TrapParams};
    use crate::seeded_rng;
    use crate::space::{Chromosome, GeneSpec};
    use proptest::prelude::*;

    fn grid(sizes: &[usize]) -> SearchSpace {
        SearchSpace::new(
            sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| GeneSpec::ordinal(format!("g{i}"), (0..n).map(|v| v.to_string())))
                .collect(),
        )
        .unwrap()
    }

    fn start(e: &dyn FitnessEvaluator, c: Chromosome) -> EvaluatedChromosome {
        let f = e.evaluate(&c).unwrap();
        EvaluatedChromosome::new(c, f)
    }

    const STRATEGIES: [HcStrategy; 2] = [HcStrategy::FirstImprovement, HcStrategy::SteepestAscent];

    #[test]
    fn optimum_is_a_fixed_point() {
        let space = grid(&[2, 2]);
        let land = HashedLandscape::new(31);
        let best = brute_force_optimum(&space, &land, Execution::Sequential).unwrap();
        for strategy in STRATEGIES {
            let out =
                hill_climb(&space, &best, &land, strategy, HcBudget::new(100).unwrap(), &mut seeded_rng(0)).unwrap();
            assert_eq!(out.best, best);
            assert_eq!(out.evaluations, 2);
            assert!(!out.budget_exhausted);
        }
    }

    #[test]
    fn separable_reaches_optimum_from_every_start() {
        let space = grid(&[3, 4, 2, 5]);
        let land = SeparableLandscape::random(&space, &mut seeded_rng(12));
        let oracle = brute_force_optimum(&space, &land, Execution::Sequential).unwrap();
        let ample = HcBudget::new(10_000).unwrap();
        for rank in 0..space.cardinality().unwrap() {
            for strategy in STRATEGIES {
                let s = start(&land, space.chromosome_at(rank));
                let out = hill_climb(&space, &s, &land, strategy, ample, &mut seeded_rng(rank)).unwrap();
                assert_eq!(out.best.fitness, oracle.fitness);
            }
        }
    }

    #[test]
    fn trap_basin_start_gets_stuck() {
        let space = grid(&[2; 6]);
        let land = TrapLandscape::new(&space, TrapParams::default()).unwrap();
        let oracle = brute_force_optimum(&space, &land, Execution::Sequential).unwrap();
        // Two genes away from the trap, far from the target.
        let s = start(&land, Chromosome::new(vec![1, 1, 0, 0, 0, 0]));
        for strategy in STRATEGIES {
            let out =
                hill_climb(&space, &s, &land, strategy, HcBudget::new(1000).unwrap(), &mut seeded_rng(1)).unwrap();
            assert_eq!(out.best.chromosome, *land.trap());
            assert_eq!(out.best.fitness, land.trap_value());
            assert!(out.best.fitness < oracle.fitness);
        }
    }

    #[test]
    fn budget_of_one() {
        let space = crate::landscapes::default_cnn_space();
        let land = HashedLandscape::new(4);
        let children: Vec<_> = (0..2).map(|i| start(&land, random_chromosome(&space, &mut seeded_rng(i)))).collect();
        for strategy in STRATEGIES {
            let hc = HillClimb::new(strategy, HcBudget::new(1).unwrap());
            let (out, used) = mutate_children(&space, &children, &land, &hc, &mut seeded_rng(2)).unwrap();
            assert!(used <= 2);
            for (o, c) in out.iter().zip(&children) {
                assert!(o.fitness >= c.fitness);
                assert!(o.chromosome.hamming(&c.chromosome) <= 1);
            }
        }
    }

    #[test]
    fn locally_optimal_children_unchanged() {
        let space = grid(&[3, 3]);
        let land = SeparableLandscape::random(&space, &mut seeded_rng(3));
        let best = brute_force_optimum(&space, &land, Execution::Sequential).unwrap();
        let children = vec![best.clone(), best.clone()];
        let hc = HillClimb::new(HcStrategy::FirstImprovement, HcBudget::new(50).unwrap());
        let (out, _) = mutate_children(&space, &children, &land, &hc, &mut seeded_rng(0)).unwrap();
        assert_eq!(out, children);
    }

    #[test]
    fn separable_children_reach_optimum() {
        let space = crate::landscapes::default_cnn_space();
        let land = SeparableLandscape::random(&space, &mut seeded_rng(77));
        let oracle = brute_force_optimum(&space, &land, Execution::Parallel).unwrap();
        let children: Vec<_> = (10..12).map(|i| start(&land, random_chromosome(&space, &mut seeded_rng(i)))).collect();
        let hc = HillClimb::new(HcStrategy::FirstImprovement, HcBudget::new(10_000).unwrap());
        let (out, _) = mutate_children(&space, &children, &land, &hc, &mut seeded_rng(0)).unwrap();
        assert!(out.iter().all(|o| o.fitness == oracle.fitness));
    }

    #[test]
    fn single_restart_equals_single_climb() {
        let space = grid(&[3, 3, 3]);
        let land = HashedLandscape::new(8);
        let hc = HillClimb::new(HcStrategy::FirstImprovement, HcBudget::new(100).unwrap());
        let restarted = random_restart_hc(&space, 1, &land, &hc, &mut seeded_rng(5)).unwrap();
        let mut rng = seeded_rng(5);
        let s = start(&land, random_chromosome(&space, &mut rng));
        let single = hc.run(&space, &s, &land, &mut rng).unwrap();
        assert_eq!(restarted.best, single.best);
        assert_eq!(restarted.evaluations, single.evaluations + 1);
    }

    #[test]
    fn restarts_on_separable_find_optimum() {
        let space = grid(&[4, 4, 4]);
        let land = SeparableLandscape::random(&space, &mut seeded_rng(6));
        let oracle = brute_force_optimum(&space, &land, Execution::Sequential).unwrap();
        let hc = HillClimb::new(HcStrategy::SteepestAscent, HcBudget::new(1000).unwrap());
        for restarts in [1, 3, 10] {
            let out = random_restart_hc(&space, restarts, &land, &hc, &mut seeded_rng(restarts as u64)).unwrap();
            assert_eq!(out.best.fitness, oracle.fitness);
        }
    }

    #[test]
    fn parallel_scan_matches_sequential() {
        let space = crate::landscapes::default_cnn_space();
        let land = HashedLandscape::new(15);
        let s = start(&land, random_chromosome(&space, &mut seeded_rng(3)));
        let hc = HillClimb::new(HcStrategy::SteepestAscent, HcBudget::new(500).unwrap());
        let seq = hc.with_exec(Execution::Sequential).run(&space, &s, &land, &mut seeded_rng(0)).unwrap();
        let par = hc.with_exec(Execution::Parallel).run(&space, &s, &land, &mut seeded_rng(0)).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn zero_budget_rejected() {
        assert_eq!(HcBudget::new(0), Err(ZeroBudget));
        assert!(serde_json::from_str::<HcBudget>("0").is_err());
    }

    proptest! {
        #[test]
        fn climbs_are_monotone_and_bounded(seed in any::<u64>(), budget in 1u64..80, steepest in any::<bool>()) {
            let space = grid(&[3, 2, 4, 3]);
            let land = HashedLandscape::new(seed);
            let mut rng = seeded_rng(seed);
            let s = start(&land, random_chromosome(&space, &mut rng));
            let strategy = if steepest { HcStrategy::SteepestAscent } else { HcStrategy::FirstImprovement };
            let out = hill_climb(&space, &s, &land, strategy, HcBudget::new(budget).unwrap(), &mut rng).unwrap();
            prop_assert!(out.evaluations <= budget);
            prop_assert!(out.best.fitness >= s.fitness);
            prop_assert!(out.trajectory.windows(2).all(|w| w[1] > w[0]));
            prop_assert_eq!(*out.trajectory.last().unwrap(), out.best.fitness);
        }

        #[test]
        fn climbing_twice_changes_nothing(seed in any::<u64>()) {
            let space = grid(&[3, 3, 2, 4]);
            let land = HashedLandscape::new(seed ^ 0x55);
            let ample = HcBudget::new(100_000).unwrap();
            let mut rng = seeded_rng(seed);
            let s = start(&land, random_chromosome(&space, &mut rng));
            for strategy in STRATEGIES {
                let once = hill_climb(&space, &s, &land, strategy, ample, &mut rng).unwrap();
                let twice = hill_climb(&space, &once.best, &land, strategy, ample, &mut rng).unwrap();
                prop_assert_eq!(twice.best.fitness, once.best.fitness);
                if strategy == HcStrategy::SteepestAscent {
                    prop_assert_eq!(&twice.best.chromosome, &once.best.chromosome);
                }
            }
        }
    }
}
