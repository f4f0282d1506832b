//! Genetic operators: population generation, top-2 selection, crossover and
//! worst-2 replacement.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{random_chromosome, Chromosome, EvaluatedChromosome, SearchSpace};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvolveError {
    #[error("population size must be at least {min}, got {got}")]
    PopulationTooSmall { min: usize, got: usize },
    #[error("parents have different lengths ({0} vs {1})")]
    MismatchedParents(usize, usize),
    #[error("one-point crossover needs at least 2 genes, got {0}")]
    TooFewGenesForOnePoint(usize),
    #[error("expected exactly 2 children, got {0}")]
    ChildCount(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrossoverMode {
    OnePoint,
    #[default]
    Uniform,
}

/// Fixed-capacity multiset of evaluated chromosomes, kept in rank order
/// (fitness descending, then alleles ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    members: Vec<EvaluatedChromosome>,
}

impl Population {
    pub fn new(mut members: Vec<EvaluatedChromosome>) -> Result<Self, EvolveError> {
        if members.len() < 2 {
            return Err(EvolveError::PopulationTooSmall { min: 2, got: members.len() });
        }
        members.sort_by(EvaluatedChromosome::rank_cmp);
        Ok(Self { members })
    }

    pub fn members(&self) -> &[EvaluatedChromosome] {
        &self.members
    }

    pub fn capacity(&self) -> usize {
        self.members.len()
    }

    pub fn best(&self) -> &EvaluatedChromosome {
        &self.members[0]
    }

    /// Replaces the member at `index` and restores rank order.
    pub(crate) fn replace_at(&mut self, index: usize, member: EvaluatedChromosome) {
        self.members[index] = member;
        self.members.sort_by(EvaluatedChromosome::rank_cmp);
    }
}

/// `n` independent random chromosomes, drawn one after another from `rng`.
/// Duplicates are allowed.
pub fn generate_population<R: Rng + ?Sized>(
    space: &SearchSpace,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Chromosome>, EvolveError> {
    if n < 2 {
        return Err(EvolveError::PopulationTooSmall { min: 2, got: n });
    }
    Ok((0..n).map(|_| random_chromosome(space, rng)).collect())
}

/// The two best members in rank order.
pub fn select_parents(pop: &Population) -> (&EvaluatedChromosome, &EvaluatedChromosome) {
    (&pop.members[0], &pop.members[1])
}

pub fn crossover<R: Rng + ?Sized>(
    p1: &Chromosome,
    p2: &Chromosome,
    mode: CrossoverMode,
    rng: &mut R,
) -> Result<(Chromosome, Chromosome), EvolveError> {
    if p1.len() != p2.len() {
        return Err(EvolveError::MismatchedParents(p1.len(), p2.len()));
    }
    match mode {
        CrossoverMode::OnePoint => {
            let genes = p1.len();
            if genes < 2 {
                return Err(EvolveError::TooFewGenesForOnePoint(genes));
            }
            let cut = rng.gen_range(1..genes);
            Ok(one_point_at(p1, p2, cut))
        }
        CrossoverMode::Uniform => {
            let mut c1 = p1.clone();
            let mut c2 = p2.clone();
            for (a, b) in c1.alleles_mut().iter_mut().zip(c2.alleles_mut()) {
                if rng.gen::<bool>() {
                    std::mem::swap(a, b);
                }
            }
            Ok((c1, c2))
        }
    }
}

/// `child1 = p1[..cut] ++ p2[cut..]`, `child2 = p2[..cut] ++ p1[cut..]`.
pub fn one_point_at(p1: &Chromosome, p2: &Chromosome, cut: usize) -> (Chromosome, Chromosome) {
    let (a, b) = (p1.alleles(), p2.alleles());
    let c1 = a[..cut].iter().chain(&b[cut..]).copied().collect();
    let c2 = b[..cut].iter().chain(&a[cut..]).copied().collect();
    (Chromosome::new(c1), Chromosome::new(c2))
}

/// Drops the two lowest-ranked members and inserts the two children.
pub fn replace_worst(pop: &Population, children: Vec<EvaluatedChromosome>) -> Result<Population, EvolveError> {
    if pop.capacity() < 3 {
        return Err(EvolveError::PopulationTooSmall { min: 3, got: pop.capacity() });
    }
    if children.len() != 2 {
        return Err(EvolveError::ChildCount(children.len()));
    }
    let keep = pop.capacity() - 2;
    let mut members: Vec<_> = pop.members[..keep].to_vec();
    members.extend(children);
    Population::new(members)
}

/// Pure-GA mutation: each gene is independently resampled uniformly from its
/// domain with probability `rate` (the new value may equal the old one).
///
/// One `f64` draw is consumed per gene, plus one index draw per resampled gene.
pub fn random_mutation<R: Rng + ?Sized>(space: &SearchSpace, c: &Chromosome, rate: f64, rng: &mut R) -> Chromosome {
    let mut out = c.clone();
    for (allele, gene) in out.alleles_mut().iter_mut().zip(space.genes()) {
        if rng.gen::<f64>() < rate {
            *allele = rng.gen_range(0..gene.size()) as u32;
        }
    }
    out
}
