//! Discrete search spaces and chromosomes.
//!
//! A chromosome stores one domain *index* per gene. Tokens (the literal
//! strings such as `"relu"` or `"0.3"`) are only looked up when a chromosome
//! crosses a serialization boundary.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

/// Whether the ordering of a gene's domain carries meaning.
///
/// Only metadata: the genetic operators and hill climbing treat both kinds
/// identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GeneKind {
    #[default]
    Categorical,
    Ordinal,
}

/// One hyperparameter dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneSpec {
    pub name: String,
    #[serde(default)]
    pub kind: GeneKind,
    pub domain: Vec<String>,
}

impl GeneSpec {
    pub fn new<N, I, T>(name: N, kind: GeneKind, domain: I) -> Self
    where
        N: Into<String>,
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        Self { name: name.into(), kind, domain: domain.into_iter().map(Into::into).collect() }
    }

    pub fn categorical<N, I, T>(name: N, domain: I) -> Self
    where
        N: Into<String>,
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        Self::new(name, GeneKind::Categorical, domain)
    }

    pub fn ordinal<N, I, T>(name: N, domain: I) -> Self
    where
        N: Into<String>,
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        Self::new(name, GeneKind::Ordinal, domain)
    }

    pub fn size(&self) -> usize {
        self.domain.len()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.domain.iter().position(|t| t == token)
    }
}

/// A single broken invariant found by [`validate_space`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpaceViolation {
    #[error("search space has no genes")]
    NoGenes,
    #[error("duplicate gene name: {0}")]
    DuplicateGeneName(String),
    #[error("empty domain: {0}")]
    EmptyDomain(String),
    #[error("duplicate token {token:?} in domain of {gene}")]
    DuplicateToken { gene: String, token: String },
}

/// Every violation found in a gene list, in gene order.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct SpaceValidationError {
    pub violations: Vec<SpaceViolation>,
}

impl fmt::Display for SpaceValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks every gene/space invariant and reports all violations at once.
pub fn validate_space(genes: &[GeneSpec]) -> Result<(), SpaceValidationError> {
    let mut violations = Vec::new();
    if genes.is_empty() {
        violations.push(SpaceViolation::NoGenes);
    }
    let mut names = HashSet::new();
    let mut reported_names = HashSet::new();
    for gene in genes {
        if !names.insert(gene.name.as_str()) && reported_names.insert(gene.name.as_str()) {
            violations.push(SpaceViolation::DuplicateGeneName(gene.name.clone()));
        }
        if gene.domain.is_empty() {
            violations.push(SpaceViolation::EmptyDomain(gene.name.clone()));
        }
        let mut tokens = HashSet::new();
        let mut reported_tokens = HashSet::new();
        for token in &gene.domain {
            if !tokens.insert(token.as_str()) && reported_tokens.insert(token.as_str()) {
                violations.push(SpaceViolation::DuplicateToken { gene: gene.name.clone(), token: token.clone() });
            }
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(SpaceValidationError { violations })
    }
}

/// An ordered list of genes that passed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct SearchSpace {
    genes: Vec<GeneSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    genes: Vec<GeneSpec>,
}

impl TryFrom<RawSpace> for SearchSpace {
    type Error = SpaceValidationError;

    fn try_from(raw: RawSpace) -> Result<Self, Self::Error> {
        SearchSpace::new(raw.genes)
    }
}

impl From<SearchSpace> for RawSpace {
    fn from(space: SearchSpace) -> Self {
        RawSpace { genes: space.genes }
    }
}

impl SearchSpace {
    pub fn new(genes: Vec<GeneSpec>) -> Result<Self, SpaceValidationError> {
        validate_space(&genes)?;
        Ok(Self { genes })
    }

    pub fn genes(&self) -> &[GeneSpec] {
        &self.genes
    }

    pub fn gene_count(&self) -> usize {
        self.genes.len()
    }

    pub fn gene_names(&self) -> impl Iterator<Item = &str> {
        self.genes.iter().map(|g| g.name.as_str())
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        self.genes.iter().map(GeneSpec::size).collect()
    }

    /// Number of distinct chromosomes, or `None` if it overflows `u64`.
    pub fn cardinality(&self) -> Option<u64> {
        self.genes.iter().try_fold(1u64, |acc, g| acc.checked_mul(g.size() as u64))
    }

    /// Size of the single-gene neighborhood, identical for every chromosome.
    pub fn neighborhood_size(&self) -> usize {
        self.genes.iter().map(|g| g.size() - 1).sum()
    }

    /// Decodes a lexicographic rank into a chromosome (last gene varies
    /// fastest). `rank` must be below [`SearchSpace::cardinality`].
    pub fn chromosome_at(&self, mut rank: u64) -> Chromosome {
        let mut alleles = vec![0u32; self.genes.len()];
        for (slot, gene) in alleles.iter_mut().zip(&self.genes).rev() {
            let size = gene.size() as u64;
            *slot = (rank % size) as u32;
            rank /= size;
        }
        debug_assert_eq!(rank, 0, "rank out of range");
        Chromosome(alleles)
    }

    pub fn contains(&self, c: &Chromosome) -> bool {
        c.0.len() == self.genes.len() && c.0.iter().zip(&self.genes).all(|(&a, g)| (a as usize) < g.size())
    }

    /// Token for each allele, in gene order.
    pub fn tokens<'a>(&'a self, c: &'a Chromosome) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.genes.iter().zip(c.alleles()).map(|(g, &a)| (g.name.as_str(), g.domain[a as usize].as_str()))
    }

    /// Serializable `name -> token` view of a chromosome that keeps gene order.
    pub fn assignment<'a>(&'a self, c: &'a Chromosome) -> GeneAssignment<'a> {
        GeneAssignment { space: self, chromosome: c }
    }

    /// Inverse of [`SearchSpace::assignment`]. Keys must match gene names exactly.
    pub fn chromosome_from_tokens<'a, I>(&self, pairs: I) -> Result<Chromosome, TokenError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut alleles: Vec<Option<u32>> = vec![None; self.genes.len()];
        for (name, token) in pairs {
            let idx = self
                .genes
                .iter()
                .position(|g| g.name == name)
                .ok_or_else(|| TokenError::UnknownGene(name.to_owned()))?;
            let gene = &self.genes[idx];
            let value = gene
                .index_of(token)
                .ok_or_else(|| TokenError::UnknownToken { gene: name.to_owned(), token: token.to_owned() })?;
            alleles[idx] = Some(value as u32);
        }
        alleles
            .into_iter()
            .zip(&self.genes)
            .map(|(a, g)| a.ok_or_else(|| TokenError::MissingGene(g.name.clone())))
            .collect::<Result<Vec<_>, _>>()
            .map(Chromosome)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("unknown gene: {0}")]
    UnknownGene(String),
    #[error("missing gene: {0}")]
    MissingGene(String),
    #[error("token {token:?} is not in the domain of {gene}")]
    UnknownToken { gene: String, token: String },
}

pub struct GeneAssignment<'a> {
    space: &'a SearchSpace,
    chromosome: &'a Chromosome,
}

impl Serialize for GeneAssignment<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.space.gene_count()))?;
        for (name, token) in self.space.tokens(self.chromosome) {
            map.serialize_entry(name, token)?;
        }
        map.end()
    }
}

/// One domain index per gene. Ordering is lexicographic over the indices,
/// which is the tie-break order used throughout the crate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Chromosome(Vec<u32>);

impl Chromosome {
    pub fn new(alleles: Vec<u32>) -> Self {
        Self(alleles)
    }

    pub fn alleles(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn hamming(&self, other: &Chromosome) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    pub(crate) fn alleles_mut(&mut self) -> &mut [u32] {
        &mut self.0
    }
}

impl From<Vec<u32>> for Chromosome {
    fn from(alleles: Vec<u32>) -> Self {
        Self(alleles)
    }
}

/// A chromosome together with its fitness in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedChromosome {
    pub chromosome: Chromosome,
    pub fitness: f64,
}

impl EvaluatedChromosome {
    pub fn new(chromosome: Chromosome, fitness: f64) -> Self {
        debug_assert!(fitness.is_finite() && (0.0..=1.0).contains(&fitness));
        Self { chromosome, fitness }
    }

    /// Population order: fitness descending, then alleles ascending.
    pub fn rank_cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.fitness.total_cmp(&self.fitness).then_with(|| self.chromosome.cmp(&other.chromosome))
    }
}

/// Draws one allele per gene, uniformly, consuming the rng in gene order.
pub fn random_chromosome<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Chromosome {
    Chromosome(space.genes.iter().map(|g| rng.gen_range(0..g.size()) as u32).collect())
}

/// All chromosomes at Hamming distance one, gene-major then domain-index order.
pub fn neighbors(space: &SearchSpace, c: &Chromosome) -> Vec<Chromosome> {
    debug_assert!(space.contains(c));
    let mut out = Vec::with_capacity(space.neighborhood_size());
    for (gi, gene) in space.genes.iter().enumerate() {
        for value in 0..gene.size() as u32 {
            if value != c.0[gi] {
                let mut n = c.clone();
                n.0[gi] = value;
                out.push(n);
            }
        }
    }
    out
}
