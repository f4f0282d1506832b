use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Algorithm;
use crate::space::{Chromosome, EvaluatedChromosome, SearchSpace, TokenError};

/// Gene name to token, kept in gene order on both serialization and parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneMap(pub Vec<(String, String)>);

impl GeneMap {
    pub fn from_chromosome(space: &SearchSpace, c: &Chromosome) -> Self {
        GeneMap(space.tokens(c).map(|(n, t)| (n.to_owned(), t.to_owned())).collect())
    }

    pub fn to_chromosome(&self, space: &SearchSpace) -> Result<Chromosome, TokenError> {
        space.chromosome_from_tokens(self.0.iter().map(|(n, t)| (n.as_str(), t.as_str())))
    }
}

impl Serialize for GeneMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for GeneMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Ordered;

        impl<'de> Visitor<'de> for Ordered {
            type Value = GeneMap;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from gene name to token")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<GeneMap, A::Error> {
                let mut entries = Vec::new();
                while let Some(entry) = access.next_entry()? {
                    entries.push(entry);
                }
                Ok(GeneMap(entries))
            }
        }

        deserializer.deserialize_map(Ordered)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub genes: GeneMap,
    pub fitness: f64,
}

impl MemberRecord {
    pub fn new(space: &SearchSpace, member: &EvaluatedChromosome) -> Self {
        MemberRecord { genes: GeneMap::from_chromosome(space, &member.chromosome), fitness: member.fitness }
    }
}

/// One line of `run.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Population after replacement, best first.
    pub members: Vec<MemberRecord>,
    /// Best member so far; never decreases.
    pub best: MemberRecord,
    /// Best of this generation's offspring. Unlike `best` this may go down.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub child_best: Option<MemberRecord>,
    /// Distinct evaluator invocations so far.
    pub evaluations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ThresholdReached,
    GenerationsExhausted,
    EvaluationBudgetExhausted,
    EvaluatorFailure,
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub generations: usize,
    pub best: Option<MemberRecord>,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub evaluations: u64,
    pub cache_hits: u64,
    #[serde(skip)]
    pub records: Vec<GenerationRecord>,
}

impl RunResult {
    pub fn best_fitness(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.fitness)
    }
}
