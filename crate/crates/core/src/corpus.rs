//! Instruction-tuning corpus export (JSONL).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{self, BufWriter, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, NeighborSamplingConfig, RelationId, Triple};
use crate::prompt::{self, Direction, PromptCase, PromptError, Task, TaskKind, TEMPLATE_VERSION};

pub const CORRUPTION_BUDGET: usize = 1_000;

/// One JSONL line. Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub prompt: String,
    pub response: String,
    pub task: TaskKind,
    pub dataset: String,
    pub direction: Option<Direction>,
    pub structural: bool,
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
    pub label: Option<bool>,
    pub template_version: String,
}

impl InstructionRecord {
    pub fn from_case(case: &PromptCase, dataset: &str) -> Self {
        InstructionRecord {
            prompt: case.prompt.clone(),
            response: case.expected_response.clone(),
            task: case.task,
            dataset: dataset.to_string(),
            direction: case.direction,
            structural: case.structural,
            head: case.source.head.clone(),
            relation: case.source.relation.clone(),
            tail: case.source.tail.clone(),
            label: case.source.label,
            template_version: TEMPLATE_VERSION.to_string(),
        }
    }

    pub fn source_triple(&self) -> Triple {
        Triple {
            head: self.head.clone(),
            relation: self.relation.clone(),
            tail: self.tail.clone(),
            label: self.label,
        }
    }
}

/// Negatives per positive, as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeRatio {
    num: u64,
    den: u64,
}

impl NegativeRatio {
    pub const ONE: NegativeRatio = NegativeRatio { num: 1, den: 1 };
    pub const ZERO: NegativeRatio = NegativeRatio { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Option<Self> {
        (den > 0).then_some(NegativeRatio { num, den })
    }

    /// ⌈ratio × n⌉
    pub fn ceil_mul(self, n: usize) -> usize {
        let p = self.num as u128 * n as u128;
        p.div_ceil(self.den as u128) as usize
    }
}

impl Default for NegativeRatio {
    fn default() -> Self {
        Self::ONE
    }
}

impl fmt::Display for NegativeRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for NegativeRatio {
    type Err = String;

    /// Accepts `2`, `0.5`, `1.25` or `3/2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid negative ratio {s:?}");
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let num = n.trim().parse().map_err(|_| bad())?;
            let den = d.trim().parse().map_err(|_| bad())?;
            return NegativeRatio::new(num, den).ok_or_else(bad);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if (int.is_empty() && frac.is_empty())
            || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit())
            || frac.len() > 9
        {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(bad)?;
        Ok(NegativeRatio { num, den })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportOptions {
    pub task: Task,
    pub structural: bool,
    pub neighbors: usize,
    /// Only used for triple classification.
    pub negative_ratio: NegativeRatio,
    pub seed: u64,
    /// Only used for entity prediction.
    pub directions: Vec<Direction>,
}

impl ExportOptions {
    pub fn new(task: Task) -> Self {
        ExportOptions {
            task,
            structural: false,
            neighbors: NeighborSamplingConfig::DEFAULT_K,
            negative_ratio: NegativeRatio::ONE,
            seed: 0,
            directions: vec![Direction::Head, Direction::Tail],
        }
    }

    fn validate(&self) -> Result<Vec<Direction>, CorpusError> {
        if self.neighbors == 0 {
            return Err(CorpusError::InvalidOptions(
                "neighbors must be at least 1".into(),
            ));
        }
        let mut dirs = self.directions.clone();
        dirs.sort();
        dirs.dedup();
        if self.task == Task::EntityPrediction && dirs.is_empty() {
            return Err(CorpusError::InvalidOptions(
                "entity prediction needs at least one direction".into(),
            ));
        }
        Ok(dirs)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportReport {
    pub records: usize,
    pub positives: usize,
    pub negatives: usize,
    pub by_task: BTreeMap<TaskKind, usize>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corruption budget of {CORRUPTION_BUDGET} tries exhausted for ({0})")]
    CorruptionExhausted(String),
    #[error("corruption needs at least two entities")]
    TooFewEntities,
    #[error("invalid export options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("write failed: {0}")]
    Io(#[from] io::Error),
}

/// Negative triples by one-endpoint corruption, rejecting known positives.
pub struct Corrupter<'kg> {
    kg: &'kg KnowledgeGraph,
    positives: HashSet<(&'kg str, &'kg str, &'kg str)>,
}

impl<'kg> Corrupter<'kg> {
    pub fn new(kg: &'kg KnowledgeGraph) -> Self {
        Corrupter {
            kg,
            positives: kg.positive_set(),
        }
    }

    /// Replaces the head (probability 1/2) or the tail with a uniformly drawn
    /// entity. The result differs from `triple` in exactly one endpoint and
    /// is not a positive in any split.
    pub fn corrupt<R: Rng + ?Sized>(
        &self,
        triple: &Triple,
        rng: &mut R,
    ) -> Result<Triple, CorpusError> {
        let entities = self.kg.entities();
        if entities.len() < 2 {
            return Err(CorpusError::TooFewEntities);
        }
        for _ in 0..CORRUPTION_BUDGET {
            let replace_head = rng.gen_bool(0.5);
            let pick = &entities[rng.gen_range(0..entities.len())].id;
            let old = if replace_head {
                &triple.head
            } else {
                &triple.tail
            };
            if pick == old {
                continue;
            }
            let (h, t) = if replace_head {
                (pick, &triple.tail)
            } else {
                (&triple.head, pick)
            };
            if self
                .positives
                .contains(&(h.as_str(), triple.relation.as_str(), t.as_str()))
            {
                continue;
            }
            return Ok(Triple {
                head: h.clone(),
                relation: triple.relation.clone(),
                tail: t.clone(),
                label: Some(false),
            });
        }
        Err(CorpusError::CorruptionExhausted(format!(
            "{}, {}, {}",
            triple.head, triple.relation, triple.tail
        )))
    }
}

/// One-off corruption; prefer [`Corrupter`] for repeated calls.
pub fn corrupt_triple<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    triple: &Triple,
    rng: &mut R,
) -> Result<Triple, CorpusError> {
    Corrupter::new(kg).corrupt(triple, rng)
}

/// Writes one record per train triple (per direction for entity
/// prediction), in train-file order. Classification negatives follow their
/// source positive.
pub fn export_corpus<W: Write>(
    kg: &KnowledgeGraph,
    opts: &ExportOptions,
    sink: W,
) -> Result<ExportReport, CorpusError> {
    let directions = opts.validate()?;
    let dataset = kg.kind().name();
    let mut out = BufWriter::new(sink);
    let mut report = ExportReport::default();
    let mut emit = |case: &PromptCase, report: &mut ExportReport| -> Result<(), CorpusError> {
        let record = InstructionRecord::from_case(case, dataset);
        serde_json::to_writer(&mut out, &record).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
        report.records += 1;
        *report.by_task.entry(case.task).or_default() += 1;
        if case.source.label == Some(false) {
            report.negatives += 1;
        } else {
            report.positives += 1;
        }
        Ok(())
    };

    let train = kg.split(crate::kg::Split::Train);
    match opts.task {
        Task::TripleClassification => {
            let corrupter = Corrupter::new(kg);
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut positives_seen = 0usize;
            for triple in train {
                if triple.label == Some(false) {
                    emit(
                        &prompt::render_triple_classification(kg, triple)?,
                        &mut report,
                    )?;
                    continue;
                }
                let positive = triple.clone().with_label(true);
                emit(
                    &prompt::render_triple_classification(kg, &positive)?,
                    &mut report,
                )?;
                let quota = opts.negative_ratio.ceil_mul(positives_seen + 1)
                    - opts.negative_ratio.ceil_mul(positives_seen);
                positives_seen += 1;
                for _ in 0..quota {
                    let negative = corrupter.corrupt(triple, &mut rng)?;
                    emit(
                        &prompt::render_triple_classification(kg, &negative)?,
                        &mut report,
                    )?;
                }
            }
        }
        Task::RelationPrediction => {
            for triple in train {
                emit(
                    &prompt::render_relation_prediction(kg, triple)?,
                    &mut report,
                )?;
            }
        }
        Task::EntityPrediction => {
            for triple in train {
                for &dir in &directions {
                    let cfg = NeighborSamplingConfig {
                        k: opts.neighbors,
                        seed: opts.seed ^ report.records as u64,
                    };
                    let case =
                        prompt::render_entity_prediction(kg, triple, dir, opts.structural, &cfg)?;
                    emit(&case, &mut report)?;
                }
            }
        }
    }
    out.flush()?;
    Ok(report)
}
