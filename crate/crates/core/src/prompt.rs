//! Prompt and ideal-response rendering for the three completion tasks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KgError, KnowledgeGraph, NeighborSamplingConfig, Triple};

/// Stamped into every exported record, run log and report.
pub const TEMPLATE_VERSION: &str = "kgc-prompts/1";

/// Literal interrogative prefix of head-entity questions.
pub const WH_PREFIX: &str = "What/Who/When/Where/Why";

pub const AFFIRMATIVE_RESPONSE: &str = "Yes, this is true.";
pub const NEGATIVE_RESPONSE: &str = "No, this is not true.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TripleClassification,
    RelationPrediction,
    HeadPrediction,
    TailPrediction,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::TripleClassification => "triple_classification",
            TaskKind::RelationPrediction => "relation_prediction",
            TaskKind::HeadPrediction => "head_prediction",
            TaskKind::TailPrediction => "tail_prediction",
        }
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            TaskKind::HeadPrediction => Some(Direction::Head),
            TaskKind::TailPrediction => Some(Direction::Tail),
            _ => None,
        }
    }

    pub fn task(self) -> Task {
        match self {
            TaskKind::TripleClassification => Task::TripleClassification,
            TaskKind::RelationPrediction => Task::RelationPrediction,
            TaskKind::HeadPrediction | TaskKind::TailPrediction => Task::EntityPrediction,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Task granularity used by export and evaluation; entity prediction covers
/// both the head and the tail direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TripleClassification,
    RelationPrediction,
    EntityPrediction,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::TripleClassification => "triple_classification",
            Task::RelationPrediction => "relation_prediction",
            Task::EntityPrediction => "entity_prediction",
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            Task::TripleClassification => "accuracy",
            _ => "hits@1",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "triple_classification" | "classification" | "triple" => Ok(Task::TripleClassification),
            "relation_prediction" | "relation" => Ok(Task::RelationPrediction),
            "entity_prediction" | "entity" | "link_prediction" | "link" => {
                Ok(Task::EntityPrediction)
            }
            _ => Err(format!(
                "unknown task {s:?} (expected classification, relation or entity)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Head,
    Tail,
}

impl Direction {
    pub fn task_kind(self) -> TaskKind {
        match self {
            Direction::Head => TaskKind::HeadPrediction,
            Direction::Tail => TaskKind::TailPrediction,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Head => "head",
            Direction::Tail => "tail",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "head" => Ok(Direction::Head),
            "tail" => Ok(Direction::Tail),
            _ => Err(format!("unknown direction {s:?} (expected head or tail)")),
        }
    }
}

/// One rendered task instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCase {
    pub task: TaskKind,
    pub prompt: String,
    pub expected_response: String,
    /// Gold label words checked by containment scoring: the relation phrase
    /// or the target entity text. Absent for triple classification.
    pub label_text: Option<String>,
    pub source: Triple,
    pub direction: Option<Direction>,
    /// True when neighbors were actually listed in the prompt.
    pub structural: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("triple ({0}) has no truth label")]
    MissingLabel(String),
    #[error("knowledge graph has no relations")]
    NoRelations,
    #[error(transparent)]
    Kg(#[from] KgError),
}

/// Terminates `s` with a period unless it already ends with one.
fn end_sentence(mut s: String) -> String {
    if !s.ends_with('.') {
        s.push('.');
    }
    s
}

fn triple_desc(t: &Triple) -> String {
    format!("{}, {}, {}", t.head, t.relation, t.tail)
}

pub fn render_triple_classification(
    kg: &KnowledgeGraph,
    triple: &Triple,
) -> Result<PromptCase, PromptError> {
    let label = triple
        .label
        .ok_or_else(|| PromptError::MissingLabel(triple_desc(triple)))?;
    let h = kg.entity_text(triple.head.as_str())?;
    let r = kg.relation_text(triple.relation.as_str())?;
    let t = kg.entity_text(triple.tail.as_str())?;
    Ok(PromptCase {
        task: TaskKind::TripleClassification,
        prompt: format!("Is this true: {h} {r} {t}?"),
        expected_response: if label {
            AFFIRMATIVE_RESPONSE
        } else {
            NEGATIVE_RESPONSE
        }
        .to_string(),
        label_text: None,
        source: triple.clone(),
        direction: None,
        structural: false,
    })
}

pub fn render_relation_prediction(
    kg: &KnowledgeGraph,
    triple: &Triple,
) -> Result<PromptCase, PromptError> {
    if kg.relations().is_empty() {
        return Err(PromptError::NoRelations);
    }
    let h = kg.entity_text(triple.head.as_str())?;
    let r = kg.relation_text(triple.relation.as_str())?;
    let t = kg.entity_text(triple.tail.as_str())?;
    let candidates = kg.relation_candidate_list();
    Ok(PromptCase {
        task: TaskKind::RelationPrediction,
        prompt: end_sentence(format!(
            "What is the relationship between {h} and {t}? Please choose your answer from: {candidates}"
        )),
        expected_response: end_sentence(format!("{h} {r} {t}")),
        label_text: Some(r.to_string()),
        source: triple.clone(),
        direction: None,
        structural: false,
    })
}

/// Renders a head or tail question. With `structural`, up to `cfg.k`
/// neighbors of the known entity (never the target) are sampled and listed.
pub fn render_entity_prediction(
    kg: &KnowledgeGraph,
    triple: &Triple,
    direction: Direction,
    structural: bool,
    cfg: &NeighborSamplingConfig,
) -> Result<PromptCase, PromptError> {
    let neighbors = if structural {
        let (known, target) = match direction {
            Direction::Tail => (&triple.head, &triple.tail),
            Direction::Head => (&triple.tail, &triple.head),
        };
        kg.sample_neighbors(known.as_str(), Some(target.as_str()), cfg)?
    } else {
        Vec::new()
    };
    render_entity_prediction_with_neighbors(kg, triple, direction, &neighbors)
}

/// Same as [`render_entity_prediction`] with an explicit neighbor list. An
/// empty list yields the plain prompt.
pub fn render_entity_prediction_with_neighbors(
    kg: &KnowledgeGraph,
    triple: &Triple,
    direction: Direction,
    neighbors: &[EntityId],
) -> Result<PromptCase, PromptError> {
    let h = kg.entity_text(triple.head.as_str())?;
    let r = kg.relation_text(triple.relation.as_str())?;
    let t = kg.entity_text(triple.tail.as_str())?;
    let target_id = match direction {
        Direction::Tail => &triple.tail,
        Direction::Head => &triple.head,
    };
    let listed = neighbors
        .iter()
        .filter(|n| *n != target_id)
        .map(|n| kg.entity_text(n.as_str()))
        .collect::<Result<Vec<_>, _>>()?
        .join("|");
    let structural = !listed.is_empty();

    let (prompt, target) = match direction {
        Direction::Tail if structural => (
            format!(
                "{} Complete the fact: {h} {r}",
                end_sentence(format!("Giving the neighbors of {h}: {listed}"))
            ),
            t,
        ),
        Direction::Tail => (format!("{h} {r}"), t),
        Direction::Head if structural => (
            format!(
                "{WH_PREFIX} {r} {t}? {}",
                end_sentence(format!("The neighbors of {t}: {listed}"))
            ),
            h,
        ),
        Direction::Head => (format!("{WH_PREFIX} {r} {t}?"), h),
    };
    Ok(PromptCase {
        task: direction.task_kind(),
        prompt,
        expected_response: target.to_string(),
        label_text: Some(target.to_string()),
        source: triple.clone(),
        direction: Some(direction),
        structural,
    })
}

pub fn render(
    kg: &KnowledgeGraph,
    triple: &Triple,
    kind: TaskKind,
    structural: bool,
    cfg: &NeighborSamplingConfig,
) -> Result<PromptCase, PromptError> {
    match kind {
        TaskKind::TripleClassification => render_triple_classification(kg, triple),
        TaskKind::RelationPrediction => render_relation_prediction(kg, triple),
        TaskKind::HeadPrediction => {
            render_entity_prediction(kg, triple, Direction::Head, structural, cfg)
        }
        TaskKind::TailPrediction => {
            render_entity_prediction(kg, triple, Direction::Tail, structural, cfg)
        }
    }
}
