//! Response correctness rules and metric aggregation.
//!
//! Triple classification: a response is correct for a true triple when it
//! contains "Yes"/"yes", and for a false triple when it contains
//! "No"/"no"/"not" or a word ending in "n't". Relation and entity
//! prediction: correct when the response contains the gold label words.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{Direction, PromptCase, Task, TaskKind};

const AFFIRMATIVE_WORDS: [&str; 2] = ["Yes", "yes"];
const NEGATIVE_WORDS: [&str; 3] = ["No", "no", "not"];
const NEGATIVE_SUFFIX: &str = "n't";

/// Incorrect judgements kept in [`TaskMetrics::failures`].
pub const FAILURE_SAMPLE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Polarity words match whole words only, so "note" is not "not".
    #[default]
    WordBoundary,
    /// Raw substring containment.
    Substring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScorerOptions {
    pub match_mode: MatchMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    AffirmativeMatch,
    NegativeMatch,
    Containment,
    NoMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    /// Run-log case id; `None` for ad-hoc judgements.
    pub case_id: Option<String>,
    pub task: TaskKind,
    pub response: String,
    pub correct: bool,
    pub rule: Rule,
    /// The backend failed after retries; scored incorrect.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub backend_failure: bool,
}

impl Judgement {
    pub fn for_case(mut self, id: impl Into<String>) -> Self {
        self.case_id = Some(id.into());
        self
    }

    /// The judgement recorded when no response could be obtained.
    pub fn backend_failure(task: TaskKind) -> Self {
        Judgement {
            case_id: None,
            task,
            response: String::new(),
            correct: false,
            rule: Rule::NoMatch,
            backend_failure: true,
        }
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}'))
        .filter(|w| !w.is_empty())
        .map(|w| w.replace('\u{2019}', "'"))
}

fn has_affirmative(response: &str, mode: MatchMode) -> bool {
    match mode {
        MatchMode::Substring => AFFIRMATIVE_WORDS.iter().any(|w| response.contains(w)),
        MatchMode::WordBoundary => words(response).any(|w| {
            let w = w.trim_matches('\'');
            AFFIRMATIVE_WORDS.contains(&w)
        }),
    }
}

fn has_negative(response: &str, mode: MatchMode) -> bool {
    match mode {
        MatchMode::Substring => {
            NEGATIVE_WORDS.iter().any(|w| response.contains(w))
                || response.replace('\u{2019}', "'").contains(NEGATIVE_SUFFIX)
        }
        MatchMode::WordBoundary => words(response).any(|w| {
            let bare = w.trim_matches('\'');
            NEGATIVE_WORDS.contains(&bare)
                || (w.len() > NEGATIVE_SUFFIX.len() && w.ends_with(NEGATIVE_SUFFIX))
        }),
    }
}

pub fn judge_classification(label: bool, response: &str, opts: &ScorerOptions) -> Judgement {
    let (correct, rule) = if label {
        let hit = has_affirmative(response, opts.match_mode);
        (
            hit,
            if hit {
                Rule::AffirmativeMatch
            } else {
                Rule::NoMatch
            },
        )
    } else {
        let hit = has_negative(response, opts.match_mode);
        (
            hit,
            if hit {
                Rule::NegativeMatch
            } else {
                Rule::NoMatch
            },
        )
    };
    Judgement {
        case_id: None,
        task: TaskKind::TripleClassification,
        response: response.to_string(),
        correct,
        rule,
        backend_failure: false,
    }
}

/// Case fold and whitespace collapse.
pub fn normalize(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Whether `response` contains `label_text` after normalization.
pub fn contains_label(label_text: &str, response: &str) -> bool {
    let label = normalize(label_text);
    !label.is_empty() && normalize(response).contains(&label)
}

pub fn judge_containment(task: TaskKind, label_text: &str, response: &str) -> Judgement {
    let correct = contains_label(label_text, response);
    Judgement {
        case_id: None,
        task,
        response: response.to_string(),
        correct,
        rule: if correct {
            Rule::Containment
        } else {
            Rule::NoMatch
        },
        backend_failure: false,
    }
}

/// Applies the rule matching the case's task.
pub fn judge(case: &PromptCase, response: &str, opts: &ScorerOptions) -> Judgement {
    match case.task {
        TaskKind::TripleClassification => {
            judge_classification(case.source.label.unwrap_or(true), response, opts)
        }
        _ => judge_containment(
            case.task,
            case.label_text
                .as_deref()
                .unwrap_or(&case.expected_response),
            response,
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionScore {
    pub n: usize,
    pub n_correct: usize,
    pub score: f64,
}

impl DirectionScore {
    fn new(n: usize, n_correct: usize) -> Self {
        DirectionScore {
            n,
            n_correct,
            score: n_correct as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Task,
    pub dataset: String,
    pub metric: String,
    pub n: usize,
    pub n_correct: usize,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<DirectionScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<DirectionScore>,
    /// Mean of head and tail Hits@1, present when both directions were scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub averaged: Option<f64>,
    pub backend_failures: usize,
    pub failures: Vec<Judgement>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("no judgements to aggregate")]
    Empty,
    #[error("judgement for {found} does not belong to task {expected}")]
    TaskMismatch { expected: Task, found: TaskKind },
}

pub fn aggregate(
    dataset: &str,
    task: Task,
    judgements: &[Judgement],
) -> Result<TaskMetrics, ScoreError> {
    if judgements.is_empty() {
        return Err(ScoreError::Empty);
    }
    if let Some(j) = judgements.iter().find(|j| j.task.task() != task) {
        return Err(ScoreError::TaskMismatch {
            expected: task,
            found: j.task,
        });
    }
    let n = judgements.len();
    let n_correct = judgements.iter().filter(|j| j.correct).count();
    let count = |d: Direction| {
        let (n, c) = judgements
            .iter()
            .filter(|j| j.task.direction() == Some(d))
            .fold((0, 0), |(n, c), j| (n + 1, c + j.correct as usize));
        (n > 0).then(|| DirectionScore::new(n, c))
    };
    let (head, tail) = match task {
        Task::EntityPrediction => (count(Direction::Head), count(Direction::Tail)),
        _ => (None, None),
    };
    // single rounding: (ch/nh + ct/nt) / 2 = (ch*nt + ct*nh) / (2*nh*nt)
    let averaged = match (head, tail) {
        (Some(h), Some(t)) => {
            Some((h.n_correct * t.n + t.n_correct * h.n) as f64 / (2 * h.n * t.n) as f64)
        }
        _ => None,
    };
    Ok(TaskMetrics {
        task,
        dataset: dataset.to_string(),
        metric: task.metric_name().to_string(),
        n,
        n_correct,
        score: n_correct as f64 / n as f64,
        head,
        tail,
        averaged,
        backend_failures: judgements.iter().filter(|j| j.backend_failure).count(),
        failures: judgements
            .iter()
            .filter(|j| !j.correct)
            .take(FAILURE_SAMPLE_LIMIT)
            .cloned()
            .collect(),
    })
}
