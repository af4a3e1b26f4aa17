//! Evaluation runs: prompt generation, concurrent completion, scoring,
//! incremental logging and resumption.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    BackendConfig, BackendError, CompletionBackend, CompletionResult, HttpBackend, OracleBackend,
    OracleConfig,
};
use crate::kg::{DatasetKind, KnowledgeGraph, LoadError, NeighborSamplingConfig, Split};
use crate::prompt::{self, Direction, PromptCase, PromptError, Task};
use crate::report::{self, RunReport};
use crate::runlog::{self, LogError, LogHeader, LogLine, LogWriter, RunLogEntry};
use crate::scorer::{self, Judgement, ScoreError, ScorerOptions, TaskMetrics};
use crate::{TEMPLATE_VERSION, TOOL_VERSION};

pub const LOG_FILE: &str = "run.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Oracle(OracleConfig),
    Http(BackendConfig),
}

/// Everything that determines a run's cases and answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub dataset_dir: PathBuf,
    pub kind: DatasetKind,
    pub task: Task,
    pub split: Split,
    pub structural: bool,
    pub neighbors: usize,
    /// Neighbor sampling seed.
    pub seed: u64,
    pub subset: Option<usize>,
    pub subset_seed: u64,
    pub backend: BackendSpec,
    pub concurrency: usize,
    pub out_dir: PathBuf,
    pub scorer: ScorerOptions,
}

impl RunSpec {
    pub fn new(
        dataset_dir: impl Into<PathBuf>,
        kind: DatasetKind,
        task: Task,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        RunSpec {
            dataset_dir: dataset_dir.into(),
            kind,
            task,
            split: Split::Test,
            structural: false,
            neighbors: NeighborSamplingConfig::DEFAULT_K,
            seed: 0,
            subset: None,
            subset_seed: 0,
            backend: BackendSpec::Oracle(OracleConfig::default()),
            concurrency: 4,
            out_dir: out_dir.into(),
            scorer: ScorerOptions::default(),
        }
    }

    /// Fields that must match for a log to be resumed.
    fn resume_key(&self) -> RunSpec {
        RunSpec {
            out_dir: PathBuf::new(),
            concurrency: 1,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunControl {
    /// Stop after logging this many new cases, leaving the run incomplete.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Present once every selected case has been evaluated.
    pub report: Option<RunReport>,
    pub cases: usize,
    pub evaluated_before: usize,
    pub backend_calls: usize,
}

impl RunOutcome {
    pub fn metrics(&self) -> Option<&TaskMetrics> {
        self.report.as_ref().map(|r| &r.metrics)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("backend failed on {case_id}: {source} ({logged} cases logged)")]
    Backend {
        case_id: String,
        source: BackendError,
        logged: usize,
    },
    #[error("existing run log {0} was written for a different run; use a fresh output directory")]
    SpecMismatch(PathBuf),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Uniform sample of `size` distinct indices below `n`, ascending.
pub fn select_subset(n: usize, size: usize, seed: u64) -> Result<Vec<usize>, RunError> {
    if size > n {
        return Err(RunError::InvalidSpec(format!(
            "subset size {size} exceeds split size {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone)]
pub struct SelectedCase {
    pub id: String,
    pub ordinal: usize,
    pub case: PromptCase,
}

/// The deterministic case list of a run: selected triples in split order,
/// head before tail for entity prediction.
pub fn select_cases(kg: &KnowledgeGraph, spec: &RunSpec) -> Result<Vec<SelectedCase>, RunError> {
    let triples = kg.split(spec.split);
    let indices = match spec.subset {
        Some(size) => select_subset(triples.len(), size, spec.subset_seed)?,
        None => (0..triples.len()).collect(),
    };
    let mut out = Vec::new();
    for i in indices {
        let triple = &triples[i];
        let split = spec.split.name();
        match spec.task {
            Task::TripleClassification => {
                let case = prompt::render_triple_classification(kg, triple)?;
                out.push((format!("{split}:{i}:cls"), case));
            }
            Task::RelationPrediction => {
                let case = prompt::render_relation_prediction(kg, triple)?;
                out.push((format!("{split}:{i}:rel"), case));
            }
            Task::EntityPrediction => {
                for dir in [Direction::Head, Direction::Tail] {
                    let cfg = NeighborSamplingConfig {
                        k: spec.neighbors,
                        seed: spec.seed ^ out.len() as u64,
                    };
                    let case =
                        prompt::render_entity_prediction(kg, triple, dir, spec.structural, &cfg)?;
                    out.push((format!("{split}:{i}:{}", dir.name()), case));
                }
            }
        }
    }
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(ordinal, (id, case))| SelectedCase { id, ordinal, case })
        .collect())
}

fn validate(spec: &RunSpec) -> Result<(), RunError> {
    if spec.concurrency == 0 {
        return Err(RunError::InvalidSpec(
            "concurrency must be at least 1".into(),
        ));
    }
    if spec.neighbors == 0 {
        return Err(RunError::InvalidSpec("neighbors must be at least 1".into()));
    }
    if spec.subset == Some(0) {
        return Err(RunError::InvalidSpec(
            "subset size must be at least 1".into(),
        ));
    }
    Ok(())
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Loads the dataset, builds the configured backend and runs to completion.
pub fn run(spec: &RunSpec) -> Result<RunOutcome, RunError> {
    let mut spec = spec.clone();
    if let Ok(dir) = spec.dataset_dir.canonicalize() {
        spec.dataset_dir = dir;
    }
    let kg = KnowledgeGraph::load(&spec.dataset_dir, spec.kind)?;
    let backend: Box<dyn CompletionBackend + '_> = match &spec.backend {
        BackendSpec::Oracle(cfg) => Box::new(
            OracleBackend::new(&kg, cfg.clone())
                .map_err(|e| RunError::InvalidSpec(e.to_string()))?,
        ),
        BackendSpec::Http(cfg) => Box::new(
            HttpBackend::new(cfg.clone()).map_err(|e| RunError::InvalidSpec(e.to_string()))?,
        ),
    };
    run_with_backend(&spec, &kg, &backend, RunControl::default())
}

/// Runs `spec` against an already loaded graph and backend. Cases already in
/// the run log are skipped.
pub fn run_with_backend<B: CompletionBackend + ?Sized>(
    spec: &RunSpec,
    kg: &KnowledgeGraph,
    backend: &B,
    control: RunControl,
) -> Result<RunOutcome, RunError> {
    validate(spec)?;
    let cases = select_cases(kg, spec)?;
    if cases.is_empty() {
        return Err(RunError::InvalidSpec(format!(
            "{} split selects no cases",
            spec.split
        )));
    }
    fs::create_dir_all(&spec.out_dir).map_err(|source| RunError::Io {
        path: spec.out_dir.clone(),
        source,
    })?;
    let log_path = spec.out_dir.join(LOG_FILE);
    let header = LogHeader {
        tool_version: TOOL_VERSION.to_string(),
        template_version: TEMPLATE_VERSION.to_string(),
        spec: spec.clone(),
        case_count: cases.len(),
    };

    let (mut writer, done) = if log_path.exists() {
        let existing = runlog::read_log(&log_path)?;
        if existing.header.spec.resume_key() != spec.resume_key()
            || existing.header.case_count != cases.len()
            || existing.header.template_version != TEMPLATE_VERSION
        {
            return Err(RunError::SpecMismatch(log_path));
        }
        let done: HashSet<String> = existing.entries.into_iter().map(|e| e.case_id).collect();
        (LogWriter::resume(&log_path, existing.valid_len)?, done)
    } else {
        (LogWriter::create(&log_path, &header)?, HashSet::new())
    };

    let mut pending: Vec<&SelectedCase> = cases.iter().filter(|c| !done.contains(&c.id)).collect();
    let evaluated_before = cases.len() - pending.len();
    if let Some(limit) = control.stop_after {
        pending.truncate(limit);
    }

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let calls = AtomicUsize::new(0);
    let workers = spec.concurrency.min(pending.len()).max(1);
    let mut failure: Option<RunError> = None;
    let mut logged = 0usize;

    thread::scope(|s| {
        let (tx, rx) = mpsc::channel::<(usize, Result<CompletionResult, BackendError>)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, calls, pending) = (&next, &abort, &calls, &pending);
            s.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(sel) = pending.get(i) else { break };
                calls.fetch_add(1, Ordering::SeqCst);
                let result = backend.complete(&sel.case);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for (i, result) in rx {
            if failure.is_some() {
                continue;
            }
            let sel = pending[i];
            let entry = match result {
                Ok(completion) => RunLogEntry {
                    case_id: sel.id.clone(),
                    ordinal: sel.ordinal,
                    judgement: scorer::judge(&sel.case, &completion.text, &spec.scorer)
                        .for_case(&sel.id),
                    case: sel.case.clone(),
                    completion: Some(completion),
                    error: None,
                    timestamp_ms: now_ms(),
                },
                Err(e) if e.is_retry_exhausted() => RunLogEntry {
                    case_id: sel.id.clone(),
                    ordinal: sel.ordinal,
                    judgement: Judgement::backend_failure(sel.case.task).for_case(&sel.id),
                    case: sel.case.clone(),
                    completion: None,
                    error: Some(e.to_string()),
                    timestamp_ms: now_ms(),
                },
                Err(e) => {
                    abort.store(true, Ordering::SeqCst);
                    failure = Some(RunError::Backend {
                        case_id: sel.id.clone(),
                        source: e,
                        logged: evaluated_before + logged,
                    });
                    continue;
                }
            };
            match writer.append(&LogLine::Entry(entry)) {
                Ok(()) => logged += 1,
                Err(e) => {
                    abort.store(true, Ordering::SeqCst);
                    failure = Some(e.into());
                }
            }
        }
    });

    if let Some(err) = failure {
        return Err(err);
    }
    let backend_calls = calls.into_inner();
    if evaluated_before + logged < cases.len() {
        return Ok(RunOutcome {
            report: None,
            cases: cases.len(),
            evaluated_before,
            backend_calls,
        });
    }

    let contents = runlog::read_log(&log_path)?;
    let report = report::build_report(&contents.header, &contents.entries, &spec.scorer)?;
    report::write_report(&report, &spec.out_dir, REPORT_JSON, REPORT_TEXT).map_err(|source| {
        RunError::Io {
            path: spec.out_dir.clone(),
            source,
        }
    })?;
    Ok(RunOutcome {
        report: Some(report),
        cases: cases.len(),
        evaluated_before,
        backend_calls,
    })
}

/// Re-judges a persisted run without calling any backend.
pub fn rescore(log_path: &Path, opts: &ScorerOptions) -> Result<RunReport, RunError> {
    let contents = runlog::read_log(log_path)?;
    if contents.entries.is_empty() {
        return Err(LogError::Empty(log_path.to_path_buf()).into());
    }
    Ok(report::build_report(
        &contents.header,
        &contents.entries,
        opts,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_is_stable_and_sorted() {
        let a = select_subset(1000, 100, 9).unwrap();
        let b = select_subset(1000, 100, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, select_subset(1000, 100, 10).unwrap());
        assert_eq!(select_subset(5, 5, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(select_subset(5, 6, 1).is_err());
    }
}
