//! Run reports: JSON plus an aligned text table (dataset × task × score).

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::prompt::Task;
use crate::runlog::{LogHeader, RunLogEntry};
use crate::runner::{BackendSpec, RunSpec};
use crate::scorer::{self, Judgement, ScoreError, ScorerOptions, TaskMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub neighbor_seed: u64,
    pub subset_seed: Option<u64>,
    pub oracle_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub template_version: String,
    pub seeds: Seeds,
    pub cases_selected: usize,
    pub cases_evaluated: usize,
    pub metrics: TaskMetrics,
    /// Effective configuration of the run, with the scorer options used here.
    pub config: RunSpec,
}

impl RunReport {
    pub fn is_complete(&self) -> bool {
        self.cases_evaluated == self.cases_selected
    }
}

/// Judges every logged response with `opts` and aggregates in case order.
/// Duplicate case ids keep their first entry.
pub fn build_report(
    header: &LogHeader,
    entries: &[RunLogEntry],
    opts: &ScorerOptions,
) -> Result<RunReport, ScoreError> {
    let mut ordered: Vec<&RunLogEntry> = entries.iter().collect();
    ordered.sort_by_key(|e| e.ordinal);
    ordered.dedup_by_key(|e| e.ordinal);
    let judgements: Vec<Judgement> = ordered
        .iter()
        .map(|e| match &e.completion {
            Some(c) => scorer::judge(&e.case, &c.text, opts).for_case(&e.case_id),
            None => Judgement::backend_failure(e.case.task).for_case(&e.case_id),
        })
        .collect();
    let spec = &header.spec;
    let metrics = scorer::aggregate(spec.kind.name(), spec.task, &judgements)?;
    let mut config = spec.clone();
    config.scorer = *opts;
    Ok(RunReport {
        tool_version: header.tool_version.clone(),
        template_version: header.template_version.clone(),
        seeds: Seeds {
            neighbor_seed: spec.seed,
            subset_seed: spec.subset.map(|_| spec.subset_seed),
            oracle_seed: match &spec.backend {
                BackendSpec::Oracle(o) => Some(o.seed),
                BackendSpec::Http(_) => None,
            },
        },
        cases_selected: header.case_count,
        cases_evaluated: judgements.len(),
        metrics,
        config,
    })
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Aligned table in the layout of the usual results tables.
pub fn render_text(report: &RunReport) -> String {
    let m = &report.metrics;
    let cfg = &report.config;
    let mut dataset = m.dataset.clone();
    if let Some(n) = cfg.subset {
        write!(dataset, "-{n}").unwrap();
    }
    let mut out = String::new();
    writeln!(
        out,
        "# {} | templates {} | neighbor seed {} | subset seed {} | oracle seed {}",
        report.tool_version,
        report.template_version,
        report.seeds.neighbor_seed,
        report
            .seeds
            .subset_seed
            .map_or("-".into(), |s| s.to_string()),
        report
            .seeds
            .oracle_seed
            .map_or("-".into(), |s| s.to_string()),
    )
    .unwrap();
    writeln!(
        out,
        "# config {}",
        serde_json::to_string(cfg).expect("config serializes")
    )
    .unwrap();
    let header = [
        "Dataset", "Task", "Split", "N", "Metric", "Score", "Head", "Tail", "Avg", "Failures",
    ];
    let row = [
        dataset,
        m.task.name().to_string(),
        cfg.split.name().to_string(),
        m.n.to_string(),
        m.metric.clone(),
        format!("{:.4}", m.score),
        fmt_score(m.head.map(|h| h.score)),
        fmt_score(m.tail.map(|t| t.score)),
        fmt_score(m.averaged),
        m.backend_failures.to_string(),
    ];
    let widths: Vec<usize> = header
        .iter()
        .zip(&row)
        .map(|(h, r)| h.len().max(r.chars().count()))
        .collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    writeln!(out, "{}", line(header.to_vec())).unwrap();
    writeln!(
        out,
        "{}",
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-+-")
    )
    .unwrap();
    writeln!(out, "{}", line(row.iter().map(String::as_str).collect())).unwrap();
    if m.task == Task::EntityPrediction && m.averaged.is_some() {
        writeln!(out, "# Avg = mean of head and tail Hits@1").unwrap();
    }
    out
}

pub fn to_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_report(
    report: &RunReport,
    dir: &Path,
    json_name: &str,
    text_name: &str,
) -> io::Result<()> {
    fs::write(dir.join(json_name), to_json(report))?;
    fs::write(dir.join(text_name), render_text(report))
}
