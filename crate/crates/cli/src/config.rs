use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use kgllm::backend::{BackendConfig, OracleConfig, WrongAnswerPolicy};
use kgllm::corpus::{ExportOptions, NegativeRatio};
use kgllm::runner::{BackendSpec, RunSpec};
use kgllm::scorer::{MatchMode, ScorerOptions};
use kgllm::{DatasetKind, Direction, Split, Task};
use serde::Deserialize;

use crate::Failure;

/// Run settings. Every flag has a config-file key of the same name with
/// dashes replaced by underscores; flags win over the file.
#[derive(Args, Deserialize, Debug, Clone, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Dataset directory holding train/dev/test.tsv and the text files.
    #[arg(long, help_heading = "Data")]
    pub dataset: Option<PathBuf>,
    /// WN11, FB13, WN18RR or YAGO3-10. Inferred from the directory name if omitted.
    #[arg(long, help_heading = "Data")]
    pub kind: Option<String>,
    /// triple_classification, relation_prediction or entity_prediction.
    #[arg(long, help_heading = "Cases")]
    pub task: Option<String>,
    /// Split to evaluate (default test).
    #[arg(long, help_heading = "Cases")]
    pub split: Option<String>,
    /// List sampled neighbors in entity-prediction prompts.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", help_heading = "Cases")]
    pub structural: Option<bool>,
    /// Neighbors per structural prompt (default 5).
    #[arg(long, help_heading = "Cases")]
    pub neighbors: Option<usize>,
    /// Neighbor sampling and corruption seed (default 0).
    #[arg(long, help_heading = "Cases")]
    pub seed: Option<u64>,
    /// Evaluate a seeded random subset of this many triples.
    #[arg(long, help_heading = "Cases")]
    pub subset: Option<usize>,
    #[arg(long, help_heading = "Cases")]
    pub subset_seed: Option<u64>,
    /// Negatives per positive for classification export, e.g. 1, 0.5 or 3/2.
    #[arg(long, help_heading = "Export")]
    pub negative_ratio: Option<String>,
    /// Entity-prediction directions to export, e.g. "head,tail".
    #[arg(long, help_heading = "Export")]
    pub directions: Option<String>,

    /// http or oracle (default oracle).
    #[arg(long, help_heading = "Backend")]
    pub backend: Option<String>,
    #[arg(long, help_heading = "Backend")]
    pub endpoint: Option<String>,
    #[arg(long, help_heading = "Backend")]
    pub model: Option<String>,
    #[arg(long, help_heading = "Backend")]
    pub temperature: Option<f64>,
    #[arg(long, help_heading = "Backend")]
    pub max_tokens: Option<u32>,
    #[arg(long, help_heading = "Backend")]
    pub timeout_secs: Option<u64>,
    #[arg(long, help_heading = "Backend")]
    pub max_retries: Option<u32>,
    /// Upper bound on concurrent HTTP requests.
    #[arg(long, help_heading = "Backend")]
    pub max_in_flight: Option<usize>,
    /// Environment variable holding the API key.
    #[arg(long, help_heading = "Backend")]
    pub api_key_env: Option<String>,
    /// Append raw request/response pairs to this JSONL file.
    #[arg(long, help_heading = "Backend")]
    pub debug_log: Option<PathBuf>,
    /// Oracle probability of a wrong answer.
    #[arg(long, help_heading = "Backend")]
    pub error_rate: Option<f64>,
    #[arg(long, help_heading = "Backend")]
    pub oracle_seed: Option<u64>,
    /// Fixed wrong answer for the oracle instead of a random other label.
    #[arg(long, help_heading = "Backend")]
    pub distractor: Option<String>,

    /// Worker threads (default 4).
    #[arg(long, help_heading = "Run")]
    pub concurrency: Option<usize>,
    /// Output directory for eval, output file for export.
    #[arg(long, help_heading = "Run")]
    pub out: Option<PathBuf>,
    /// Classification words match as raw substrings instead of whole words.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", help_heading = "Run")]
    pub strict_substring: Option<bool>,
}

macro_rules! overlay {
    ($top:expr, $base:expr, $($field:ident),+) => {
        Settings { $($field: $top.$field.or($base.$field)),+ }
    };
}

impl Settings {
    /// `self` over `base`, field by field.
    pub fn over(self, base: Settings) -> Settings {
        overlay!(
            self,
            base,
            dataset,
            kind,
            task,
            split,
            structural,
            neighbors,
            seed,
            subset,
            subset_seed,
            negative_ratio,
            directions,
            backend,
            endpoint,
            model,
            temperature,
            max_tokens,
            timeout_secs,
            max_retries,
            max_in_flight,
            api_key_env,
            debug_log,
            error_rate,
            oracle_seed,
            distractor,
            concurrency,
            out,
            strict_substring
        )
    }

    pub fn load_file(path: &Path) -> Result<Settings, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Failure::usage(format!("config {}: {}", path.display(), e.message())))
    }

    /// Flags over the optional config file.
    pub fn resolve(self, config: Option<&Path>) -> Result<Settings, Failure> {
        match config {
            Some(path) => Ok(self.over(Settings::load_file(path)?)),
            None => Ok(self),
        }
    }

    pub fn dataset(&self) -> Result<(PathBuf, DatasetKind), Failure> {
        let dir = self
            .dataset
            .clone()
            .ok_or_else(|| Failure::usage("--dataset is required"))?;
        let kind = match &self.kind {
            Some(k) => k.parse().map_err(Failure::usage)?,
            None => DatasetKind::from_dir(&dir).ok_or_else(|| {
                Failure::usage(format!(
                    "cannot infer the dataset kind from {}; pass --kind",
                    dir.display()
                ))
            })?,
        };
        Ok((dir, kind))
    }

    pub fn task(&self) -> Result<Task, Failure> {
        self.task
            .as_deref()
            .ok_or_else(|| Failure::usage("--task is required"))?
            .parse()
            .map_err(Failure::usage)
    }

    pub fn scorer(&self) -> ScorerOptions {
        ScorerOptions {
            match_mode: if self.strict_substring.unwrap_or(false) {
                MatchMode::Substring
            } else {
                MatchMode::WordBoundary
            },
        }
    }

    fn backend(&self) -> Result<BackendSpec, Failure> {
        match self.backend.as_deref().unwrap_or("oracle") {
            "oracle" => {
                let mut cfg = OracleConfig::default();
                cfg.error_rate = self.error_rate.unwrap_or(cfg.error_rate);
                cfg.seed = self.oracle_seed.unwrap_or(cfg.seed);
                if let Some(text) = &self.distractor {
                    cfg.policy = WrongAnswerPolicy::Distractor(text.clone());
                }
                Ok(BackendSpec::Oracle(cfg))
            }
            "http" => {
                let d = BackendConfig::default();
                let cfg = BackendConfig {
                    endpoint: self.endpoint.clone().unwrap_or(d.endpoint),
                    model: self.model.clone().unwrap_or(d.model),
                    temperature: self.temperature.unwrap_or(d.temperature),
                    max_tokens: self.max_tokens.unwrap_or(d.max_tokens),
                    timeout_secs: self.timeout_secs.unwrap_or(d.timeout_secs),
                    max_retries: self.max_retries.unwrap_or(d.max_retries),
                    max_in_flight: self.max_in_flight.unwrap_or(d.max_in_flight),
                    api_key_env: self.api_key_env.clone().unwrap_or(d.api_key_env),
                    debug_log: self.debug_log.clone().or(d.debug_log),
                    ..d
                };
                cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
                Ok(BackendSpec::Http(cfg))
            }
            other => Err(Failure::usage(format!(
                "unknown backend {other:?} (expected http or oracle)"
            ))),
        }
    }

    pub fn run_spec(&self) -> Result<RunSpec, Failure> {
        let (dir, kind) = self.dataset()?;
        let out = self
            .out
            .clone()
            .ok_or_else(|| Failure::usage("--out is required"))?;
        let mut spec = RunSpec::new(dir, kind, self.task()?, out);
        if let Some(split) = &self.split {
            spec.split = split.parse::<Split>().map_err(Failure::usage)?;
        }
        spec.structural = self.structural.unwrap_or(false);
        spec.neighbors = self.neighbors.unwrap_or(spec.neighbors);
        spec.seed = self.seed.unwrap_or(spec.seed);
        spec.subset = self.subset;
        spec.subset_seed = self.subset_seed.unwrap_or(spec.subset_seed);
        spec.backend = self.backend()?;
        spec.concurrency = self.concurrency.unwrap_or(spec.concurrency);
        spec.scorer = self.scorer();
        Ok(spec)
    }

    pub fn export_options(&self) -> Result<ExportOptions, Failure> {
        let mut opts = ExportOptions::new(self.task()?);
        opts.structural = self.structural.unwrap_or(false);
        opts.neighbors = self.neighbors.unwrap_or(opts.neighbors);
        opts.seed = self.seed.unwrap_or(opts.seed);
        if let Some(r) = &self.negative_ratio {
            opts.negative_ratio = r.parse::<NegativeRatio>().map_err(Failure::usage)?;
        }
        if let Some(d) = &self.directions {
            opts.directions = d
                .split(',')
                .map(|s| s.trim().parse::<Direction>())
                .collect::<Result<_, _>>()
                .map_err(Failure::usage)?;
        }
        Ok(opts)
    }
}
