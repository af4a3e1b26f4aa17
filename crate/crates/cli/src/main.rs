mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgllm::corpus::{export_corpus, CorpusError};
use kgllm::kg::LoadError;
use kgllm::report::{self, RunReport};
use kgllm::runner::{self, RunError};
use kgllm::{KnowledgeGraph, NeighborSamplingConfig, TEMPLATE_VERSION, TOOL_VERSION};
use serde_json::json;

use config::Settings;

#[derive(Parser, Debug)]
#[command(
    name = "kgllm",
    version,
    about = "Knowledge graph completion with language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print entity, relation and split counts of a dataset.
    Stats(StatsArgs),
    /// Write an instruction-tuning corpus from the train split.
    Export(RunArgs),
    /// Evaluate a backend on a split and write a report.
    Eval(RunArgs),
    /// Re-judge a run log without calling the backend.
    Rescore(RescoreArgs),
    /// Print sampled neighbors of an entity, or the first rendered cases of a run.
    Sample(SampleArgs),
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    kind: Option<String>,
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args, Debug)]
struct RescoreArgs {
    /// A run.jsonl written by eval.
    log: PathBuf,
    /// Directory for rescore.json and rescore.txt (default: next to the log).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    strict_substring: bool,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Entity id whose neighbors to sample.
    #[arg(long)]
    entity: Option<String>,
    /// Entity id never to return.
    #[arg(long, requires = "entity")]
    exclude: Option<String>,
    /// Cases to print when no entity is given.
    #[arg(long, default_value_t = 5)]
    limit: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

/// An error with its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    const BACKEND: u8 = 1;
    const USAGE: u8 = 2;
    const DATA: u8 = 3;

    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl ToString) -> Self {
        Failure {
            code: Self::DATA,
            message: message.to_string(),
        }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::MissingDir(_) => Failure::usage(e.to_string()),
            _ => Failure::data(e),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Load(e) => e.into(),
            RunError::InvalidSpec(_) | RunError::SpecMismatch(_) => Failure::usage(e.to_string()),
            RunError::Backend { .. } => Failure {
                code: Self::BACKEND,
                message: e.to_string(),
            },
            _ => Failure::data(e),
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidOptions(_) => Failure::usage(e.to_string()),
            _ => Failure::data(e),
        }
    }
}

fn write_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::data(format!("cannot write {}: {e}", path.display()))
}

fn stats(args: StatsArgs) -> Result<(), Failure> {
    let settings = Settings {
        dataset: args.dataset,
        kind: args.kind,
        ..Settings::default()
    }
    .resolve(args.config.as_deref())?;
    let (dir, kind) = settings.dataset()?;
    let kg = KnowledgeGraph::load(&dir, kind)?;
    println!("# dataset: entities / relations / train / dev / test");
    println!("{kind}: {}", kg.stats());
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn export(args: RunArgs) -> Result<(), Failure> {
    let settings = args.settings.resolve(args.config.as_deref())?;
    let (dir, kind) = settings.dataset()?;
    let opts = settings.export_options()?;
    let out = settings
        .out
        .clone()
        .ok_or_else(|| Failure::usage("--out is required"))?;
    let kg = KnowledgeGraph::load(&dir, kind)?;
    let file = File::create(&out).map_err(write_err(&out))?;
    let summary = export_corpus(&kg, &opts, file)?;

    let manifest = json!({
        "tool_version": TOOL_VERSION,
        "template_version": TEMPLATE_VERSION,
        "seeds": { "seed": opts.seed },
        "dataset": kind,
        "dataset_dir": dir.canonicalize().unwrap_or(dir),
        "options": opts,
        "records": summary,
    });
    let path = manifest_path(&out);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(write_err(&path))?;
    eprintln!(
        "wrote {} records ({} positive, {} negative) to {}",
        summary.records,
        summary.positives,
        summary.negatives,
        out.display()
    );
    Ok(())
}

fn finish(report: &RunReport) -> Result<(), Failure> {
    print!("{}", report::render_text(report));
    let failures = report.metrics.backend_failures;
    if failures > 0 {
        return Err(Failure {
            code: Failure::BACKEND,
            message: format!("{failures} case(s) scored incorrect after backend failures"),
        });
    }
    Ok(())
}

fn eval(args: RunArgs) -> Result<(), Failure> {
    let spec = args.settings.resolve(args.config.as_deref())?.run_spec()?;
    let outcome = runner::run(&spec)?;
    if outcome.evaluated_before > 0 {
        eprintln!(
            "resumed: {} of {} cases were already logged",
            outcome.evaluated_before, outcome.cases
        );
    }
    let report = outcome
        .report
        .ok_or_else(|| Failure::data("run ended before every case was evaluated"))?;
    finish(&report)
}

fn rescore(args: RescoreArgs) -> Result<(), Failure> {
    let opts = Settings {
        strict_substring: Some(args.strict_substring),
        ..Settings::default()
    }
    .scorer();
    let report = runner::rescore(&args.log, &opts)?;
    let dir = match args.out {
        Some(dir) => dir,
        None => args.log.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(&dir).map_err(write_err(&dir))?;
    report::write_report(&report, &dir, "rescore.json", "rescore.txt").map_err(write_err(&dir))?;
    if !report.is_complete() {
        eprintln!(
            "log is partial: {} of {} cases",
            report.cases_evaluated, report.cases_selected
        );
    }
    finish(&report)
}

fn sample(args: SampleArgs) -> Result<(), Failure> {
    let mut settings = args.settings.resolve(args.config.as_deref())?;
    let (dir, kind) = settings.dataset()?;
    let kg = KnowledgeGraph::load(&dir, kind)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let print = |out: &mut io::StdoutLock, line: String| {
        writeln!(out, "{line}").map_err(|e| Failure::data(format!("stdout: {e}")))
    };

    if let Some(entity) = &args.entity {
        let cfg = NeighborSamplingConfig::new(
            settings
                .neighbors
                .unwrap_or(NeighborSamplingConfig::DEFAULT_K),
            settings.seed.unwrap_or(0),
        )
        .map_err(|e| Failure::usage(e.to_string()))?;
        let picked = kg
            .sample_neighbors(entity, args.exclude.as_deref(), &cfg)
            .map_err(|e| Failure::usage(e.to_string()))?;
        for id in picked {
            let text = kg.entity_text(id.as_str()).map_err(Failure::data)?;
            print(&mut out, format!("{id}\t{text}"))?;
        }
        return Ok(());
    }

    settings.out.get_or_insert_with(|| PathBuf::from("."));
    let spec = settings.run_spec()?;
    for case in runner::select_cases(&kg, &spec)?
        .into_iter()
        .take(args.limit)
    {
        let line = json!({
            "id": case.id,
            "prompt": case.case.prompt,
            "expected_response": case.case.expected_response,
        });
        print(&mut out, line.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats(a) => stats(a),
        Command::Export(a) => export(a),
        Command::Eval(a) => eval(a),
        Command::Rescore(a) => rescore(a),
        Command::Sample(a) => sample(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("kgllm: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
