use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ddrill::eval::{cost_ratio_report, Metrics, RunReport};
use ddrill::ingest::{detect_format, load_dataset, parse_markdown_document, DatasetFormat};
use ddrill::runner::{
    anonymize_ablation, chunk_sweep, load_tasks, run_command, RunConfig, RunContext, Strategy, DEFAULT_CHUNK_GRID,
};

const EXIT_FAILURE: u8 = 1;
const EXIT_UNKNOWN_STRATEGY: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

#[derive(Parser)]
#[command(
    name = "ddrill",
    version,
    about = "Section-first evidence retrieval over long documents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset or a markdown file into canonical documents and questions.
    Ingest(IngestArgs),
    /// Run one strategy over a dataset and write a run directory.
    Run(RunArgs),
    /// Compare two runs over the same questions.
    Compare(CompareArgs),
    /// Paired runs: anonymized section names or a chunk-size sweep.
    Ablate(AblateArgs),
    /// Run the self-ask agent with an inner retrieval strategy.
    Selfask(SelfaskArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Qasper,
    Hotpot,
    Markdown,
}

#[derive(Args)]
struct IngestArgs {
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Detected from the file when omitted; `.md` files are markdown.
    #[arg(long, value_enum)]
    format: Option<InputFormat>,
    /// Document id for markdown input; defaults to the file stem.
    #[arg(long)]
    doc_id: Option<String>,
}

#[derive(Args, Clone)]
struct RunOptions {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    /// scripted:<path> or openai:<model>[@url]
    #[arg(long)]
    backend: Option<String>,
    #[arg(long = "dataset")]
    datasets: Vec<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    summary_cache: Option<PathBuf>,
    /// extractive or llm
    #[arg(long)]
    summarizer: Option<String>,
    #[arg(long)]
    summary_budget: Option<usize>,
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    rerank_k: Option<usize>,
    /// lexical or remote:<url>
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    max_hops: Option<usize>,
    /// Skip the answering step.
    #[arg(long)]
    no_answer: bool,
    #[arg(long)]
    out: PathBuf,
}

impl RunOptions {
    fn to_config(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { c.$field = v.clone(); })*
            };
        }
        set!(
            strategy,
            backend,
            summarizer,
            summary_budget,
            chunk_size,
            rerank_k,
            scorer,
            seed,
            workers,
            max_hops
        );
        if let Some(v) = &self.format {
            c.format = Some(v.clone());
        }
        if let Some(v) = &self.cache {
            c.cache = Some(v.clone());
        }
        if let Some(v) = &self.summary_cache {
            c.summary_cache = Some(v.clone());
        }
        if let Some(v) = self.limit {
            c.limit = Some(v);
        }
        if !self.datasets.is_empty() {
            c.datasets = self.datasets.clone();
        }
        if self.no_answer {
            c.answer = false;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    opts: RunOptions,
}

#[derive(Args)]
struct CompareArgs {
    /// report.json or a run directory
    a: PathBuf,
    /// report.json or a run directory; the denominator of every ratio
    b: PathBuf,
    /// Print the ratios as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    AnonymizeSections,
    ChunkSweep,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(value_enum)]
    kind: Ablation,
    /// Chunk sizes for the sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<usize>,
    #[command(flatten)]
    opts: RunOptions,
}

#[derive(Args)]
struct SelfaskArgs {
    /// Retrieval strategy used for each follow-up question.
    #[arg(long, default_value = "d3-base")]
    inner: String,
    #[command(flatten)]
    opts: RunOptions,
}

/// Rejects unknown strategy tags before any work starts.
fn check_strategy(config: &RunConfig) -> Result<Strategy, Failure> {
    config
        .parsed_strategy()
        .map_err(|e| Failure(EXIT_UNKNOWN_STRATEGY, anyhow::Error::new(e)))
}

struct Failure(u8, anyhow::Error);

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let code = match e.downcast_ref::<ddrill::Error>() {
            Some(ddrill::Error::QuestionSetMismatch(_)) => EXIT_MISMATCH,
            _ => EXIT_FAILURE,
        };
        Failure(code, e)
    }
}

impl From<ddrill::Error> for Failure {
    fn from(e: ddrill::Error) -> Self {
        anyhow::Error::new(e).into()
    }
}

fn write_lines<T: serde::Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| path.display().to_string())
}

fn document_file(doc_id: &str) -> String {
    let name: String = doc_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{name}.json")
}

fn ingest(args: &IngestArgs) -> anyhow::Result<()> {
    let docs_dir = args.out.join("documents");
    fs::create_dir_all(&docs_dir).with_context(|| docs_dir.display().to_string())?;
    let bytes = fs::read(&args.input).with_context(|| args.input.display().to_string())?;
    let is_md = args.input.extension().is_some_and(|e| e == "md" || e == "markdown");
    let format = match args.format {
        Some(InputFormat::Markdown) => None,
        Some(InputFormat::Qasper) => Some(DatasetFormat::Qasper),
        Some(InputFormat::Hotpot) => Some(DatasetFormat::Hotpot),
        None if is_md => None,
        None => Some(detect_format(&bytes)?),
    };
    let Some(format) = format else {
        let text = String::from_utf8(bytes).context("markdown input is not UTF-8")?;
        let stem = args.input.file_stem().and_then(|s| s.to_str()).unwrap_or("document");
        let doc_id = args.doc_id.as_deref().unwrap_or(stem);
        let doc = parse_markdown_document(&text, doc_id);
        fs::write(docs_dir.join(document_file(doc_id)), doc.to_canonical_json())?;
        println!("1 document, {} paragraphs", doc.paragraph_count());
        return Ok(());
    };
    let ds = load_dataset(&bytes, format)?;
    let mut written = std::collections::BTreeSet::new();
    for doc in ds.tasks.iter().flat_map(|t| &t.documents) {
        if written.insert(doc.doc_id.clone()) {
            fs::write(docs_dir.join(document_file(&doc.doc_id)), doc.to_canonical_json())?;
        }
    }
    let records: Vec<_> = ds.tasks.iter().map(|t| &t.record).collect();
    write_lines(&args.out.join("questions.jsonl"), &records)?;
    write_lines(&args.out.join("warnings.jsonl"), &ds.warnings)?;
    println!(
        "{} documents, {} questions, {} warnings",
        written.len(),
        records.len(),
        ds.warnings.len()
    );
    Ok(())
}

fn print_run(strategy: &str, report: &RunReport, out: &Path) {
    let m = &report.aggregates.overall;
    println!(
        "{strategy}: {} questions, evidence F1 {:.4}, answer F1 {}, {:.2} calls, {:.1} tokens per question",
        m.count,
        m.evidence_f1,
        m.answer_f1.map_or("-".into(), |f| format!("{f:.4}")),
        m.mean_api_calls,
        m.mean_tokens
    );
    println!("wrote {}", out.display());
}

fn run(config: &RunConfig, out: &Path) -> Result<(), Failure> {
    check_strategy(config)?;
    let summary = run_command(config, out)?;
    if summary.warnings > 0 {
        eprintln!("{} load warnings", summary.warnings);
    }
    print_run(&config.strategy, &summary.report, out);
    Ok(())
}

fn read_report(path: &Path) -> anyhow::Result<RunReport> {
    let file = if path.is_dir() {
        path.join("report.json")
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).with_context(|| file.display().to_string())?;
    RunReport::from_json(&text).with_context(|| file.display().to_string())
}

fn pct(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{:.1}%", 100.0 * v))
}

fn opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.4}"))
}

type Column = fn(&Metrics) -> String;

fn compare(args: &CompareArgs) -> Result<(), Failure> {
    let (a, b) = (read_report(&args.a)?, read_report(&args.b)?);
    let r = cost_ratio_report(&a, &b)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&r).map_err(anyhow::Error::new)?);
        return Ok(());
    }
    let rows: [(&str, Column); 7] = [
        ("evidence precision", |m| format!("{:.4}", m.evidence_precision)),
        ("evidence recall", |m| format!("{:.4}", m.evidence_recall)),
        ("evidence F1", |m| format!("{:.4}", m.evidence_f1)),
        ("answer F1", |m| opt(m.answer_f1)),
        ("retrieval calls", |m| format!("{:.2}", m.mean_api_calls)),
        ("retrieval tokens", |m| format!("{:.2}", m.mean_tokens)),
        ("total tokens", |m| format!("{:.2}", m.mean_total_tokens)),
    ];
    println!("{} questions", r.questions);
    println!("{:<20} {:>14} {:>14}", "", a.strategy, b.strategy);
    for (name, f) in rows {
        println!("{name:<20} {:>14} {:>14}", f(&r.a), f(&r.b));
    }
    println!("token ratio {}", pct(r.token_ratio));
    println!("call ratio {}", pct(r.call_ratio));
    println!("F1 retention {}", pct(r.f1_retention));
    Ok(())
}

fn ablate(args: &AblateArgs) -> Result<(), Failure> {
    let config = args.opts.to_config()?;
    check_strategy(&config)?;
    config.validate()?;
    let (tasks, _) = load_tasks(&config)?;
    let ctx = RunContext::from_config(&config)?;
    let out = &args.opts.out;
    match args.kind {
        Ablation::AnonymizeSections => {
            let outcome = anonymize_ablation(&tasks, &ctx, out)?;
            let r = &outcome.ratios;
            println!(
                "anonymized vs original over {} questions: evidence F1 {:.4} vs {:.4}, retention {}",
                r.questions,
                r.a.evidence_f1,
                r.b.evidence_f1,
                pct(r.f1_retention)
            );
        }
        Ablation::ChunkSweep => {
            let grid = if args.grid.is_empty() {
                DEFAULT_CHUNK_GRID.to_vec()
            } else {
                args.grid.clone()
            };
            println!(
                "{:>10} {:>8} {:>8} {:>8} {:>8} {:>10}",
                "chunk", "P", "R", "F1", "calls", "tokens"
            );
            for p in chunk_sweep(&tasks, &ctx, &grid, out)? {
                println!(
                    "{:>10} {:>8.4} {:>8.4} {:>8.4} {:>8.2} {:>10.1}",
                    p.chunk_size,
                    p.evidence_precision,
                    p.evidence_recall,
                    p.evidence_f1,
                    p.mean_api_calls,
                    p.mean_tokens
                );
            }
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest(args) => Ok(ingest(&args)?),
        Command::Run(args) => run(&args.opts.to_config()?, &args.opts.out),
        Command::Compare(args) => compare(&args),
        Command::Ablate(args) => ablate(&args),
        Command::Selfask(args) => {
            let mut config = args.opts.to_config()?;
            config.strategy = format!("selfask:{}", args.inner);
            if !check_strategy(&config)?.is_selfask() {
                return Err(anyhow::anyhow!("not a self-ask strategy").into());
            }
            run(&config, &args.opts.out)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_env("DDRILL_LOG").unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
