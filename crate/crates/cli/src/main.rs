//! `speckg` command line: build a knowledge graph, ask questions, run the
//! benchmark and check replay determinism.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use speckg_core::config::RunConfig;
use speckg_core::eval::{load_dataset, run_benchmark, EvalReport};
use speckg_core::gateway::{Gateway, GatewayMode};
use speckg_core::ingest::{ingest_document, write_corpus_files};
use speckg_core::kg::{self, ChipKg};
use speckg_core::reasoning::{self, Flag};
use speckg_core::retrieval::GraphView;
use tracing::info;
use tracing_subscriber::filter::LevelFilter;

#[derive(Parser)]
#[command(name = "speckg", version, about = "Specification knowledge graph and multi-hop question answering")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Gateway mode.
    #[arg(long, global = true)]
    mode: Option<GatewayMode>,
    /// Fixture file for record and replay modes.
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    /// Where the effective config is written.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Questions evaluated in parallel; 0 picks the core count.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value = "info")]
    log_level: LevelFilter,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a specification and write the graph store.
    BuildKg {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer one question against a stored graph.
    Query {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        question: String,
        /// Writes thoughts and retrieval logs here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score a QA dataset against a stored graph.
    Eval {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        judge_reps: Option<usize>,
        /// JSON report; the text table goes next to it with a .txt extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the graph and evaluate in one go.
    Bench(BenchArgs),
    /// Runs the bench twice in replay mode and compares the reports.
    ReplayVerify(BenchArgs),
}

#[derive(Args, Clone)]
struct BenchArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    judge_reps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Usage or configuration problem: exit 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .json()
        .with_max_level(cli.global.log_level)
        .with_writer(std::io::stderr)
        .init();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            let usage = e.downcast_ref::<UsageError>().is_some();
            tracing::error!(error = format!("{e:#}"), "command failed");
            eprintln!("error: {e:#}");
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Defaults, then the config file, then flags. `output_dir`, when given,
/// replaces the configured run directory unless `--run-dir` is set.
fn effective_config(g: &Global, output_dir: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path).map_err(|e| usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(dir) = g.run_dir.as_deref().or(output_dir) {
        cfg.run_dir = dir.to_path_buf();
    }
    if let Some(mode) = g.mode {
        cfg.gateway.mode = mode;
    }
    if let Some(f) = &g.fixtures {
        cfg.gateway.fixture_path = Some(f.clone());
    }
    if let Some(jobs) = g.jobs {
        cfg.eval.jobs = jobs;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn gateway(cfg: &RunConfig) -> Result<Gateway> {
    cfg.build_gateway().map_err(|e| usage(e.to_string()))
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match &cli.command {
        Command::BuildKg { spec, out } => {
            let cfg = effective_config(g, Some(out))?;
            let text = read_spec(spec)?;
            cfg.persist(Some(text.as_bytes()))?;
            build(&cfg, &gateway(&cfg)?, spec, &text, out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Query { kg, question, trace } => {
            let cfg = effective_config(g, None)?;
            cfg.persist(None)?;
            let graph = load_kg(kg)?;
            let gw = gateway(&cfg)?;
            let view = GraphView::new(&graph);
            let record = reasoning::run(&gw, &graph, &view, question, &cfg.reasoning, &cfg.retrieval_config(), 0);
            if let Some(path) = trace {
                write_json(path, &Trace::from(&record))?;
            }
            emit(&format!("{}\n", serde_json::to_string(&record)?))?;
            if record.flags.contains(&Flag::Error) {
                bail!("{}", record.error.as_deref().unwrap_or("reasoning failed"));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { kg, dataset, runs, judge_reps, out } => {
            let mut cfg = effective_config(g, Some(out.parent().unwrap_or(Path::new("."))))?;
            override_counts(&mut cfg, *runs, *judge_reps)?;
            cfg.persist(None)?;
            let graph = load_kg(kg)?;
            let report = evaluate(&cfg, &gateway(&cfg)?, &graph, dataset)?;
            write_report(&report, out)?;
            emit(&report.to_table())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench(args) => {
            let mut cfg = effective_config(g, Some(&args.out))?;
            override_counts(&mut cfg, args.runs, args.judge_reps)?;
            let report = bench(&cfg, args)?;
            emit(&report.to_table())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ReplayVerify(args) => replay_verify(g, args),
    }
}

fn override_counts(cfg: &mut RunConfig, runs: Option<usize>, judge_reps: Option<usize>) -> Result<()> {
    if let Some(r) = runs {
        cfg.eval.runs = r;
    }
    if let Some(r) = judge_reps {
        cfg.eval.judge_reps = r;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))
}

fn read_spec(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_kg(dir: &Path) -> Result<ChipKg> {
    kg::load(dir).with_context(|| format!("loading graph from {}", dir.display()))
}

fn build(cfg: &RunConfig, gw: &Gateway, spec: &Path, text: &str, out: &Path) -> Result<ChipKg> {
    let started = Instant::now();
    let doc_id = spec
        .file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .unwrap_or("spec");
    let corpus = ingest_document(gw, doc_id, text, &cfg.ingest)?;
    let graph = kg::build_kg(gw, &corpus)?;
    let manifest = kg::save(&graph, out)?;
    write_corpus_files(out, &corpus)?;
    info!(
        passages = manifest.counts.passages,
        entities = manifest.counts.entities,
        triples = manifest.counts.triples,
        skipped_sentences = corpus.skipped.len(),
        elapsed_ms = started.elapsed().as_millis() as u64,
        out = %out.display(),
        "graph written"
    );
    Ok(graph)
}

fn evaluate(cfg: &RunConfig, gw: &Gateway, graph: &ChipKg, dataset: &Path) -> Result<EvalReport> {
    let items = load_dataset(dataset)?;
    let started = Instant::now();
    let report = run_benchmark(gw, graph, &items, &cfg.eval, &cfg.reasoning, &cfg.retrieval_config())?;
    info!(
        items = items.len(),
        excluded = report.excluded.len(),
        overall_f1 = report.overall_f1,
        system_recall = report.system_recall_at_k,
        elapsed_ms = started.elapsed().as_millis() as u64,
        "evaluation finished"
    );
    Ok(report)
}

fn bench(cfg: &RunConfig, args: &BenchArgs) -> Result<EvalReport> {
    let text = read_spec(&args.spec)?;
    cfg.persist(Some(text.as_bytes()))?;
    let gw = gateway(cfg)?;
    let graph = build(cfg, &gw, &args.spec, &text, &args.out.join("kg"))?;
    let report = evaluate(cfg, &gw, &graph, &args.dataset)?;
    write_report(&report, &args.out.join("report.json"))?;
    Ok(report)
}

const REPORT_FILES: &[&str] = &["report.json", "report.txt"];

fn replay_verify(g: &Global, args: &BenchArgs) -> Result<ExitCode> {
    let mut results = Vec::new();
    for name in ["run-a", "run-b"] {
        let out = args.out.join(name);
        let mut cfg = effective_config(g, Some(&out))?;
        cfg.run_dir = out.clone();
        if cfg.gateway.mode != GatewayMode::Replay {
            return Err(usage("replay-verify needs gateway mode replay (set --mode replay or gateway.mode)"));
        }
        override_counts(&mut cfg, args.runs, args.judge_reps)?;
        let run_args = BenchArgs { out: out.clone(), ..args.clone() };
        bench(&cfg, &run_args)?;
        results.push(out);
    }
    let mut identical = true;
    for file in REPORT_FILES {
        let a = fs::read(results[0].join(file))?;
        let b = fs::read(results[1].join(file))?;
        let same = a == b;
        identical &= same;
        info!(file, identical = same, bytes = a.len(), "compared reports");
    }
    emit(if identical { "reports identical\n" } else { "reports differ\n" })?;
    Ok(if identical { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

/// Writes to stdout; a reader that went away is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    write_json(path, report)?;
    let table = path.with_extension("txt");
    fs::write(&table, report.to_table()).with_context(|| format!("writing {}", table.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct Trace<'a> {
    question: &'a str,
    rounds_used: usize,
    flags: Vec<Flag>,
    thoughts: &'a [String],
    retrieval_log: &'a [reasoning::RetrievalLogEntry],
}

impl<'a> From<&'a reasoning::AnswerRecord> for Trace<'a> {
    fn from(r: &'a reasoning::AnswerRecord) -> Self {
        Trace {
            question: &r.question,
            rounds_used: r.rounds_used,
            flags: r.flags.iter().copied().collect(),
            thoughts: &r.thoughts,
            retrieval_log: &r.retrieval_log,
        }
    }
}
