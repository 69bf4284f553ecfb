use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use recaudit::ingest::{ColumnMap, Format, WorldModelOptions, DEFAULT_BIN_SECONDS, DEFAULT_SMOOTHING};
use recaudit::pipeline::{
    classify_files, evaluate_log_bytes, generate_users, ingest_files, parse_cohort_specs,
    write_atomic, RunConfigFile,
};
use recaudit::riskeval::{ReportOptions, RiskReport};
use recaudit::service::{self, ServiceConfig, DEFAULT_QUEUE_CAPACITY, STORE_ENV};
use recaudit::classify::ClassificationFile;
use recaudit::synthgen::make_marginal_pair;
use recaudit::{Error, Result};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Simulation-based risk audits of recommender algorithms.
#[derive(Parser)]
#[command(name = "recaudit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Interaction log + catalog -> world model.
    Ingest(IngestArgs),
    /// Catalog + taxonomy + lexicon [+ labels] -> classification file.
    Classify(ClassifyArgs),
    /// Synthetic cohorts.
    #[command(subcommand)]
    Cohort(CohortCommand),
    /// Run config -> exposure log.
    Simulate(SimulateArgs),
    /// Exposure log -> risk report.
    Evaluate(EvaluateArgs),
    /// Report rendering.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    interactions_format: Option<Format>,
    /// Rename a source column, e.g. `--column-map user=user_id`.
    #[arg(long = "column-map", value_name = "SOURCE=FIELD", value_parser = parse_mapping)]
    column_map: Vec<(String, String)>,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    catalog_format: Option<Format>,
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
    smoothing: f64,
    #[arg(long, default_value_t = DEFAULT_BIN_SECONDS)]
    bin_seconds: i64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    catalog_format: Option<Format>,
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum CohortCommand {
    /// Cohort spec(s) + classified catalog -> users file.
    Gen(CohortGenArgs),
    /// Cohort spec -> control and perturbed specs.
    MarginalPair(MarginalPairArgs),
}

#[derive(Args)]
struct CohortGenArgs {
    /// One cohort spec or a list of them.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    classification: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MarginalPairArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `simulation.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Take report options from this run config; flags below override them.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    /// Flagged category; repeatable.
    #[arg(long)]
    flagged: Vec<String>,
    /// Cohort pair to compare, `A:B`; repeatable.
    #[arg(long, value_name = "A:B", value_parser = parse_pair)]
    pair: Vec<(String, String)>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Also write the time series as csv.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write the markdown rendering.
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Report -> markdown or csv.
    Render(RenderArgs),
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum RenderFormat {
    Markdown,
    Csv,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: RenderFormat,
    /// Restrict csv output to one cohort.
    #[arg(long)]
    cohort: Option<String>,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, env = STORE_ENV)]
    store: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long, default_value_t = DEFAULT_QUEUE_CAPACITY)]
    queue_capacity: usize,
}

fn parse_mapping(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once('=') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
        _ => Err(format!("expected SOURCE=FIELD, got `{s}`")),
    }
}

fn parse_pair(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once(':') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
        _ => Err(format!("expected A:B, got `{s}`")),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let map: ColumnMap = a.column_map.into_iter().collect();
    if !(a.smoothing >= 0.0 && a.smoothing.is_finite()) {
        return Err(Error::validation("smoothing", "must be >= 0"));
    }
    if a.bin_seconds <= 0 {
        return Err(Error::validation("bin_seconds", "must be > 0"));
    }
    let wm = ingest_files(
        &a.interactions,
        a.interactions_format,
        &map,
        &a.catalog,
        a.catalog_format,
        &a.taxonomy,
        a.labels.as_deref(),
        WorldModelOptions { smoothing: a.smoothing, bin_seconds: a.bin_seconds },
    )?;
    let text = serde_json::to_string_pretty(&wm).expect("world model serializes") + "\n";
    write(&a.out, text.as_bytes())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let c = classify_files(&a.catalog, a.catalog_format, &a.taxonomy, &a.lexicon, a.labels.as_deref())?;
    write(&a.out, c.to_json().as_bytes())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn cohort(c: CohortCommand) -> Result<()> {
    match c {
        CohortCommand::Gen(a) => {
            let specs = parse_cohort_specs(&read(&a.spec)?)?;
            let catalog = ClassificationFile::load(&a.classification)?.catalog()?;
            let users = generate_users(&specs, &catalog, a.seed)?;
            write(&a.out, users.to_json().as_bytes())
        }
        CohortCommand::MarginalPair(a) => {
            let specs = parse_cohort_specs(&read(&a.spec)?)?;
            let [base] = specs.as_slice() else {
                return Err(Error::validation("spec", "expected exactly one cohort spec"));
            };
            let (ctrl, perturbed) = make_marginal_pair(base, &a.target, a.delta)?;
            let text = serde_json::to_string_pretty(&[ctrl, perturbed]).expect("specs serialize") + "\n";
            write(&a.out, text.as_bytes())
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = RunConfigFile::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.simulation.seed = seed;
    }
    let inputs = cfg.load_inputs()?;
    let log = inputs.simulate(&cfg.simulation)?;
    write(&a.out, &log.to_jsonl())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut opts = match &a.config {
        Some(p) => RunConfigFile::load(p)?.report,
        None => ReportOptions::default(),
    };
    if a.window.is_some() {
        opts.window = a.window;
    }
    if !a.flagged.is_empty() {
        opts.flagged = a.flagged;
    }
    if !a.pair.is_empty() {
        opts.cohort_pairs = Some(a.pair);
    }
    if a.epsilon.is_some() {
        opts.epsilon = a.epsilon;
    }
    let bytes = std::fs::read(&a.log).map_err(|e| Error::io(&a.log, e))?;
    let report = evaluate_log_bytes(&bytes, &opts)?;
    write(&a.out, report.to_json().as_bytes())?;
    if let Some(p) = &a.csv {
        write(p, report.timeseries_csv(None)?.as_bytes())?;
    }
    if let Some(p) = &a.markdown {
        write(p, report.render_markdown().as_bytes())?;
    }
    Ok(())
}

fn report(c: ReportCommand) -> Result<()> {
    let ReportCommand::Render(a) = c;
    let report = RiskReport::load(&a.report)?;
    let text = match a.format {
        RenderFormat::Markdown => report.render_markdown(),
        RenderFormat::Csv => report.timeseries_csv(a.cohort.as_deref())?,
    };
    match &a.out {
        Some(p) => write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Runtime(format!("cannot start runtime: {e}")))?;
    rt.block_on(service::serve(ServiceConfig {
        store_root: a.store,
        addr: SocketAddr::new(a.host, a.port),
        parallelism: a.parallelism,
        queue_capacity: a.queue_capacity,
    }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Classify(a) => classify(a),
        Command::Cohort(c) => cohort(c),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(c) => report(c),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_invalid_input() { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}
