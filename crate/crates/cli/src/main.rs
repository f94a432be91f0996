use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use vizmet_api::{AppState, TokenTable};
use vizmet_cli::demo::{self, DemoOptions};
use vizmet_cli::exit_code;
use vizmet_core::dataset::{
    FilterStatus, GenerationParams, Groundedness, PromptStrategy, RecordFilter, SourceCorpus, Store,
};
use vizmet_core::eval::{
    self, Experiment, ExperimentKind, ExperimentReport, PairwiseAnnotation, RankingAnnotation, RankingMetrics,
};
use vizmet_core::gateway::{Gateway, GatewayConfig};
use vizmet_core::pipeline::{self, BatchReport, BatchStage};
use vizmet_core::recast::{self, NliLabel, PairDraft, PairStatus, Split};

#[derive(Debug, Parser)]
#[command(name = "vizmet", version, about = "Curate visual-metaphor datasets with models and expert review")]
struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "VIZMET_STORE", default_value = "vizmet-store")]
    store: PathBuf,
    /// Gateway configuration (TOML).
    #[arg(long, global = true, env = "VIZMET_CONFIG")]
    config: Option<PathBuf>,
    /// Use offline stub backends instead of the configured ones.
    #[arg(long, global = true)]
    stub: bool,
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Add metaphors from a text file (one per line) or re-import a JSONL export.
    Ingest(IngestArgs),
    /// Interactive groundedness screening.
    Screen {
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Generate visual elaborations for screened metaphors.
    Elaborate {
        #[arg(long)]
        limit: usize,
        #[arg(long, value_enum, default_value_t = StrategyArg::Cot)]
        strategy: StrategyArg,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Generate images for validated elaborations.
    Imagine {
        #[arg(long)]
        limit: usize,
    },
    /// Sign off an elaboration, or review the queue interactively without an id.
    Validate {
        id: Option<String>,
        /// Replacement elaboration text.
        #[arg(long, requires = "id")]
        edit: Option<String>,
    },
    /// Accept or reject an image, or review the queue interactively without an id.
    Decide {
        id: Option<String>,
        #[arg(value_enum, requires = "id")]
        decision: Option<DecisionArg>,
    },
    /// Write the dataset or a visual-entailment split as JSONL.
    Export {
        #[command(subcommand)]
        what: ExportCommand,
    },
    /// Entailment pairs, labels and splits.
    Recast {
        #[command(subcommand)]
        action: RecastCommand,
    },
    /// Human-evaluation experiments.
    Experiment {
        #[command(subcommand)]
        action: ExperimentCommand,
    },
    /// Dataset size statistics.
    Stats {
        /// Count every record, not only published ones.
        #[arg(long)]
        all: bool,
    },
    /// Run the annotation HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Rater token file: `rater_id token [expiry]` per line.
        #[arg(long, env = "VIZMET_TOKENS")]
        tokens: PathBuf,
    },
    /// Offline end-to-end run with stub backends and scripted decisions.
    StubDemo {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "stub-demo")]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        metaphors: usize,
    },
}

#[derive(Debug, Args)]
struct IngestArgs {
    file: PathBuf,
    /// Source corpus of a plain-text file.
    #[arg(long, required_unless_present = "jsonl")]
    source: Option<String>,
    /// Treat the file as a dataset export.
    #[arg(long)]
    jsonl: bool,
    /// Directory holding the images referenced by a JSONL export.
    #[arg(long, requires = "jsonl")]
    blobs: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Cot,
    Completion,
}

impl From<StrategyArg> for PromptStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Cot => PromptStrategy::CoT,
            StrategyArg::Completion => PromptStrategy::Completion,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DecisionArg {
    Accept,
    Reject,
}

impl From<DecisionArg> for FilterStatus {
    fn from(d: DecisionArg) -> Self {
        match d {
            DecisionArg::Accept => FilterStatus::Accepted,
            DecisionArg::Reject => FilterStatus::Rejected,
        }
    }
}

#[derive(Debug, Subcommand)]
enum ExportCommand {
    /// Published records (or every record with --all).
    Dataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        all: bool,
    },
    /// One visual-entailment split; needs `recast split` first.
    Ve {
        #[arg(long)]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum RecastCommand {
    /// Add pair drafts from JSONL (`metaphor_id`, `hypothesis`, `suggested`, `authored`).
    Add { file: PathBuf },
    /// Record one rater's label on a pair.
    Label {
        pair: String,
        #[arg(long)]
        rater: String,
        #[arg(long)]
        label: String,
    },
    /// Majority-vote gold labels for every open pair with enough labels.
    Finalize,
    /// Seeded train/dev/test assignment over metaphors with pairs.
    Split {
        #[arg(long, value_delimiter = ',', num_args = 3)]
        sizes: Vec<usize>,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
enum ExperimentCommand {
    /// Register an experiment from a JSON definition.
    Create {
        file: PathBuf,
    },
    List,
    /// Aggregate metrics from the store, or from an annotation JSONL with --replay.
    Metrics {
        id: String,
        #[arg(long)]
        replay: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce(&T) -> String) -> Result<()> {
    let mut out = io::stdout().lock();
    if json {
        serde_json::to_writer(&mut out, value)?;
        writeln!(out)?;
    } else {
        writeln!(out, "{}", human(value))?;
    }
    Ok(())
}

fn gateway(cli: &Cli) -> Result<Gateway> {
    let cfg = match (&cli.config, cli.stub) {
        (_, true) => GatewayConfig::stub(0),
        (Some(path), false) => GatewayConfig::load(path)?,
        (None, false) => bail!(vizmet_core::Error::Config("no gateway config; pass --config or --stub".into())),
    };
    Ok(Gateway::from_config(&cfg)?)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| path.display().to_string())?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| vizmet_core::Error::InvalidInput(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(value);
    }
    Ok(out)
}

fn batch_summary(r: &BatchReport) -> String {
    let mut s =
        format!("{}: {} selected, {} succeeded, {} failed", r.stage, r.selected, r.succeeded.len(), r.failed.len());
    if r.image_shortfall > 0 {
        s.push_str(&format!(", {} images short", r.image_shortfall));
    }
    for f in &r.failed {
        s.push_str(&format!("\n  {} [{}] {}", f.metaphor_id, f.code, f.error));
    }
    s
}

fn finish_batch(json: bool, report: BatchReport) -> Result<()> {
    emit(json, &report, batch_summary)?;
    match report.failed.first() {
        Some(f) if f.code == "gateway" || f.code == "parse_exhausted" || f.code == "io" => {
            Err(vizmet_core::Error::Io(io::Error::other(format!("{} records failed", report.failed.len()))).into())
        }
        Some(_) => bail!(vizmet_core::Error::Validation(format!("{} records failed", report.failed.len()))),
        None => Ok(()),
    }
}

/// Reads one trimmed answer; `None` at end of input.
fn prompt(question: &str) -> Result<Option<String>> {
    print!("{question}");
    io::stdout().flush()?;
    let mut line = String::new();
    if io::stdin().lock().read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim().to_owned()))
}

fn run(cli: Cli) -> Result<()> {
    let json = cli.json;
    if let Command::StubDemo { seed, out, metaphors } = &cli.command {
        let opts = DemoOptions { metaphors: *metaphors, ..DemoOptions::new(*seed) };
        let report = demo::run(out, &opts)?;
        return emit(json, &report, |r| {
            format!(
                "seed {}: {} metaphors, {} edits, {} images ({} rejected), {} published, {} abandoned\n\
                 export: {} ({} lines)",
                r.seed,
                r.metaphors,
                r.edits,
                r.images,
                r.rejected,
                r.published,
                r.abandoned,
                demo::DemoPaths::under(out).export.display(),
                r.export_lines
            )
        });
    }
    let store = Store::open(&cli.store)?;
    match &cli.command {
        Command::StubDemo { .. } => unreachable!("handled above"),
        Command::Ingest(args) => {
            let report = if args.jsonl {
                let file = fs::File::open(&args.file).with_context(|| args.file.display().to_string())?;
                store.import_jsonl(BufReader::new(file), args.blobs.as_deref())?
            } else {
                let source: SourceCorpus = args.source.as_deref().unwrap_or_default().parse()?;
                let text = fs::read_to_string(&args.file).with_context(|| args.file.display().to_string())?;
                let rows: Vec<(String, SourceCorpus)> = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(|l| (l.to_owned(), source))
                    .collect();
                store.ingest_metaphors(&rows)?
            };
            emit(json, &report, |r| {
                let mut s =
                    format!("{} inserted, {} duplicates, {} rejected", r.inserted, r.duplicates, r.rejected.len());
                for (pos, why) in &r.rejected {
                    s.push_str(&format!("\n  line {}: {why}", pos + 1));
                }
                s
            })
        }
        Command::Screen { limit } => {
            let queue = store.read(pipeline::screening_queue);
            let mut screened = 0;
            for task in queue.into_iter().take(limit.unwrap_or(usize::MAX)) {
                println!("\n{}", task.metaphor.text);
                let verdict = loop {
                    match prompt("visual? [y]es / [n]o / [s]kip / [q]uit: ")?.as_deref() {
                        Some("y") => break Some(Groundedness::Visual),
                        Some("n") => break Some(Groundedness::NonVisual),
                        Some("s") => break None,
                        Some("q") | None => {
                            println!("{screened} screened");
                            return Ok(());
                        }
                        _ => continue,
                    }
                };
                if let Some(v) = verdict {
                    pipeline::screen_groundedness(&store, &task.metaphor.id, v, "cli", Some(task.version))?;
                    screened += 1;
                }
            }
            println!("{screened} screened");
            Ok(())
        }
        Command::Elaborate { limit, strategy, temperature } => {
            let gw = gateway(&cli)?;
            let mut params = GenerationParams::default();
            if let Some(t) = temperature {
                params.temperature = *t;
            }
            params.model_id = gw.text_config().model_id.clone();
            params.validate()?;
            let stage = BatchStage::Elaborate { strategy: (*strategy).into(), params };
            finish_batch(json, pipeline::run_batch(&store, &gw, &stage, *limit, "cli"))
        }
        Command::Imagine { limit } => {
            let gw = gateway(&cli)?;
            finish_batch(json, pipeline::run_batch(&store, &gw, &BatchStage::Imagine, *limit, "cli"))
        }
        Command::Validate { id: Some(id), edit } => {
            let elab = pipeline::validate_elaboration(&store, id, edit.as_deref(), "cli", None)?;
            emit(json, &elab, |e| format!("{} validated{}", e.id, if e.edited { " with edits" } else { "" }))
        }
        Command::Validate { id: None, .. } => {
            for task in store.read(pipeline::validation_queue) {
                println!(
                    "\n{}\n  objects: {}\n  meaning: {}\n  {}",
                    task.metaphor,
                    task.elaboration.objects.join(", "),
                    task.elaboration.implicit_meaning,
                    task.elaboration.elaboration_text
                );
                let edit = match prompt("[a]ccept / [e]dit / [s]kip / [q]uit: ")?.as_deref() {
                    Some("a") => None,
                    Some("e") => match prompt("new text: ")? {
                        Some(t) => Some(t),
                        None => return Ok(()),
                    },
                    Some("q") | None => return Ok(()),
                    _ => continue,
                };
                pipeline::validate_elaboration(
                    &store,
                    &task.elaboration.id,
                    edit.as_deref(),
                    "cli",
                    Some(task.version),
                )?;
            }
            Ok(())
        }
        Command::Decide { id: Some(id), decision } => {
            let status = decision.map(FilterStatus::from).context("missing decision")?;
            let d = pipeline::decide_image(&store, id, status, "cli", None)?;
            emit(json, &d, |d| format!("{} {}; metaphor is {}", d.image.id, d.image.filter_status.as_str(), d.state))
        }
        Command::Decide { id: None, .. } => {
            for task in store.read(pipeline::image_queue) {
                let path = store.blobs().path(&task.image.image_ref);
                println!("\n{}\n  {}\n  image: {}", task.metaphor, task.elaboration_text, path.display());
                let status = match prompt("[a]ccept / [r]eject / [s]kip / [q]uit: ")?.as_deref() {
                    Some("a") => FilterStatus::Accepted,
                    Some("r") => FilterStatus::Rejected,
                    Some("q") | None => return Ok(()),
                    _ => continue,
                };
                pipeline::decide_image(&store, &task.image.id, status, "cli", None)?;
            }
            Ok(())
        }
        Command::Export { what: ExportCommand::Dataset { out, all } } => {
            let filter = if *all { RecordFilter::all() } else { RecordFilter::published() };
            let lines = store.export_jsonl(BufWriter::new(fs::File::create(out)?), &filter)?;
            let meta = serde_json::json!({ "kind": "dataset", "filter": filter, "records": lines,
                "stats": store.dataset_stats(&filter) });
            fs::write(sidecar(out), serde_json::to_vec_pretty(&meta)?)?;
            emit(json, &meta, |_| format!("{lines} records written to {}", out.display()))
        }
        Command::Export { what: ExportCommand::Ve { split, out } } => {
            let split: Split = split.parse()?;
            let (records, report) = store.read(|d| recast::export_ve(d, split))?;
            recast::write_ve_jsonl(BufWriter::new(fs::File::create(out)?), &records)?;
            fs::write(sidecar(out), serde_json::to_vec_pretty(&report)?)?;
            emit(json, &report, |r| {
                format!(
                    "{} {split} pairs written to {} (seed {}, {} unresolved and {} open excluded)",
                    r.records,
                    out.display(),
                    r.seed,
                    r.unresolved_excluded,
                    r.open_excluded
                )
            })
        }
        Command::Recast { action } => recast_command(&store, json, action),
        Command::Experiment { action } => experiment_command(&store, json, action),
        Command::Stats { all } => {
            let filter = if *all { RecordFilter::all() } else { RecordFilter::published() };
            let stats = store.dataset_stats(&filter);
            emit(json, &stats, |s| format!("{{{}, {}, {:?}}}", s.n_metaphors, s.n_images, s.avg_images_per_metaphor))
        }
        Command::Serve { port, host, tokens } => {
            let tokens = TokenTable::load(tokens)?;
            let state = AppState::new(store, tokens);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(vizmet_api::serve(SocketAddr::new(*host, *port), state))?;
            Ok(())
        }
    }
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn recast_command(store: &Store, json: bool, action: &RecastCommand) -> Result<()> {
    match action {
        RecastCommand::Add { file } => {
            let drafts: Vec<PairDraft> = read_jsonl(file)?;
            let pairs = recast::add_pairs(store, drafts)?;
            emit(json, &pairs, |p| format!("{} pairs added", p.len()))
        }
        RecastCommand::Label { pair, rater, label } => {
            let label: NliLabel = label.parse()?;
            let p = recast::collect_label(store, pair, rater, label)?;
            emit(json, &p, |p| format!("{}: {} labels", p.id, p.rater_labels.len()))
        }
        RecastCommand::Finalize => {
            let ready: Vec<String> = store.read(|d| {
                d.pairs
                    .values()
                    .filter(|p| p.status == PairStatus::Open && p.rater_labels.len() >= recast::MIN_GOLD_LABELS)
                    .map(|p| p.id.clone())
                    .collect()
            });
            let pairs = ready.iter().map(|id| recast::finalize_gold(store, id)).collect::<Result<Vec<_>, _>>()?;
            emit(json, &pairs, |p| {
                let resolved = p.iter().filter(|x| x.status == PairStatus::Resolved).count();
                format!("{} finalized: {resolved} resolved, {} unresolved", p.len(), p.len() - resolved)
            })
        }
        RecastCommand::Split { sizes, seed } => {
            let a = recast::assign_splits(store, (sizes[0], sizes[1], sizes[2]), *seed)?;
            emit(json, &a, |a| format!("split {:?} with seed {}", a.sizes, a.seed))
        }
    }
}

fn experiment_command(store: &Store, json: bool, action: &ExperimentCommand) -> Result<()> {
    match action {
        ExperimentCommand::Create { file } => {
            let text = fs::read_to_string(file).with_context(|| file.display().to_string())?;
            let exp: Experiment =
                serde_json::from_str(&text).map_err(|e| vizmet_core::Error::InvalidInput(e.to_string()))?;
            let exp = eval::create_experiment(store, exp)?;
            emit(json, &exp, |e| {
                format!("experiment {} created: {} items, {} raters", e.id, e.items.len(), e.raters.len())
            })
        }
        ExperimentCommand::List => {
            let list = eval::list_experiments(store);
            emit(json, &list, |l| {
                l.iter()
                    .map(|e| format!("{} {:?} {} items", e.id, e.kind, e.items.len()))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        ExperimentCommand::Metrics { id, replay } => {
            let report = match replay {
                None => eval::experiment_report(store, id)?,
                Some(path) => {
                    let exp = store.read(|d| d.experiment(id).map(|s| s.experiment.clone()))?;
                    replay_report(&exp, path)?
                }
            };
            emit(json, &report, |r| serde_json::to_string_pretty(r).unwrap_or_default())
        }
    }
}

/// Metrics over annotations read from a file instead of the store.
fn replay_report(exp: &Experiment, path: &Path) -> Result<ExperimentReport> {
    Ok(match exp.kind {
        ExperimentKind::Ranking => {
            let anns: Vec<RankingAnnotation> = read_jsonl(path)?;
            for a in &anns {
                exp.validate_ranking(a)?;
            }
            ExperimentReport::Ranking(RankingMetrics::compute(exp, &anns)?)
        }
        ExperimentKind::Pairwise => {
            let anns: Vec<PairwiseAnnotation> = read_jsonl(path)?;
            for a in &anns {
                exp.validate_pairwise(a)?;
            }
            ExperimentReport::pairwise(exp, &anns)?
        }
    })
}
