use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use comfy_table::presets::ASCII_MARKDOWN;
use comfy_table::Table;
use log::warn;
use serde::Serialize;
use thiserror::Error;

use tablekit::bench::{
    ingest_pubtabnet, ingest_scitsr, load_bench_samples, run_benchmark, write_bench_outputs, BenchError, IngestOutcome,
    IngestedTable,
};
use tablekit::config::{ConfigError, RunConfig};
use tablekit::demo::{build_demo_corpus, DemoError, DemoOptions};
use tablekit::gateway::{GatewayError, HttpEndpoint, RecordingModel, VisionModel};
use tablekit::imaging::{degrade, ImagingError, Scenario, TableImage, ToolId, Toolkit};
use tablekit::pipeline::{load_samples, run_batch, summarize, write_outputs, Pipeline, PipelineError, RunMode, Sample};
use tablekit::retrieval::{NeighborInput, NeighborStore, RetrievalError, StoreMeta, STORE_FORMAT_VERSION};
use tablekit::table::{
    logical_to_matrix, matrix_to_markup, parse_markup, read_ground_truth, write_ground_truth, GroundTruthRecord,
    LogicalTable, MarkupTree, ParseMode, TableError,
};
use tablekit::teds::{teds_optional, TedsMode};

/// Prints a line to stdout, ignoring a closed pipe.
macro_rules! emit {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

const EFFECTIVE_CONFIG: &str = "effective_config.toml";
const RECORDED_SCRIPT: &str = "recorded_script.jsonl";

fn long_version() -> &'static str {
    let text = format!(
        "{}\nneighbor store format {}\nground truth format: JSONL, one record per line",
        env!("CARGO_PKG_VERSION"),
        STORE_FORMAT_VERSION
    );
    Box::leak(text.into_boxed_str())
}

/// Table recognition with neighbor-guided image preprocessing, benchmarks
/// and scoring.
#[derive(Debug, Parser)]
#[command(name = "tablekit", version, long_version = long_version())]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Settings that take precedence over the config file.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replay model responses from this JSONL script.
    #[arg(long, global = true)]
    mock: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible endpoint.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, global = true)]
    api_key_env: Option<String>,
    /// Maximum tools per plan.
    #[arg(short = 'L', long = "max-plan-len", global = true)]
    max_plan_len: Option<usize>,
    /// Number of candidate plans.
    #[arg(short = 'N', long = "num-plans", global = true)]
    num_plans: Option<usize>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Process at most this many samples.
    #[arg(long, global = true)]
    limit: Option<usize>,
    #[arg(long, global = true, value_enum)]
    ablation: Option<Ablation>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Ablation {
    None,
    NoExp,
    NoRef,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DatasetKind {
    Pubtabnet,
    Scitsr,
    /// Ground-truth JSONL as written by this tool.
    Canonical,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a labeled dataset to ground-truth JSONL and index it as a
    /// neighbor store.
    Ingest {
        #[arg(long, value_enum)]
        kind: DatasetKind,
        /// Annotation file (pubtabnet, canonical) or directory (scitsr).
        #[arg(long)]
        input: PathBuf,
    },
    /// Apply degradation scenarios to images.
    Degrade {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Scenario codes (BL, UE, OE, UB, MB, TB, T20, T40); all when omitted.
        #[arg(long, num_args = 1..)]
        scenario: Vec<String>,
    },
    /// Recognize tables in a labeled or unlabeled corpus.
    Run {
        /// Ground-truth JSONL listing the test images.
        #[arg(long)]
        input: PathBuf,
        /// Neighbor store directory; not needed for direct recognition.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Record every model response into a replayable script.
        #[arg(long)]
        record: bool,
    },
    /// Run the hierarchical table-understanding tasks.
    Bench {
        #[arg(long)]
        input: PathBuf,
    },
    /// Score predicted markup against ground truth.
    Score {
        /// JSONL with `id` and `markup`, or run reports.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Print the markup for every record of a ground-truth file.
    Convert {
        #[arg(long)]
        input: PathBuf,
    },
    /// Write a small synthetic corpus with a recorded mock script.
    DemoCorpus {
        #[arg(long, default_value_t = 10)]
        tests: usize,
        #[arg(long, default_value_t = 16)]
        neighbors: usize,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ok,
    Partial,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<Status, CliError> {
    let o = &cli.overrides;
    let cfg = effective_config(o)?;
    match &cli.command {
        Command::Ingest { kind, input } => cmd_ingest(&cfg, *kind, input, out_dir(o)?),
        Command::Degrade { input, scenario } => cmd_degrade(&cfg, input, scenario, out_dir(o)?),
        Command::Run { input, store, record } => cmd_run(&cfg, input, store.as_deref(), *record, out_dir(o)?),
        Command::Bench { input } => cmd_bench(&cfg, input, out_dir(o)?),
        Command::Score { pred, gold } => cmd_score(&cfg, pred, gold, out_dir(o)?),
        Command::Convert { input } => cmd_convert(&cfg, input, o.out.as_deref()),
        Command::DemoCorpus { tests, neighbors } => {
            let opts = DemoOptions {
                tests: *tests,
                neighbors: *neighbors,
                seed: o.seed.unwrap_or(DemoOptions::default().seed),
            };
            let out = out_dir(o)?;
            let summary = build_demo_corpus(out, &opts)?;
            emit!(
                "demo corpus in {}: {} test samples, {} neighbors, {} scripted responses",
                out.display(),
                summary.tests,
                summary.neighbors,
                summary.script_entries
            );
            Ok(Status::Ok)
        }
    }
}

fn out_dir(o: &Overrides) -> Result<&Path, CliError> {
    o.out
        .as_deref()
        .ok_or_else(|| CliError::Usage("this command needs --out <DIR>".into()))
}

fn effective_config(o: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(url) = &o.endpoint {
        let previous = cfg.gateway.endpoint.take();
        cfg.gateway.endpoint = Some(HttpEndpoint {
            base_url: url.clone(),
            model: o
                .model
                .clone()
                .or_else(|| previous.as_ref().map(|p| p.model.clone()))
                .unwrap_or_else(|| "gpt-4o".into()),
            api_key_env: o
                .api_key_env
                .clone()
                .or_else(|| previous.as_ref().and_then(|p| p.api_key_env.clone()))
                .or_else(|| Some("OPENAI_API_KEY".into())),
            timeout_secs: previous.map_or(120, |p| p.timeout_secs),
        });
        if o.mock.is_none() {
            cfg.gateway.mock_script = None;
        }
    } else if let Some(endpoint) = cfg.gateway.endpoint.as_mut() {
        if let Some(m) = &o.model {
            endpoint.model = m.clone();
        }
        if let Some(k) = &o.api_key_env {
            endpoint.api_key_env = Some(k.clone());
        }
    }
    if let Some(m) = &o.mock {
        cfg.gateway.mock_script = Some(m.clone());
    }
    if let Some(l) = o.max_plan_len {
        cfg.pipeline.max_plan_len = l;
    }
    if let Some(n) = o.num_plans {
        cfg.pipeline.num_plans = n;
    }
    if let Some(w) = o.workers {
        cfg.workers = Some(w);
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
        cfg.bench.seed = s;
    }
    if let Some(l) = o.limit {
        cfg.limit = Some(l);
    }
    match o.ablation {
        None | Some(Ablation::None) => {}
        Some(Ablation::NoExp) => cfg.pipeline.experience_enabled = false,
        Some(Ablation::NoRef) => cfg.pipeline.reflection_enabled = false,
        Some(Ablation::Direct) => cfg.pipeline.mode = RunMode::Direct,
    }
    cfg.pipeline.validate()?;
    Ok(cfg)
}

fn workers(cfg: &RunConfig) -> usize {
    let n = cfg.effective_workers();
    if cfg.gateway.is_live() {
        n.min(cfg.gateway.max_in_flight.max(1))
    } else {
        n
    }
}

fn prepare_out(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(EFFECTIVE_CONFIG);
    fs::write(&path, cfg.to_toml()).map_err(io_err(&path))
}

fn write_json_pretty(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2}", v * 100.0))
}

fn text_table(header: &[&str]) -> Table {
    let mut t = Table::new();
    t.load_style(ASCII_MARKDOWN).set_header(header.iter().copied());
    t
}

// ---- ingest ----

#[derive(Debug, Serialize)]
struct IngestSummary {
    records: usize,
    skipped: usize,
    indexed: usize,
    not_indexed: Vec<String>,
    regeneration_teds_mean: Option<f64>,
}

fn canonical_tables(path: &Path) -> Result<IngestOutcome, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    let (records, skipped) = read_ground_truth(BufReader::new(file)).map_err(io_err(path))?;
    let mut out = IngestOutcome {
        skipped,
        ..IngestOutcome::default()
    };
    let base = path.parent().unwrap_or(Path::new("."));
    for rec in records {
        match rec.to_table() {
            Ok(table) => out.tables.push(IngestedTable {
                missing_image: !base.join(&rec.image_path).is_file(),
                id: rec.id,
                image_path: rec.image_path,
                table,
                source_markup: rec.markup,
            }),
            Err(e) => {
                out.notes.push(format!("{}: {e}", rec.id));
                out.skipped += 1;
            }
        }
    }
    Ok(out)
}

fn cmd_ingest(cfg: &RunConfig, kind: DatasetKind, input: &Path, out: &Path) -> Result<Status, CliError> {
    if !input.exists() {
        return Err(CliError::Io {
            path: input.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "input does not exist"),
        });
    }
    let (outcome, traits) = match kind {
        DatasetKind::Pubtabnet => (ingest_pubtabnet(input)?, BTreeMap::new()),
        DatasetKind::Scitsr => (ingest_scitsr(input)?, BTreeMap::new()),
        DatasetKind::Canonical => {
            let file = File::open(input).map_err(io_err(input))?;
            let (records, _) = read_ground_truth(BufReader::new(file)).map_err(io_err(input))?;
            let traits: BTreeMap<String, String> =
                records.into_iter().filter_map(|r| Some((r.id, r.traits?))).collect();
            (canonical_tables(input)?, traits)
        }
    };
    let base_dir = if kind == DatasetKind::Scitsr {
        input.to_path_buf()
    } else {
        input.parent().unwrap_or(Path::new(".")).to_path_buf()
    };
    let base = fs::canonicalize(if base_dir.as_os_str().is_empty() {
        Path::new(".")
    } else {
        &base_dir
    })
    .map_err(io_err(&base_dir))?;
    prepare_out(out, cfg)?;

    let mut records = Vec::new();
    let mut inputs = Vec::new();
    let mut not_indexed = Vec::new();
    let mut regen = Vec::new();
    for t in &outcome.tables {
        let image_path = base.join(&t.image_path);
        let mut rec = t.to_ground_truth();
        rec.image_path = image_path.clone();
        rec.traits = traits.get(&t.id).cloned();
        records.push(rec.clone());
        regen.extend(t.regeneration_teds());
        if t.missing_image {
            not_indexed.push(format!("{}: image not found", t.id));
            continue;
        }
        match TableImage::load(&image_path, t.id.clone()) {
            Ok(img) => inputs.push((
                NeighborInput {
                    id: t.id.clone(),
                    image_path,
                    gold_markup: matrix_to_markup(&logical_to_matrix(&t.table)?),
                    traits: rec.traits.clone(),
                },
                img,
            )),
            Err(e) => not_indexed.push(format!("{}: {e}", t.id)),
        }
    }
    let gt_path = out.join("gt.jsonl");
    let mut buf = Vec::new();
    write_ground_truth(&mut buf, &records).map_err(io_err(&gt_path))?;
    fs::write(&gt_path, buf).map_err(io_err(&gt_path))?;

    let (store, skipped) = NeighborStore::build(inputs, cfg.retrieval.orb, cfg.retrieval.matching)?;
    not_indexed.extend(skipped.into_iter().map(|(id, why)| format!("{id}: {why}")));
    store.save(out.join("store"))?;
    for n in &not_indexed {
        warn!("not indexed: {n}");
    }
    if records.is_empty() {
        warn!("{} contained no usable records", input.display());
    }
    let summary = IngestSummary {
        records: records.len(),
        skipped: outcome.skipped,
        indexed: store.len(),
        not_indexed,
        regeneration_teds_mean: (!regen.is_empty()).then(|| regen.iter().sum::<f64>() / regen.len() as f64),
    };
    write_json_pretty(&out.join("ingest_summary.json"), &summary)?;
    let mut t = text_table(&["records", "skipped", "indexed", "regen TEDS"]);
    t.add_row(vec![
        summary.records.to_string(),
        summary.skipped.to_string(),
        summary.indexed.to_string(),
        fmt_score(summary.regeneration_teds_mean),
    ]);
    emit!("{t}");
    Ok(Status::Ok)
}

// ---- degrade ----

#[derive(Debug, Serialize)]
struct ManifestLine {
    source: PathBuf,
    scenario: Scenario,
    code: &'static str,
    seed: u64,
    output: String,
    digest: String,
}

fn parse_scenarios(codes: &[String]) -> Result<Vec<Scenario>, CliError> {
    if codes.is_empty() {
        return Ok(Scenario::ALL.to_vec());
    }
    codes
        .iter()
        .map(|c| {
            Scenario::ALL
                .into_iter()
                .find(|s| s.code().eq_ignore_ascii_case(c) || s.as_str().eq_ignore_ascii_case(c))
                .ok_or_else(|| CliError::Usage(format!("unknown scenario {c:?}")))
        })
        .collect()
}

fn cmd_degrade(cfg: &RunConfig, inputs: &[PathBuf], codes: &[String], out: &Path) -> Result<Status, CliError> {
    let scenarios = parse_scenarios(codes)?;
    prepare_out(out, cfg)?;
    let mut manifest = Vec::new();
    let mut failures = 0;
    let mut t = text_table(&["image", "scenario", "output"]);
    for input in inputs {
        let stem = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        let img = match TableImage::load(input, stem.clone()) {
            Ok(img) => img,
            Err(e) => {
                eprintln!("{}: {e}", input.display());
                failures += 1;
                continue;
            }
        };
        for &scenario in &scenarios {
            let name = format!("{stem}_{}.png", scenario.code());
            match degrade(&img, scenario, cfg.seed, &cfg.degrade).and_then(|d| {
                d.save(out.join(&name))?;
                Ok(d.digest())
            }) {
                Ok(digest) => {
                    t.add_row(vec![
                        input.display().to_string(),
                        scenario.code().to_string(),
                        name.clone(),
                    ]);
                    manifest.push(ManifestLine {
                        source: input.clone(),
                        scenario,
                        code: scenario.code(),
                        seed: cfg.seed,
                        output: name,
                        digest,
                    });
                }
                Err(e) => {
                    eprintln!("{} {}: {e}", input.display(), scenario.code());
                    failures += 1;
                }
            }
        }
    }
    write_jsonl(&out.join("manifest.jsonl"), &manifest)?;
    emit!("{t}");
    Ok(if failures == 0 { Status::Ok } else { Status::Partial })
}

// ---- run ----

fn limited<T>(mut items: Vec<T>, limit: Option<usize>) -> Vec<T> {
    if let Some(n) = limit {
        items.truncate(n);
    }
    items
}

fn cmd_run(cfg: &RunConfig, input: &Path, store: Option<&Path>, record: bool, out: &Path) -> Result<Status, CliError> {
    let (samples, skipped) = load_samples(input)?;
    let samples = limited(samples, cfg.limit);
    let store = match (store, cfg.pipeline.mode) {
        (Some(dir), _) => NeighborStore::open(dir)?,
        (None, RunMode::Direct) => {
            NeighborStore::from_records(StoreMeta::new(cfg.retrieval.orb, cfg.retrieval.matching), Vec::new())?
        }
        (None, RunMode::Ngtr) => return Err(CliError::Usage("--store is required unless --ablation direct".into())),
    };
    let mut model = cfg.gateway.model()?;
    let recorder = record.then(|| Arc::new(RecordingModel::new(model.clone())));
    if let Some(r) = &recorder {
        model = r.clone() as Arc<dyn VisionModel>;
    }
    let gateway = cfg.gateway.gateway_for(model)?;
    let pipeline = Pipeline::new(gateway, Toolkit::new(cfg.toolkit.clone()), cfg.pipeline.clone())?;
    prepare_out(out, cfg)?;
    let outcomes = run_batch(&pipeline, &samples, &store, workers(cfg))?;
    let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
    let summary = summarize(&reports);
    write_outputs(out, &outcomes, &summary)?;
    if let Some(r) = recorder {
        r.write_script(out.join(RECORDED_SCRIPT))?;
    }

    let mut t = text_table(&["method", "samples", "failed", "skipped", "TEDS", "TEDS-Struct", "calls"]);
    t.add_row(vec![
        method_label(cfg),
        summary.samples.to_string(),
        summary.failed.to_string(),
        skipped.to_string(),
        fmt_score(summary.mean_teds),
        fmt_score(summary.mean_teds_struct),
        summary.model_calls.to_string(),
    ]);
    emit!("{t}");
    if !summary.tool_usage.is_empty() {
        let mut header = vec!["tool usage (%)"];
        header.extend(ToolId::ALL.iter().map(|t| t.as_str()));
        let mut u = text_table(&header);
        let mut row = vec![format!("{} samples", summary.samples_with_tools)];
        row.extend(
            ToolId::ALL
                .iter()
                .map(|t| fmt_score(summary.tool_usage.get(t).copied())),
        );
        u.add_row(row);
        emit!("{u}");
    }
    for (stage, n) in &summary.errors_by_stage {
        eprintln!("{n} sample(s) failed at {stage:?}");
    }
    Ok(if summary.samples > 0 && summary.failed == summary.samples {
        Status::Partial
    } else {
        Status::Ok
    })
}

fn method_label(cfg: &RunConfig) -> String {
    let p = &cfg.pipeline;
    match (p.mode, p.experience_enabled, p.reflection_enabled) {
        (RunMode::Direct, _, _) => "direct".into(),
        (RunMode::Ngtr, true, true) => "ngtr".into(),
        (RunMode::Ngtr, false, true) => "ngtr w/o experience".into(),
        (RunMode::Ngtr, true, false) => "ngtr w/o reflection".into(),
        (RunMode::Ngtr, false, false) => "ngtr w/o experience, reflection".into(),
    }
}

// ---- bench ----

fn cmd_bench(cfg: &RunConfig, input: &Path, out: &Path) -> Result<Status, CliError> {
    let (samples, _) = load_bench_samples(input)?;
    let samples = limited(samples, cfg.limit);
    let gateway = cfg.gateway.build()?;
    prepare_out(out, cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers(cfg))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let report = pool.install(|| run_benchmark(&samples, &cfg.bench, &gateway));
    write_bench_outputs(out, &report)?;
    let s = &report.summary;
    let mut t = text_table(&[
        "task",
        "metric",
        "n",
        "score",
        "n balanced",
        "score balanced",
        "parse fails",
        "errors",
    ]);
    for (kind, agg) in &s.full {
        let bal = s.balanced.get(kind);
        t.add_row(vec![
            kind.to_string(),
            format!("{:?}", kind.metric()),
            agg.count.to_string(),
            fmt_score(Some(agg.mean)),
            bal.map_or(0, |b| b.count).to_string(),
            fmt_score(bal.map(|b| b.mean)),
            agg.parse_failures.to_string(),
            agg.errors.to_string(),
        ]);
    }
    emit!("{t}");
    for n in &s.notes {
        eprintln!("note: {n}");
    }
    let errors: usize = s.full.values().map(|a| a.errors).sum();
    Ok(if errors == 0 { Status::Ok } else { Status::Partial })
}

// ---- score ----

#[derive(Debug, Serialize)]
struct ScoreLine {
    id: String,
    teds: f64,
    teds_struct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Debug, Serialize)]
struct ScoreSummary {
    samples: usize,
    missing: usize,
    unparsed: usize,
    mean_teds: Option<f64>,
    mean_teds_struct: Option<f64>,
}

fn read_predictions(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut preds = BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                warn!("{}:{}: {e}", path.display(), n + 1);
                continue;
            }
        };
        let id = v.get("id").or_else(|| v.get("sample_id")).and_then(|v| v.as_str());
        let markup = v
            .get("markup")
            .or_else(|| v.get("final_markup"))
            .and_then(|v| v.as_str());
        match id {
            Some(id) => {
                preds.insert(id.to_string(), markup.unwrap_or_default().to_string());
            }
            None => warn!("{}:{}: no id", path.display(), n + 1),
        }
    }
    Ok(preds)
}

fn score_one(pred: Option<&str>, gold: &MarkupTree) -> (f64, f64, Option<String>) {
    let (tree, note) = match pred {
        None => (None, Some("no prediction".to_string())),
        Some("") => (None, Some("empty prediction".to_string())),
        Some(text) => match parse_markup(text, ParseMode::Lenient) {
            Ok(p) => (Some(p.tree), None),
            Err(e) => (None, Some(format!("prediction does not parse: {e}"))),
        },
    };
    let score = |mode| teds_optional(tree.as_ref(), Some(gold), mode).map_or(0.0, |s| s.value);
    (score(TedsMode::Full), score(TedsMode::StructOnly), note)
}

fn cmd_score(cfg: &RunConfig, pred: &Path, gold: &Path, out: &Path) -> Result<Status, CliError> {
    let preds = read_predictions(pred)?;
    let (samples, _) = load_samples(gold)?;
    prepare_out(out, cfg)?;
    let mut lines = Vec::new();
    let (mut missing, mut unparsed) = (0, 0);
    for Sample { id, gold, .. } in &samples {
        let Some(gold) = gold else {
            warn!("{id}: no gold markup");
            continue;
        };
        let gold = parse_markup(gold.as_str(), ParseMode::Strict)?.tree;
        let p = preds.get(id).map(String::as_str);
        let (teds, teds_struct, note) = score_one(p, &gold);
        if p.is_none() {
            missing += 1;
        } else if note.is_some() {
            unparsed += 1;
        }
        lines.push(ScoreLine {
            id: id.clone(),
            teds,
            teds_struct,
            note,
        });
    }
    let mean =
        |f: fn(&ScoreLine) -> f64| (!lines.is_empty()).then(|| lines.iter().map(f).sum::<f64>() / lines.len() as f64);
    let summary = ScoreSummary {
        samples: lines.len(),
        missing,
        unparsed,
        mean_teds: mean(|l| l.teds),
        mean_teds_struct: mean(|l| l.teds_struct),
    };
    write_jsonl(&out.join("scores.jsonl"), &lines)?;
    write_json_pretty(&out.join("score_summary.json"), &summary)?;
    let mut t = text_table(&["samples", "missing", "unparsed", "TEDS", "TEDS-Struct"]);
    t.add_row(vec![
        summary.samples.to_string(),
        missing.to_string(),
        unparsed.to_string(),
        fmt_score(summary.mean_teds),
        fmt_score(summary.mean_teds_struct),
    ]);
    emit!("{t}");
    Ok(if missing + unparsed == 0 {
        Status::Ok
    } else {
        Status::Partial
    })
}

// ---- convert ----

#[derive(Debug, Serialize)]
struct MarkupLine {
    id: String,
    markup: String,
}

fn convert_record(rec: &GroundTruthRecord) -> Result<String, TableError> {
    let table: LogicalTable = rec.to_table()?;
    Ok(matrix_to_markup(&logical_to_matrix(&table)?).into_string())
}

fn cmd_convert(cfg: &RunConfig, input: &Path, out: Option<&Path>) -> Result<Status, CliError> {
    let file = File::open(input).map_err(io_err(input))?;
    let (records, mut failures) = read_ground_truth(BufReader::new(file)).map_err(io_err(input))?;
    let mut lines = Vec::new();
    for rec in &records {
        match convert_record(rec) {
            Ok(markup) => {
                emit!("{}\t{markup}", rec.id);
                lines.push(MarkupLine {
                    id: rec.id.clone(),
                    markup,
                });
            }
            Err(e) => {
                eprintln!("{}: {e}", rec.id);
                failures += 1;
            }
        }
    }
    if let Some(out) = out {
        prepare_out(out, cfg)?;
        write_jsonl(&out.join("markup.jsonl"), &lines)?;
    }
    Ok(if failures == 0 { Status::Ok } else { Status::Partial })
}
