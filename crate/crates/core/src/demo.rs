//! Builds a small self-contained corpus for offline runs: rendered tables
//! under every degradation scenario, a neighbor store, test samples with
//! gold labels, and a mock script recorded from [`SimulatedModel`] that
//! covers the full pipeline, its ablations, direct recognition and the
//! benchmark tasks.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bench::{load_bench_samples, run_benchmark, BenchError};
use crate::config::RunConfig;
use crate::gateway::{Gateway, GatewayError, RecordingModel, RetryPolicy};
use crate::imaging::synth::{random_table, render_table, RenderStyle};
use crate::imaging::{degrade, DegradeConfig, ImagingError, Scenario, Toolkit};
use crate::pipeline::{load_samples, run_batch, Pipeline, PipelineConfig, PipelineError, RunMode};
use crate::retrieval::{NeighborInput, NeighborStore, RetrievalError};
use crate::simulate::SimulatedModel;
use crate::table::{
    logical_to_matrix, matrix_to_markup, write_ground_truth, GroundTruthRecord, LogicalTable, TableError,
};

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemoOptions {
    pub tests: usize,
    pub neighbors: usize,
    pub seed: u64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            tests: 10,
            neighbors: 16,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoSummary {
    pub neighbors: usize,
    pub tests: usize,
    pub script_entries: usize,
}

pub const TEST_FILE: &str = "test.jsonl";
pub const NEIGHBOR_FILE: &str = "neighbors.jsonl";
pub const STORE_DIR: &str = "store";
pub const SCRIPT_FILE: &str = "mock_script.jsonl";
pub const CONFIG_FILE: &str = "run.toml";

/// Operator notes for a neighbor degraded by `scenario`.
pub fn scenario_traits(scenario: Scenario) -> &'static str {
    match scenario {
        Scenario::Blur => "blurry scan; text and line edges are soft",
        Scenario::Underexposure => "dark, low-contrast image",
        Scenario::Overexposure => "washed-out image with a grey background",
        Scenario::UnclearBorders => "faint, low-contrast ruling lines",
        Scenario::MissingBorders => "no visible ruling lines between cells",
        Scenario::ThickenedBorders => "heavy, thick ruling lines",
        Scenario::Tilt20 => "table rotated by about 20 degrees",
        Scenario::Tilt40 => "table rotated by about 40 degrees",
    }
}

fn make_table(id: &str, rng: &mut ChaCha8Rng) -> LogicalTable {
    let rows = rng.gen_range(3..=6);
    let cols = rng.gen_range(3..=5);
    random_table(id, rows, cols, 0.25, rng.gen())
}

fn write_sample(
    dir: &Path,
    rel: &Path,
    table: &LogicalTable,
    scenario: Scenario,
    seed: u64,
) -> Result<GroundTruthRecord, DemoError> {
    let clean = render_table(table, &table.id, &RenderStyle::default())?;
    let img = degrade(&clean, scenario, seed, &DegradeConfig::default())?;
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    img.save(&path)?;
    let mut rec = GroundTruthRecord::from_table(table, rel);
    rec.traits = Some(scenario_traits(scenario).to_string());
    Ok(rec)
}

fn write_jsonl(path: &Path, records: &[GroundTruthRecord]) -> Result<(), DemoError> {
    let mut buf = Vec::new();
    write_ground_truth(&mut buf, records)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Config used for runs over the demo corpus.
pub fn demo_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.gateway.mock_script = Some(dir.join(SCRIPT_FILE));
    cfg.gateway.retry = RetryPolicy {
        max_retries: 0,
        initial_backoff_ms: 0,
        max_backoff_ms: 0,
    };
    cfg
}

/// Pipeline variants recorded into the demo mock script.
pub fn demo_variants() -> Vec<PipelineConfig> {
    let base = PipelineConfig::default();
    vec![
        base.clone(),
        PipelineConfig {
            experience_enabled: false,
            ..base.clone()
        },
        PipelineConfig {
            reflection_enabled: false,
            ..base.clone()
        },
        PipelineConfig {
            mode: RunMode::Direct,
            ..base
        },
    ]
}

/// Writes the corpus into `dir` (created if needed) and records the mock
/// script by running every variant against the simulated model.
pub fn build_demo_corpus(dir: &Path, opts: &DemoOptions) -> Result<DemoSummary, DemoError> {
    fs::create_dir_all(dir.join(STORE_DIR))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut tables = Vec::new();

    let mut neighbor_recs = Vec::new();
    for i in 0..opts.neighbors {
        let table = make_table(&format!("nb{i:02}"), &mut rng);
        let scenario = Scenario::ALL[i % Scenario::ALL.len()];
        let rel = Path::new(STORE_DIR).join("images").join(format!("{}.png", table.id));
        neighbor_recs.push(write_sample(dir, &rel, &table, scenario, opts.seed)?);
        tables.push(table);
    }
    let mut inputs = Vec::new();
    for rec in &neighbor_recs {
        let path = dir.join(&rec.image_path);
        let img = crate::imaging::TableImage::load(&path, rec.id.clone())?;
        let gold = matrix_to_markup(&logical_to_matrix(&rec.to_table()?)?);
        inputs.push((
            NeighborInput {
                id: rec.id.clone(),
                image_path: path,
                gold_markup: gold,
                traits: rec.traits.clone(),
            },
            img,
        ));
    }
    let cfg = demo_config(dir);
    let (store, skipped) = NeighborStore::build(inputs, cfg.retrieval.orb, cfg.retrieval.matching)?;
    for (id, why) in &skipped {
        log::warn!("neighbor {id} left out of the demo store: {why}");
    }
    store.save(dir.join(STORE_DIR))?;
    write_jsonl(&dir.join(NEIGHBOR_FILE), &neighbor_recs)?;

    let mut test_recs = Vec::new();
    for i in 0..opts.tests {
        let table = make_table(&format!("t{:02}", i + 1), &mut rng);
        let scenario = Scenario::ALL[i % Scenario::ALL.len()];
        let rel = Path::new("test").join(format!("{}.png", table.id));
        let mut rec = write_sample(dir, &rel, &table, scenario, opts.seed)?;
        rec.traits = None;
        test_recs.push(rec);
        tables.push(table);
    }
    write_jsonl(&dir.join(TEST_FILE), &test_recs)?;

    let recorder = Arc::new(RecordingModel::new(Arc::new(SimulatedModel::new(tables))));
    let gateway = Gateway::new(recorder.clone(), cfg.gateway.retry, cfg.gateway.max_in_flight);
    let store = NeighborStore::open(dir.join(STORE_DIR))?;
    let (samples, _) = load_samples(&dir.join(TEST_FILE))?;
    let workers = cfg.effective_workers();
    for variant in demo_variants() {
        let pipeline = Pipeline::new(gateway.clone(), Toolkit::new(cfg.toolkit.clone()), variant)?;
        run_batch(&pipeline, &samples, &store, workers)?;
    }
    let (bench_samples, _) = load_bench_samples(&dir.join(TEST_FILE))?;
    run_benchmark(&bench_samples, &cfg.bench, &gateway);
    recorder.write_script(dir.join(SCRIPT_FILE))?;

    let mut file_cfg = cfg.clone();
    file_cfg.gateway.mock_script = Some(PathBuf::from(SCRIPT_FILE));
    fs::write(dir.join(CONFIG_FILE), file_cfg.to_toml())?;
    Ok(DemoSummary {
        neighbors: store.len(),
        tests: samples.len(),
        script_entries: recorder.entries().len(),
    })
}
