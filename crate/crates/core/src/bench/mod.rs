//! Hierarchical table-understanding tasks (size, row and column contents,
//! merged cells, content lookup in both directions), their scoring, dataset
//! ingestion, and batch benchmark runs.

mod ingest;
mod tasks;

pub use ingest::{ingest_pubtabnet, ingest_scitsr, pubtabnet_markup, IngestOutcome, IngestedTable};
pub use tasks::{
    derive_gold, generate_tasks, parse_answer, score_task, HierTask, MetricKind, TaskConfig, TaskKind, TaskQuery,
    TaskResult,
};

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, Sampling};
use crate::imaging::TableImage;
use crate::table::{read_ground_truth, LogicalTable, TableError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown task kind {0:?}")]
    UnknownTask(String),
    #[error("table {0} has no cells")]
    EmptyTable(String),
    #[error("{kind} gold answer for {id} does not match its table")]
    Inconsistent { id: String, kind: TaskKind },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// A labeled image for benchmarking.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSample {
    pub id: String,
    pub image_path: PathBuf,
    pub table: LogicalTable,
}

impl BenchSample {
    pub fn rows_cols(&self) -> (usize, usize) {
        self.table.dimensions()
    }

    /// Whether the row and column counts differ by at most three.
    pub fn is_balanced(&self) -> bool {
        let (r, c) = self.rows_cols();
        r.abs_diff(c) <= 3
    }
}

/// Reads a ground-truth JSONL file; relative image paths are joined to the
/// file's directory. Returns the samples and the number skipped.
pub fn load_bench_samples(path: &Path) -> Result<(Vec<BenchSample>, usize), BenchError> {
    let (records, mut skipped) = read_ground_truth(BufReader::new(File::open(path)?))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for rec in records {
        match rec.to_table() {
            Ok(table) => out.push(BenchSample {
                image_path: if rec.image_path.is_absolute() {
                    rec.image_path.clone()
                } else {
                    base.join(&rec.image_path)
                },
                id: rec.id,
                table,
            }),
            Err(e) => {
                warn!("skipping {}: {e}", rec.id);
                skipped += 1;
            }
        }
    }
    Ok((out, skipped))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BenchConfig {
    pub tasks: TaskConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    pub parse_failures: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub samples: usize,
    /// Samples whose row and column counts differ by at most three.
    pub balanced_samples: usize,
    pub full: BTreeMap<TaskKind, Aggregate>,
    pub balanced: BTreeMap<TaskKind, Aggregate>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub results: Vec<TaskResult>,
    pub summary: BenchSummary,
}

fn aggregate<'a>(results: impl Iterator<Item = &'a TaskResult>) -> BTreeMap<TaskKind, Aggregate> {
    let mut sums: BTreeMap<TaskKind, (Aggregate, f64)> = BTreeMap::new();
    for r in results {
        let (agg, sum) = sums.entry(r.task.kind).or_default();
        agg.count += 1;
        agg.parse_failures += usize::from(r.parse_failed && r.error.is_none());
        agg.errors += usize::from(r.error.is_some());
        *sum += r.score;
    }
    sums.into_iter()
        .map(|(k, (mut agg, sum))| {
            agg.mean = sum / agg.count as f64;
            (k, agg)
        })
        .collect()
}

fn failed(task: HierTask, message: String) -> TaskResult {
    TaskResult {
        metric: task.kind.metric(),
        task,
        response_digest: None,
        parsed: None,
        parse_failed: true,
        score: 0.0,
        error: Some(message),
    }
}

fn run_sample_tasks(sample: &BenchSample, cfg: &BenchConfig, gw: &Gateway) -> (Vec<TaskResult>, Vec<String>) {
    let (tasks, notes) = match generate_tasks(&sample.table, &cfg.tasks, cfg.seed) {
        Ok(t) => t,
        Err(e) => return (Vec::new(), vec![format!("{}: {e}", sample.id)]),
    };
    let image = match TableImage::load(&sample.image_path, sample.id.clone()) {
        Ok(img) => img,
        Err(e) => {
            let msg = format!("{}: {e}", sample.image_path.display());
            return (tasks.into_iter().map(|t| failed(t, msg.clone())).collect(), notes);
        }
    };
    let results = tasks
        .into_iter()
        .map(|task| {
            let request = gw.request(
                task.kind.template(),
                task.bindings(),
                vec![image.clone()],
                Sampling::default(),
            );
            match request.and_then(|r| gw.complete(&r)) {
                Ok(c) => score_task(&task, &c.text),
                Err(e) => failed(task, e.to_string()),
            }
        })
        .collect();
    (results, notes)
}

/// Generates, asks and scores every task for every sample. Failures are
/// recorded per task with score 0; the run never stops early. Must be
/// called inside the worker pool that should run it.
pub fn run_benchmark(samples: &[BenchSample], cfg: &BenchConfig, gw: &Gateway) -> BenchReport {
    let per_sample: Vec<(Vec<TaskResult>, Vec<String>)> =
        samples.par_iter().map(|s| run_sample_tasks(s, cfg, gw)).collect();
    let balanced_ids: Vec<&str> = samples
        .iter()
        .filter(|s| s.is_balanced())
        .map(|s| s.id.as_str())
        .collect();
    let mut results = Vec::new();
    let mut notes = Vec::new();
    for (r, n) in per_sample {
        results.extend(r);
        notes.extend(n);
    }
    let summary = BenchSummary {
        samples: samples.len(),
        balanced_samples: balanced_ids.len(),
        full: aggregate(results.iter()),
        balanced: aggregate(
            results
                .iter()
                .filter(|r| balanced_ids.contains(&r.task.sample_id.as_str())),
        ),
        notes,
    };
    BenchReport { results, summary }
}

/// Writes `bench.jsonl` and `bench_summary.json` into `dir`.
pub fn write_bench_outputs(dir: &Path, report: &BenchReport) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("bench.jsonl"))?);
    for r in &report.results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let mut s = serde_json::to_string_pretty(&report.summary)?;
    s.push('\n');
    fs::write(dir.join("bench_summary.json"), s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teds::Answer;

    fn result(kind: TaskKind, id: &str, score: f64) -> TaskResult {
        TaskResult {
            task: HierTask {
                kind,
                sample_id: id.into(),
                query: TaskQuery::None,
                gold: Answer::Size { rows: 1, cols: 1 },
            },
            metric: kind.metric(),
            response_digest: None,
            parsed: None,
            parse_failed: false,
            score,
            error: None,
        }
    }

    #[test]
    fn aggregate_means() {
        let rs = [
            result(TaskKind::Vtsd, "a", 1.0),
            result(TaskKind::Vtsd, "b", 0.0),
            result(TaskKind::Mcd, "a", 0.8),
        ];
        let agg = aggregate(rs.iter());
        assert_eq!(agg[&TaskKind::Vtsd].count, 2);
        assert_eq!(agg[&TaskKind::Vtsd].mean, 0.5);
        assert!((agg[&TaskKind::Mcd].mean - 0.8).abs() < 1e-12);
    }

    #[test]
    fn balance_filter() {
        let cells = (0..10)
            .flat_map(|r| (0..2).map(move |c| crate::table::LogicalCell::new(r, r, c, c, "x").unwrap()))
            .collect();
        let s = BenchSample {
            id: "tall".into(),
            image_path: PathBuf::new(),
            table: LogicalTable::new("tall", cells),
        };
        assert!(!s.is_balanced());
    }
}
