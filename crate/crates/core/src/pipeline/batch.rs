use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Pipeline, PipelineError, RunReport, Stage, StageError};
use crate::imaging::{TableImage, ToolId};
use crate::retrieval::NeighborStore;
use crate::table::{
    logical_to_matrix, matrix_to_markup, parse_markup, read_ground_truth, GroundTruthRecord, MarkupSequence, ParseMode,
};

/// A test image and, when known, its gold markup.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image_path: PathBuf,
    pub gold: Option<MarkupSequence>,
}

impl Sample {
    /// Gold markup comes from the cell list, or from the stored markup when
    /// the record has no cells. Relative image paths are joined to `base`.
    pub fn from_ground_truth(rec: &GroundTruthRecord, base: &Path) -> Result<Self, PipelineError> {
        let gold = if rec.cells.is_empty() {
            rec.markup.clone().map(MarkupSequence)
        } else {
            Some(matrix_to_markup(&logical_to_matrix(&rec.to_table()?)?))
        };
        let image_path = if rec.image_path.is_absolute() {
            rec.image_path.clone()
        } else {
            base.join(&rec.image_path)
        };
        Ok(Self {
            id: rec.id.clone(),
            image_path,
            gold,
        })
    }
}

/// Reads a ground-truth JSONL file. Records with invalid cells are skipped
/// and counted.
pub fn load_samples(path: &Path) -> Result<(Vec<Sample>, usize), PipelineError> {
    let (records, mut skipped) = read_ground_truth(BufReader::new(File::open(path)?))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(records.len());
    for rec in &records {
        match Sample::from_ground_truth(rec, base) {
            Ok(s) => samples.push(s),
            Err(e) => {
                warn!("skipping sample {}: {e}", rec.id);
                skipped += 1;
            }
        }
    }
    Ok((samples, skipped))
}

/// Wall-clock timings, kept apart from reports so reports stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTiming {
    pub sample_id: String,
    pub total_ms: u64,
    pub stages_ms: BTreeMap<Stage, u64>,
}

impl SampleTiming {
    pub fn new(id: &str) -> Self {
        Self {
            sample_id: id.to_string(),
            total_ms: 0,
            stages_ms: BTreeMap::new(),
        }
    }

    pub(crate) fn stage(&mut self, stage: Stage, since: Instant) {
        *self.stages_ms.entry(stage).or_insert(0) += since.elapsed().as_millis() as u64;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub report: RunReport,
    pub timing: SampleTiming,
}

fn error_outcome(sample: &Sample, pipeline: &Pipeline, stage: Stage, message: String) -> SampleOutcome {
    let mut report = RunReport::new(&sample.id, pipeline.config.mode, String::new());
    report.error = Some(StageError { stage, message });
    if sample.gold.is_some() {
        report.teds = Some(0.0);
        report.teds_struct = Some(0.0);
    }
    SampleOutcome {
        report,
        timing: SampleTiming::new(&sample.id),
    }
}

fn run_one(pipeline: &Pipeline, sample: &Sample, store: &NeighborStore) -> SampleOutcome {
    let start = Instant::now();
    let img = match TableImage::load(&sample.image_path, sample.id.clone()) {
        Ok(img) => img,
        Err(e) => {
            return error_outcome(
                sample,
                pipeline,
                Stage::Load,
                format!("{}: {e}", sample.image_path.display()),
            )
        }
    };
    let gold = match &sample.gold {
        Some(m) => match parse_markup(m.as_str(), ParseMode::Strict) {
            Ok(p) => Some(p.tree),
            Err(e) => return error_outcome(sample, pipeline, Stage::Score, format!("gold markup: {e}")),
        },
        None => None,
    };
    let (report, mut timing) = pipeline.run_sample(&sample.id, &img, gold.as_ref(), store);
    timing.stages_ms.insert(Stage::Load, 0);
    timing.total_ms = start.elapsed().as_millis() as u64;
    SampleOutcome { report, timing }
}

/// Processes samples on `workers` threads. Output order follows input order.
pub fn run_batch(
    pipeline: &Pipeline,
    samples: &[Sample],
    store: &NeighborStore,
    workers: usize,
) -> Result<Vec<SampleOutcome>, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let outcomes: Vec<SampleOutcome> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let o = run_one(pipeline, s, store);
                match &o.report.error {
                    Some(e) => warn!("{}: {:?} stage failed: {}", s.id, e.stage, e.message),
                    None => info!("{}: done", s.id),
                }
                o
            })
            .collect()
    });
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub samples: usize,
    pub failed: usize,
    /// Samples with gold markup; failed samples count with score 0.
    pub scored: usize,
    pub mean_teds: Option<f64>,
    pub mean_teds_struct: Option<f64>,
    /// Samples whose chosen plan had at least one step.
    pub samples_with_tools: usize,
    /// Per tool, the share of `samples_with_tools` whose chosen plan uses it.
    pub tool_usage: BTreeMap<ToolId, f64>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub all_candidates_zero: usize,
    pub model_calls: usize,
    pub errors_by_stage: BTreeMap<Stage, usize>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn summarize(reports: &[RunReport]) -> RunSummary {
    let teds: Vec<f64> = reports.iter().filter_map(|r| r.teds).collect();
    let teds_struct: Vec<f64> = reports.iter().filter_map(|r| r.teds_struct).collect();
    let with_tools: Vec<&RunReport> = reports
        .iter()
        .filter(|r| r.chosen_plan.as_ref().is_some_and(|p| !p.is_empty()))
        .collect();
    let mut tool_usage = BTreeMap::new();
    for tool in ToolId::ALL {
        let n = with_tools
            .iter()
            .filter(|r| r.chosen_plan.as_ref().is_some_and(|p| p.steps.contains(&tool)))
            .count();
        if !with_tools.is_empty() {
            tool_usage.insert(tool, n as f64 / with_tools.len() as f64);
        }
    }
    let mut errors_by_stage = BTreeMap::new();
    for e in reports.iter().filter_map(|r| r.error.as_ref()) {
        *errors_by_stage.entry(e.stage).or_insert(0) += 1;
    }
    let verdicts = reports.iter().flat_map(|r| &r.verdicts);
    let (accepted, rejected) = verdicts.fold((0, 0), |(a, r), v| if v.gamma == 1 { (a + 1, r) } else { (a, r + 1) });
    RunSummary {
        samples: reports.len(),
        failed: reports.iter().filter(|r| r.error.is_some()).count(),
        scored: teds.len(),
        mean_teds: mean(&teds),
        mean_teds_struct: mean(&teds_struct),
        samples_with_tools: with_tools.len(),
        tool_usage,
        steps_accepted: accepted,
        steps_rejected: rejected,
        all_candidates_zero: reports.iter().filter(|r| r.all_candidates_zero).count(),
        model_calls: reports.iter().map(|r| r.model_calls.len()).sum(),
        errors_by_stage,
    }
}

/// Writes `reports.jsonl`, `summary.json` and `timing.jsonl` into `dir`.
pub fn write_outputs(dir: &Path, outcomes: &[SampleOutcome], summary: &RunSummary) -> Result<(), PipelineError> {
    fs::create_dir_all(dir)?;
    let mut reports = BufWriter::new(File::create(dir.join("reports.jsonl"))?);
    let mut timing = BufWriter::new(File::create(dir.join("timing.jsonl"))?);
    for o in outcomes {
        serde_json::to_writer(&mut reports, &o.report)?;
        reports.write_all(b"\n")?;
        serde_json::to_writer(&mut timing, &o.timing)?;
        timing.write_all(b"\n")?;
    }
    reports.flush()?;
    timing.flush()?;
    let mut s = serde_json::to_string_pretty(summary)?;
    s.push('\n');
    fs::write(dir.join("summary.json"), s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{PlanOrigin, ReflectionVerdict, RunMode, ToolPlan};

    fn report(id: &str, teds: Option<f64>, plan: Option<Vec<ToolId>>) -> RunReport {
        let mut r = RunReport::new(id, RunMode::Ngtr, String::new());
        r.teds = teds;
        r.teds_struct = teds;
        r.chosen_plan = plan.map(|steps| ToolPlan {
            steps,
            origin: PlanOrigin::ModelGenerated,
        });
        r
    }

    #[test]
    fn tool_usage_counts_only_samples_with_tools() {
        let reports = vec![
            report("a", Some(1.0), Some(vec![ToolId::Upscale, ToolId::Binarize])),
            report("b", Some(0.5), Some(vec![ToolId::Upscale])),
            report("c", Some(0.0), Some(vec![])),
            report("d", None, None),
        ];
        let s = summarize(&reports);
        assert_eq!(s.samples_with_tools, 2);
        assert_eq!(s.tool_usage[&ToolId::Upscale], 1.0);
        assert_eq!(s.tool_usage[&ToolId::Binarize], 0.5);
        assert_eq!(s.tool_usage[&ToolId::DetectCrop], 0.0);
        assert_eq!(s.scored, 3);
        assert_eq!(s.mean_teds, Some(0.5));
    }

    #[test]
    fn verdicts_are_tallied() {
        let mut r = report("a", None, None);
        for (i, g) in [1u8, 0, 0].into_iter().enumerate() {
            r.verdicts.push(ReflectionVerdict {
                step_index: i,
                tool: ToolId::Binarize,
                gamma: g,
                parsed: true,
                response_digest: None,
                note: None,
            });
        }
        let s = summarize(&[r]);
        assert_eq!((s.steps_accepted, s.steps_rejected), (1, 2));
        assert_eq!(s.mean_teds, None);
        assert!(s.tool_usage.is_empty());
    }
}
