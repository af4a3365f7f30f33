//! Neighbor-guided preprocessing and recognition of one table image:
//! retrieve the closest labeled neighbor, ask the model for candidate tool
//! plans, score each plan on the neighbor, run the winner on the test image
//! with a per-step before/after check, then transcribe the result.

mod batch;
mod plan;

pub use batch::{load_samples, run_batch, summarize, write_outputs, RunSummary, Sample, SampleOutcome, SampleTiming};
pub use plan::{execute_plan, PlanExecution, PlanOrigin, ToolPlan};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    parse_markup_response, parse_plans_response, parse_reflection_response, Completion, Gateway, GatewayError,
    Sampling, TemplateId,
};
use crate::imaging::{ImagingError, TableImage, ToolId, Toolkit};
use crate::retrieval::{NeighborRecord, NeighborStore, RetrievalError};
use crate::table::{parse_markup, MarkupSequence, MarkupTree, ParseMode, TableError};
use crate::teds::{teds_optional, TedsMode};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model call budget of {limit} exhausted")]
    Budget { limit: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Retrieval, planning, experience and reflection before recognition.
    Ngtr,
    /// Recognition of the unprocessed image.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecognitionPrompt {
    Simple,
    ChainOfThought,
}

impl RecognitionPrompt {
    pub fn template(self) -> TemplateId {
        match self {
            RecognitionPrompt::Simple => TemplateId::RecognizeSimple,
            RecognitionPrompt::ChainOfThought => TemplateId::RecognizeCoT,
        }
    }
}

/// What to run when every candidate plan scores 0 on the neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroScoreFallback {
    FirstPlan,
    EmptyPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: RunMode,
    /// Longest plan, in tool steps.
    pub max_plan_len: usize,
    /// Plans requested per generation.
    pub num_plans: usize,
    pub plan_temperature: f64,
    pub recognition_temperature: f64,
    pub top_p: f64,
    pub experience_enabled: bool,
    pub reflection_enabled: bool,
    pub recognition_prompt: RecognitionPrompt,
    pub zero_score_fallback: ZeroScoreFallback,
    /// Tools offered to the planner.
    pub tools: Vec<ToolId>,
    /// Model calls allowed per sample; defaults to plans + steps + 2.
    pub call_budget: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Ngtr,
            max_plan_len: 4,
            num_plans: 3,
            plan_temperature: 0.8,
            recognition_temperature: 0.0,
            top_p: 0.2,
            experience_enabled: true,
            reflection_enabled: true,
            recognition_prompt: RecognitionPrompt::Simple,
            zero_score_fallback: ZeroScoreFallback::FirstPlan,
            tools: ToolId::ALL.to_vec(),
            call_budget: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.max_plan_len == 0 || self.num_plans == 0 {
            return bad("max_plan_len and num_plans must be at least 1".into());
        }
        for (name, t) in [
            ("plan_temperature", self.plan_temperature),
            ("recognition_temperature", self.recognition_temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("{name} {t} outside [0, 2]"));
            }
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p {} outside (0, 1]", self.top_p));
        }
        if self.tools.is_empty() && self.mode == RunMode::Ngtr {
            return bad("no tools enabled".into());
        }
        Ok(())
    }

    pub fn effective_budget(&self) -> usize {
        self.call_budget.unwrap_or(self.num_plans + self.max_plan_len + 2)
    }

    fn recognition_sampling(&self) -> Sampling {
        Sampling {
            temperature: self.recognition_temperature,
            top_p: self.top_p,
            n_samples: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Retrieve,
    Plan,
    Experience,
    Reflect,
    Recognize,
    Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

/// One model call as recorded in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: Stage,
    pub template: TemplateId,
    pub fingerprint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retries: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanScore {
    pub plan: ToolPlan,
    /// TEDS of the neighbor recognition after running the plan.
    pub teds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub scoreboard: Vec<PlanScore>,
    pub chosen_index: usize,
    pub all_candidates_zero: bool,
}

/// Index of the highest score; the earliest wins ties.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionVerdict {
    pub step_index: usize,
    pub tool: ToolId,
    /// 1 keeps the tool output, 0 discards it.
    pub gamma: u8,
    /// False when the verdict was not read from a model answer.
    pub parsed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recognition {
    /// Normalized markup; empty when no table was found.
    pub markup: MarkupSequence,
    pub tree: Option<MarkupTree>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSummary {
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub sample_id: String,
    pub mode: RunMode,
    pub neighbor: Option<NeighborSummary>,
    pub candidate_plans: Vec<ToolPlan>,
    /// Empty when experience learning is off.
    pub scoreboard: Vec<PlanScore>,
    pub chosen_plan: Option<ToolPlan>,
    pub all_candidates_zero: bool,
    pub verdicts: Vec<ReflectionVerdict>,
    pub input_digest: String,
    pub final_digest: Option<String>,
    pub final_markup: String,
    pub teds: Option<f64>,
    pub teds_struct: Option<f64>,
    pub notes: Vec<String>,
    pub error: Option<StageError>,
    pub model_calls: Vec<CallRecord>,
}

impl RunReport {
    fn new(sample_id: &str, mode: RunMode, input_digest: String) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            mode,
            neighbor: None,
            candidate_plans: Vec::new(),
            scoreboard: Vec::new(),
            chosen_plan: None,
            all_candidates_zero: false,
            verdicts: Vec::new(),
            input_digest,
            final_digest: None,
            final_markup: String::new(),
            teds: None,
            teds_struct: None,
            notes: Vec::new(),
            error: None,
            model_calls: Vec::new(),
        }
    }
}

/// Counts model calls for one sample against its budget and keeps their
/// records.
pub struct Session<'a> {
    gateway: &'a Gateway,
    limit: usize,
    used: AtomicUsize,
}

impl<'a> Session<'a> {
    pub fn new(gateway: &'a Gateway, limit: usize) -> Self {
        Self {
            gateway,
            limit,
            used: AtomicUsize::new(0),
        }
    }

    pub fn calls_made(&self) -> usize {
        self.used.load(Ordering::SeqCst)
    }

    fn call(
        &self,
        stage: Stage,
        template: TemplateId,
        bindings: BTreeMap<String, String>,
        images: Vec<TableImage>,
        sampling: Sampling,
    ) -> Result<(Result<Completion, GatewayError>, CallRecord), PipelineError> {
        let n = self.used.fetch_add(1, Ordering::SeqCst);
        if n >= self.limit {
            return Err(PipelineError::Budget { limit: self.limit });
        }
        let request = self.gateway.request(template, bindings, images, sampling)?;
        let result = self.gateway.complete(&request);
        let record = CallRecord {
            stage,
            template,
            fingerprint: request.fingerprint.clone(),
            response_digest: result.as_ref().ok().map(Completion::response_digest),
            retries: result.as_ref().ok().map(|c| c.retries),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        Ok((result, record))
    }
}

/// Shared, immutable state for processing samples.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub gateway: Gateway,
    pub toolkit: Toolkit,
    pub config: PipelineConfig,
}

fn tool_descriptions(tools: &[ToolId]) -> String {
    tools
        .iter()
        .map(|t| {
            let d = t.descriptor();
            format!(
                "- {}: {}. {} Suited to: {}.",
                t.as_str(),
                t.display_name(),
                d.description,
                d.applicable_scenarios
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

const NO_TRAITS: &str = "no notes are available for this example.";

impl Pipeline {
    pub fn new(gateway: Gateway, toolkit: Toolkit, config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            gateway,
            toolkit,
            config,
        })
    }

    pub fn session(&self) -> Session<'_> {
        let limit = match self.config.mode {
            RunMode::Ngtr => self.config.effective_budget(),
            RunMode::Direct => 1,
        };
        Session::new(&self.gateway, limit)
    }

    /// Asks the model for up to N plans for `test`, guided by the neighbor's
    /// notes. Always yields at least one plan.
    pub fn generate_plans(
        &self,
        session: &Session,
        test: &TableImage,
        neighbor: &NeighborRecord,
        calls: &mut Vec<CallRecord>,
    ) -> Result<(Vec<ToolPlan>, Vec<String>), PipelineError> {
        let cfg = &self.config;
        let bindings = BTreeMap::from([
            ("tool_descriptions".to_string(), tool_descriptions(&cfg.tools)),
            (
                "neighbor_traits".to_string(),
                neighbor.traits.clone().unwrap_or_else(|| NO_TRAITS.to_string()),
            ),
            ("N".to_string(), cfg.num_plans.to_string()),
            ("L".to_string(), cfg.max_plan_len.to_string()),
        ]);
        let sampling = Sampling {
            temperature: cfg.plan_temperature,
            top_p: cfg.top_p,
            n_samples: 1,
        };
        let (result, record) = session.call(
            Stage::Plan,
            TemplateId::PlanGeneration,
            bindings,
            vec![test.clone()],
            sampling,
        )?;
        calls.push(record);
        let completion = result?;
        let parsed = parse_plans_response(&completion.text, cfg.max_plan_len, cfg.num_plans, &cfg.tools);
        Ok((parsed.plans, parsed.warnings))
    }

    /// Transcribes `img`. A response without a table gives empty markup and
    /// a note; transport-level failures are errors.
    pub fn recognize(
        &self,
        session: &Session,
        stage: Stage,
        img: &TableImage,
        calls: &mut Vec<CallRecord>,
    ) -> Result<Recognition, PipelineError> {
        let (result, record) = session.call(
            stage,
            self.config.recognition_prompt.template(),
            BTreeMap::new(),
            vec![img.clone()],
            self.config.recognition_sampling(),
        )?;
        calls.push(record);
        let completion = result?;
        Ok(match parse_markup_response(&completion.text) {
            Ok(p) => Recognition {
                markup: p.markup,
                tree: Some(p.tree),
                note: (p.repairs > 0).then(|| format!("{} markup repairs", p.repairs)),
            },
            Err(e) => Recognition {
                markup: MarkupSequence(String::new()),
                tree: None,
                note: Some(e.to_string()),
            },
        })
    }

    /// Runs every plan on the neighbor image and scores the recognized
    /// markup against the neighbor's gold markup.
    pub fn learn_experience(
        &self,
        session: &Session,
        plans: &[ToolPlan],
        neighbor: &NeighborRecord,
        neighbor_img: &TableImage,
        calls: &mut Vec<CallRecord>,
    ) -> Result<Experience, PipelineError> {
        let gold = parse_markup(neighbor.gold_markup.as_str(), ParseMode::Strict)?.tree;
        let evaluated: Vec<Result<(PlanScore, Vec<CallRecord>), PipelineError>> = plans
            .par_iter()
            .map(|plan| {
                let mut plan_calls = Vec::new();
                let exec = execute_plan(neighbor_img, plan, &self.toolkit);
                let mut notes: Vec<String> = exec.error.into_iter().collect();
                let teds = match self.recognize(session, Stage::Experience, &exec.image, &mut plan_calls) {
                    Ok(r) => {
                        notes.extend(r.note);
                        teds_optional(r.tree.as_ref(), Some(&gold), TedsMode::Full)
                            .map(|s| s.value)
                            .unwrap_or(0.0)
                    }
                    Err(PipelineError::Gateway(e)) => {
                        notes.push(e.to_string());
                        0.0
                    }
                    Err(e) => return Err(e),
                };
                let note = (!notes.is_empty()).then(|| notes.join("; "));
                Ok((
                    PlanScore {
                        plan: plan.clone(),
                        teds,
                        note,
                    },
                    plan_calls,
                ))
            })
            .collect();
        let mut scoreboard = Vec::with_capacity(plans.len());
        for item in evaluated {
            let (score, plan_calls) = item?;
            calls.extend(plan_calls);
            scoreboard.push(score);
        }
        let scores: Vec<f64> = scoreboard.iter().map(|s| s.teds).collect();
        let chosen_index =
            select_best(&scores).ok_or_else(|| PipelineError::InvalidPlan("no candidate plans".into()))?;
        let all_candidates_zero = scores.iter().all(|&s| s == 0.0);
        Ok(Experience {
            scoreboard,
            chosen_index,
            all_candidates_zero,
        })
    }

    /// Applies the plan one step at a time, keeping a step's output only
    /// when the model prefers it over the previous image.
    pub fn reflective_execute(
        &self,
        session: &Session,
        img: &TableImage,
        plan: &ToolPlan,
        calls: &mut Vec<CallRecord>,
    ) -> Result<(TableImage, Vec<ReflectionVerdict>), PipelineError> {
        let mut current = img.clone();
        let mut verdicts = Vec::with_capacity(plan.len());
        for (step_index, &tool) in plan.steps.iter().enumerate() {
            let mut verdict = ReflectionVerdict {
                step_index,
                tool,
                gamma: 0,
                parsed: false,
                response_digest: None,
                note: None,
            };
            let candidate = match self.toolkit.apply(tool, &current) {
                Ok(c) => c,
                Err(e) => {
                    verdict.note = Some(format!("tool failed: {e}"));
                    verdicts.push(verdict);
                    continue;
                }
            };
            if !self.config.reflection_enabled {
                verdict.gamma = 1;
                verdict.note = Some("reflection disabled".into());
                current = candidate;
                verdicts.push(verdict);
                continue;
            }
            let bindings = BTreeMap::from([("tool_name".to_string(), tool.display_name().to_string())]);
            let (result, record) = session.call(
                Stage::Reflect,
                TemplateId::Reflection,
                bindings,
                vec![current.clone(), candidate.clone()],
                self.config.recognition_sampling(),
            )?;
            calls.push(record);
            match result {
                Ok(c) => {
                    let r = parse_reflection_response(&c.text);
                    verdict.gamma = r.gamma;
                    verdict.parsed = r.parsed;
                    verdict.response_digest = Some(c.response_digest());
                    if !r.parsed {
                        verdict.note = Some("verdict not understood".into());
                    }
                }
                Err(e) => verdict.note = Some(e.to_string()),
            }
            if verdict.gamma == 1 {
                current = candidate;
            }
            verdicts.push(verdict);
        }
        Ok((current, verdicts))
    }

    /// Full flow for one image. Never fails: errors end up in the report.
    pub fn run_sample(
        &self,
        id: &str,
        test: &TableImage,
        gold: Option<&MarkupTree>,
        store: &NeighborStore,
    ) -> (RunReport, SampleTiming) {
        let start = Instant::now();
        let mut timing = SampleTiming::new(id);
        let mut report = RunReport::new(id, self.config.mode, test.digest());
        let session = self.session();
        let outcome = self.run_stages(&session, test, store, &mut report, &mut timing);
        let recognized = match outcome {
            Ok(r) => Some(r),
            Err((stage, e)) => {
                report.error = Some(StageError {
                    stage,
                    message: e.to_string(),
                });
                None
            }
        };
        if let Some(gold) = gold {
            let t = Instant::now();
            let pred = recognized.as_ref().and_then(|r| r.tree.as_ref());
            let score = |mode| teds_optional(pred, Some(gold), mode).map(|s| s.value).unwrap_or(0.0);
            let (full, structure) = match &report.error {
                Some(_) => (0.0, 0.0),
                None => (score(TedsMode::Full), score(TedsMode::StructOnly)),
            };
            report.teds = Some(full);
            report.teds_struct = Some(structure);
            timing.stage(Stage::Score, t);
        }
        timing.total_ms = start.elapsed().as_millis() as u64;
        (report, timing)
    }

    fn run_stages(
        &self,
        session: &Session,
        test: &TableImage,
        store: &NeighborStore,
        report: &mut RunReport,
        timing: &mut SampleTiming,
    ) -> Result<Recognition, (Stage, PipelineError)> {
        let mut calls = Vec::new();
        let result = self.run_stages_inner(session, test, store, report, timing, &mut calls);
        report.model_calls = calls;
        let recognition = result?;
        report.final_markup = recognition.markup.0.clone();
        report.notes.extend(recognition.note.clone());
        Ok(recognition)
    }

    fn run_stages_inner(
        &self,
        session: &Session,
        test: &TableImage,
        store: &NeighborStore,
        report: &mut RunReport,
        timing: &mut SampleTiming,
        calls: &mut Vec<CallRecord>,
    ) -> Result<Recognition, (Stage, PipelineError)> {
        if self.config.mode == RunMode::Direct {
            let t = Instant::now();
            report.final_digest = Some(test.digest());
            let r = self
                .recognize(session, Stage::Recognize, test, calls)
                .map_err(|e| (Stage::Recognize, e))?;
            timing.stage(Stage::Recognize, t);
            return Ok(r);
        }

        let t = Instant::now();
        let neighbor = store
            .retrieve_image(test, 1)
            .map_err(|e| (Stage::Retrieve, e.into()))?
            .into_iter()
            .next()
            .ok_or((Stage::Retrieve, PipelineError::Retrieval(RetrievalError::EmptyStore)))?;
        report.neighbor = Some(NeighborSummary {
            id: neighbor.record.id.clone(),
            similarity: neighbor.score,
        });
        timing.stage(Stage::Retrieve, t);

        let t = Instant::now();
        let (plans, warnings) = self
            .generate_plans(session, test, neighbor.record, calls)
            .map_err(|e| (Stage::Plan, e))?;
        report.notes.extend(warnings);
        report.candidate_plans = plans.clone();
        timing.stage(Stage::Plan, t);

        let t = Instant::now();
        let chosen = if self.config.experience_enabled {
            let neighbor_img = TableImage::load(&neighbor.record.image_path, neighbor.record.id.clone())
                .map_err(|e| (Stage::Experience, e.into()))?;
            let exp = self
                .learn_experience(session, &plans, neighbor.record, &neighbor_img, calls)
                .map_err(|e| (Stage::Experience, e))?;
            report.scoreboard = exp.scoreboard;
            report.all_candidates_zero = exp.all_candidates_zero;
            if exp.all_candidates_zero && self.config.zero_score_fallback == ZeroScoreFallback::EmptyPlan {
                report
                    .notes
                    .push("every candidate scored 0 on the neighbor; using no tools".into());
                ToolPlan::empty()
            } else {
                plans[exp.chosen_index].clone()
            }
        } else {
            plans[0].clone()
        };
        report.chosen_plan = Some(chosen.clone());
        timing.stage(Stage::Experience, t);

        let t = Instant::now();
        let (final_img, verdicts) = self
            .reflective_execute(session, test, &chosen, calls)
            .map_err(|e| (Stage::Reflect, e))?;
        report.verdicts = verdicts;
        report.final_digest = Some(final_img.digest());
        timing.stage(Stage::Reflect, t);

        let t = Instant::now();
        let r = self
            .recognize(session, Stage::Recognize, &final_img, calls)
            .map_err(|e| (Stage::Recognize, e))?;
        timing.stage(Stage::Recognize, t);
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_index_prefers_earliest_max() {
        assert_eq!(select_best(&[0.2, 0.9, 0.9, 0.1]), Some(1));
        assert_eq!(select_best(&[0.0, 0.0]), Some(0));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn config_validation_and_budget() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.effective_budget(), 9);
        let bad = PipelineConfig {
            num_plans: 0,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            top_p: 0.0,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = PipelineConfig {
            experience_enabled: false,
            tools: vec![ToolId::Upscale],
            ..PipelineConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        let partial: PipelineConfig = toml::from_str("num_plans = 5").unwrap();
        assert_eq!(partial.num_plans, 5);
        assert_eq!(partial.max_plan_len, 4);
    }
}
