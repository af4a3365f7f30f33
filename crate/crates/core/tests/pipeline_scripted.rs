//! Pipeline behavior under hand-written mock scripts.

use std::collections::BTreeMap;
use std::sync::Arc;

use tablekit::gateway::{fingerprint, Gateway, RetryPolicy, ScriptEntry, ScriptedMock, TemplateId};
use tablekit::imaging::synth::{random_table, render_table, RenderStyle};
use tablekit::imaging::{degrade, DegradeConfig, Scenario, TableImage, ToolConfig, ToolId, Toolkit};
use tablekit::pipeline::{
    execute_plan, run_batch, select_best, Pipeline, PipelineConfig, PlanOrigin, Sample, Stage, ToolPlan,
};
use tablekit::retrieval::{MatchParams, NeighborInput, NeighborStore, OrbParams, StoreMeta};
use tablekit::table::{logical_to_matrix, matrix_to_markup, parse_markup, MarkupSequence, MarkupTree, ParseMode};

const OTHER_TABLE: &str = "<table><tr><td>zz</td></tr></table>";

struct Fixture {
    test: TableImage,
    neighbor_img: TableImage,
    neighbor_gold: MarkupSequence,
    test_gold: MarkupTree,
    store: NeighborStore,
    _dir: tempfile::TempDir,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let nb_table = random_table("nb", 3, 3, 0.2, 11);
    let nb_clean = render_table(&nb_table, "nb", &RenderStyle::default()).unwrap();
    let neighbor_img = degrade(&nb_clean, Scenario::Blur, 0, &DegradeConfig::default()).unwrap();
    let nb_path = dir.path().join("nb.png");
    neighbor_img.save(&nb_path).unwrap();
    let neighbor_img = TableImage::load(&nb_path, "nb").unwrap();
    let neighbor_gold = matrix_to_markup(&logical_to_matrix(&nb_table).unwrap());
    let input = NeighborInput {
        id: "nb".into(),
        image_path: nb_path,
        gold_markup: neighbor_gold.clone(),
        traits: Some("blurry scan".into()),
    };
    let (store, skipped) = NeighborStore::build(
        vec![(input, neighbor_img.clone())],
        OrbParams::default(),
        MatchParams::default(),
    )
    .unwrap();
    assert!(skipped.is_empty());

    let test_table = random_table("t", 4, 3, 0.2, 12);
    let clean = render_table(&test_table, "t", &RenderStyle::default()).unwrap();
    let test = degrade(&clean, Scenario::Underexposure, 0, &DegradeConfig::default()).unwrap();
    let test_gold = parse_markup(
        matrix_to_markup(&logical_to_matrix(&test_table).unwrap()).as_str(),
        ParseMode::Strict,
    )
    .unwrap()
    .tree;
    Fixture {
        test,
        neighbor_img,
        neighbor_gold,
        test_gold,
        store,
        _dir: dir,
    }
}

fn pipeline(mock: &Arc<ScriptedMock>, config: PipelineConfig) -> Pipeline {
    let policy = RetryPolicy {
        max_retries: 0,
        initial_backoff_ms: 0,
        max_backoff_ms: 0,
    };
    let gateway = Gateway::new(mock.clone(), policy, 4);
    Pipeline::new(gateway, Toolkit::new(ToolConfig::default()), config).unwrap()
}

fn plan(steps: &[ToolId]) -> ToolPlan {
    ToolPlan::new(steps.to_vec(), PlanOrigin::Manual, 4).unwrap()
}

fn fenced(markup: &str) -> String {
    format!("```html\n{markup}\n```")
}

fn reflection_fp(tool: ToolId, before: &TableImage, after: &TableImage) -> String {
    let bindings = BTreeMap::from([("tool_name".to_string(), tool.display_name().to_string())]);
    fingerprint(TemplateId::Reflection, &bindings, &[before.clone(), after.clone()])
}

#[test]
fn rejecting_every_step_returns_the_input_bytes() {
    let f = fixture();
    let mock = Arc::new(ScriptedMock::new([ScriptEntry::template_default(
        TemplateId::Reflection,
        "IMAGE_1",
    )]));
    let p = pipeline(&mock, PipelineConfig::default());
    let session = p.session();
    let steps = plan(&[ToolId::Upscale, ToolId::Binarize, ToolId::NoiseReduce]);
    let (out, verdicts) = p
        .reflective_execute(&session, &f.test, &steps, &mut Vec::new())
        .unwrap();
    assert_eq!(out.raw_bytes(), f.test.raw_bytes());
    assert_eq!((out.width(), out.height()), (f.test.width(), f.test.height()));
    assert!(verdicts.iter().all(|v| v.gamma == 0 && v.parsed));
    assert_eq!(mock.calls_for(TemplateId::Reflection), 3);
}

#[test]
fn accepting_every_step_matches_plain_execution() {
    let f = fixture();
    let mock = Arc::new(ScriptedMock::new([ScriptEntry::template_default(
        TemplateId::Reflection,
        "IMAGE_2",
    )]));
    let p = pipeline(&mock, PipelineConfig::default());
    let steps = plan(&[ToolId::BorderEnhance, ToolId::Binarize]);
    let (out, verdicts) = p
        .reflective_execute(&p.session(), &f.test, &steps, &mut Vec::new())
        .unwrap();
    let direct = execute_plan(&f.test, &steps, &Toolkit::new(ToolConfig::default()));
    assert_eq!(out.digest(), direct.image.digest());
    assert!(verdicts.iter().all(|v| v.gamma == 1));
}

#[test]
fn accepting_only_the_second_step() {
    let f = fixture();
    let toolkit = Toolkit::new(ToolConfig::default());
    let tools = [ToolId::NoiseReduce, ToolId::Binarize, ToolId::Upscale];
    let second = toolkit.apply(tools[1], &f.test).unwrap();
    let mock = Arc::new(ScriptedMock::new([
        ScriptEntry::reply(reflection_fp(tools[1], &f.test, &second), "IMAGE_2"),
        ScriptEntry::template_default(TemplateId::Reflection, "IMAGE_1"),
    ]));
    let p = pipeline(&mock, PipelineConfig::default());
    let (out, verdicts) = p
        .reflective_execute(&p.session(), &f.test, &plan(&tools), &mut Vec::new())
        .unwrap();
    assert_eq!(out.digest(), second.digest());
    assert_eq!(verdicts.iter().map(|v| v.gamma).collect::<Vec<_>>(), vec![0, 1, 0]);
}

#[test]
fn unclear_verdict_defaults_to_reject() {
    let f = fixture();
    let mock = Arc::new(ScriptedMock::new([ScriptEntry::template_default(
        TemplateId::Reflection,
        "both look fine",
    )]));
    let p = pipeline(&mock, PipelineConfig::default());
    let (out, verdicts) = p
        .reflective_execute(&p.session(), &f.test, &plan(&[ToolId::Binarize]), &mut Vec::new())
        .unwrap();
    assert_eq!(out.digest(), f.test.digest());
    assert_eq!((verdicts[0].gamma, verdicts[0].parsed), (0, false));
}

const THREE_PLANS: &str = r#"[["binarize"], ["upscale", "binarize"], ["noise_reduce"]]"#;

fn experience_mock(f: &Fixture, perfect: &ToolPlan) -> ScriptedMock {
    let toolkit = Toolkit::new(ToolConfig::default());
    let img = execute_plan(&f.neighbor_img, perfect, &toolkit).image;
    let fp = fingerprint(TemplateId::RecognizeSimple, &BTreeMap::new(), &[img]);
    ScriptedMock::new([
        ScriptEntry::template_default(TemplateId::PlanGeneration, THREE_PLANS),
        ScriptEntry::reply(fp, fenced(f.neighbor_gold.as_str())),
        ScriptEntry::template_default(TemplateId::RecognizeSimple, fenced(OTHER_TABLE)),
        ScriptEntry::template_default(TemplateId::Reflection, "IMAGE_2"),
    ])
}

#[test]
fn full_run_chooses_the_scripted_best_plan() {
    let f = fixture();
    let best = plan(&[ToolId::Upscale, ToolId::Binarize]);
    let mock = Arc::new(experience_mock(&f, &best));
    let config = PipelineConfig::default();
    let budget = config.effective_budget();
    let p = pipeline(&mock, config);
    let (report, _) = p.run_sample("t", &f.test, Some(&f.test_gold), &f.store);
    assert_eq!(report.error, None);
    assert_eq!(report.neighbor.as_ref().unwrap().id, "nb");
    assert_eq!(report.candidate_plans.len(), 3);
    assert_eq!(report.chosen_plan.as_ref().unwrap().steps, best.steps);
    assert_eq!(report.scoreboard[1].teds, 1.0);
    assert!(!report.all_candidates_zero);

    // Independent argmax over the scoreboard, earliest on ties.
    let scores: Vec<f64> = report.scoreboard.iter().map(|s| s.teds).collect();
    let mut brute = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[brute] {
            brute = i;
        }
    }
    assert_eq!(select_best(&scores), Some(brute));
    assert_eq!(report.scoreboard[brute].plan.steps, best.steps);

    assert_eq!(report.verdicts.len(), 2);
    assert!(report.teds.unwrap() < 1.0);
    assert!(report.model_calls.len() <= budget);
    assert_eq!(mock.call_count(), report.model_calls.len());
}

#[test]
fn all_zero_scores_fall_back_to_the_first_plan() {
    let f = fixture();
    let mock = Arc::new(ScriptedMock::new([
        ScriptEntry::template_default(TemplateId::PlanGeneration, THREE_PLANS),
        ScriptEntry::template_default(TemplateId::RecognizeSimple, "I cannot see a table."),
        ScriptEntry::template_default(TemplateId::Reflection, "IMAGE_1"),
    ]));
    let p = pipeline(&mock, PipelineConfig::default());
    let (report, _) = p.run_sample("t", &f.test, Some(&f.test_gold), &f.store);
    assert_eq!(report.error, None);
    assert!(report.all_candidates_zero);
    assert_eq!(report.chosen_plan, Some(report.candidate_plans[0].clone()));
    assert_eq!(report.final_markup, "");
    assert_eq!(report.teds, Some(0.0));
}

#[test]
fn without_experience_the_first_plan_is_used() {
    let f = fixture();
    let best = plan(&[ToolId::Upscale, ToolId::Binarize]);
    let mock = Arc::new(experience_mock(&f, &best));
    let config = PipelineConfig {
        experience_enabled: false,
        ..PipelineConfig::default()
    };
    let p = pipeline(&mock, config);
    let (report, _) = p.run_sample("t", &f.test, None, &f.store);
    assert_eq!(report.chosen_plan, Some(report.candidate_plans[0].clone()));
    assert!(report.scoreboard.is_empty());
    assert!(report.model_calls.iter().all(|c| c.stage != Stage::Experience));
    // plans, reflection on one step, final recognition
    assert_eq!(mock.call_count(), 3);
}

#[test]
fn without_reflection_no_reflection_calls_are_made() {
    let f = fixture();
    let best = plan(&[ToolId::Upscale, ToolId::Binarize]);
    let mock = Arc::new(experience_mock(&f, &best));
    let config = PipelineConfig {
        reflection_enabled: false,
        ..PipelineConfig::default()
    };
    let p = pipeline(&mock, config);
    let (report, _) = p.run_sample("t", &f.test, None, &f.store);
    assert_eq!(report.error, None);
    assert_eq!(mock.calls_for(TemplateId::Reflection), 0);
    assert!(report.verdicts.iter().all(|v| v.gamma == 1));
    let toolkit = Toolkit::new(ToolConfig::default());
    assert_eq!(
        report.final_digest,
        Some(execute_plan(&f.test, &best, &toolkit).image.digest())
    );
}

#[test]
fn single_plan_keeps_only_the_first_of_many() {
    let f = fixture();
    let mock = Arc::new(ScriptedMock::new([
        ScriptEntry::template_default(
            TemplateId::PlanGeneration,
            r#"[["binarize"], ["upscale"], ["noise_reduce"], ["detect_crop"]]"#,
        ),
        ScriptEntry::template_default(TemplateId::RecognizeSimple, fenced(OTHER_TABLE)),
        ScriptEntry::template_default(TemplateId::Reflection, "IMAGE_1"),
    ]));
    let config = PipelineConfig {
        num_plans: 1,
        ..PipelineConfig::default()
    };
    let p = pipeline(&mock, config);
    let (report, _) = p.run_sample("t", &f.test, None, &f.store);
    assert_eq!(
        report.candidate_plans,
        vec![ToolPlan {
            steps: vec![ToolId::Binarize],
            origin: PlanOrigin::ModelGenerated,
        }]
    );
}

#[test]
fn garbage_plans_become_one_empty_plan() {
    let f = fixture();
    let mock = Arc::new(ScriptedMock::new([
        ScriptEntry::template_default(TemplateId::PlanGeneration, "no idea, sorry"),
        ScriptEntry::template_default(TemplateId::RecognizeSimple, fenced(OTHER_TABLE)),
    ]));
    let p = pipeline(&mock, PipelineConfig::default());
    let (report, _) = p.run_sample("t", &f.test, None, &f.store);
    assert_eq!(report.error, None);
    assert_eq!(report.candidate_plans.len(), 1);
    assert!(report.candidate_plans[0].is_empty());
    assert_eq!(report.final_digest, Some(f.test.digest()));
}

#[test]
fn recognition_is_deterministic_and_normalized() {
    let f = fixture();
    let mock = Arc::new(ScriptedMock::new([ScriptEntry::template_default(
        TemplateId::RecognizeSimple,
        "Sure! <table><tr><td colspan=\"1\">a</td></tr></table> Hope this helps.",
    )]));
    let p = pipeline(&mock, PipelineConfig::default());
    let a = p
        .recognize(&p.session(), Stage::Recognize, &f.test, &mut Vec::new())
        .unwrap();
    let b = p
        .recognize(&p.session(), Stage::Recognize, &f.test, &mut Vec::new())
        .unwrap();
    assert_eq!(a.markup, b.markup);
    assert_eq!(a.markup.as_str(), "<table><tr><td>a</td></tr></table>");
}

#[test]
fn empty_store_gives_error_reports_and_the_batch_continues() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut samples = Vec::new();
    for id in ["a", "b"] {
        let path = dir.path().join(format!("{id}.png"));
        f.test.save(&path).unwrap();
        samples.push(Sample {
            id: id.into(),
            image_path: path,
            gold: Some(MarkupSequence(OTHER_TABLE.into())),
        });
    }
    samples.push(Sample {
        id: "missing".into(),
        image_path: dir.path().join("missing.png"),
        gold: None,
    });
    let empty =
        NeighborStore::from_records(StoreMeta::new(OrbParams::default(), MatchParams::default()), Vec::new()).unwrap();
    let mock = Arc::new(ScriptedMock::new([]));
    let p = pipeline(&mock, PipelineConfig::default());
    let outcomes = run_batch(&p, &samples, &empty, 2).unwrap();
    let stages: Vec<Stage> = outcomes
        .iter()
        .map(|o| o.report.error.as_ref().unwrap().stage)
        .collect();
    assert_eq!(stages, vec![Stage::Retrieve, Stage::Retrieve, Stage::Load]);
    assert_eq!(outcomes[0].report.teds, Some(0.0));
    assert_eq!(mock.call_count(), 0);
}

#[test]
fn budget_stops_runaway_sessions() {
    let f = fixture();
    let mock = Arc::new(ScriptedMock::new([
        ScriptEntry::template_default(TemplateId::PlanGeneration, THREE_PLANS),
        ScriptEntry::template_default(TemplateId::RecognizeSimple, fenced(OTHER_TABLE)),
        ScriptEntry::template_default(TemplateId::Reflection, "IMAGE_2"),
    ]));
    let config = PipelineConfig {
        call_budget: Some(2),
        ..PipelineConfig::default()
    };
    let p = pipeline(&mock, config);
    let (report, _) = p.run_sample("t", &f.test, None, &f.store);
    assert!(report.error.is_some());
    assert!(report.model_calls.len() <= 2);
}
