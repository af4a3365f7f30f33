//! End-to-end checks of the command-line tool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn tablekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tablekit"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn jsonl(p: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn mini_run(out: &Path, extra: &[&str]) -> Output {
    let mini = fixtures().join("mini");
    let (config, input, store) = (mini.join("run.toml"), mini.join("test.jsonl"), mini.join("store"));
    let mut args = vec![
        "run",
        "--config",
        path(&config),
        "--input",
        path(&input),
        "--store",
        path(&store),
        "--out",
        path(out),
    ];
    args.extend_from_slice(extra);
    tablekit(&args)
}

#[test]
fn version_lists_formats() {
    let out = tablekit(&["--version"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("neighbor store format"));
}

#[test]
fn ingest_pubtabnet_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let ann = fixtures().join("pubtabnet_mini/annotations.jsonl");
    let out = tablekit(&[
        "ingest",
        "--kind",
        "pubtabnet",
        "--input",
        path(&ann),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(jsonl(&dir.path().join("store/records.jsonl")).len(), 5);
    assert_eq!(jsonl(&dir.path().join("gt.jsonl")).len(), 5);
    assert!(dir.path().join("effective_config.toml").is_file());
}

#[test]
fn ingest_empty_and_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out_dir = dir.path().join("out");
    let out = tablekit(&[
        "ingest",
        "--kind",
        "pubtabnet",
        "--input",
        path(&empty),
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read_to_string(out_dir.join("store/records.jsonl")).unwrap(), "");

    let missing = dir.path().join("nope.jsonl");
    let out = tablekit(&[
        "ingest",
        "--kind",
        "pubtabnet",
        "--input",
        path(&missing),
        "--out",
        path(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_out_is_a_usage_error() {
    let out = tablekit(&["bench", "--input", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_matches_the_golden_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = mini_run(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let got: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let want: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixtures().join("mini/expected_summary.json")).unwrap()).unwrap();
    assert_eq!(got, want);
    for f in ["reports.jsonl", "timing.jsonl", "effective_config.toml"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn limit_and_no_exp_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let out = mini_run(dir.path(), &["--limit", "3", "--ablation", "no-exp"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let reports = jsonl(&dir.path().join("reports.jsonl"));
    assert_eq!(reports.len(), 3);
    for r in &reports {
        assert_eq!(r["chosen_plan"], r["candidate_plans"][0]);
        assert_eq!(r["scoreboard"], serde_json::json!([]));
    }
    let config = fs::read_to_string(dir.path().join("effective_config.toml")).unwrap();
    assert!(config.contains("experience_enabled = false"));
    assert!(config.contains("limit = 3"));
}

#[test]
fn record_flag_writes_a_replayable_script() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = mini_run(&first, &["--limit", "2", "--ablation", "direct", "--record"]);
    assert_eq!(out.status.code(), Some(0));
    let script = first.join("recorded_script.jsonl");
    assert_eq!(jsonl(&script).len(), 2);

    let second = dir.path().join("second");
    let out = mini_run(
        &second,
        &["--limit", "2", "--ablation", "direct", "--mock", path(&script)],
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        fs::read(first.join("reports.jsonl")).unwrap(),
        fs::read(second.join("reports.jsonl")).unwrap()
    );
}

#[test]
fn run_with_unanswerable_script_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("empty_script.jsonl");
    fs::write(&script, "").unwrap();
    let out = mini_run(
        &dir.path().join("out"),
        &["--limit", "2", "--ablation", "direct", "--mock", path(&script)],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(jsonl(&dir.path().join("out/reports.jsonl")).len(), 2);
}

#[test]
fn convert_spanning_header() {
    let out = tablekit(&["convert", "--input", path(&fixtures().join("spanning_header.jsonl"))]);
    assert!(out.status.success());
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "spanning_header\t<table><tr><td rowspan=1 colspan=2>A</td></tr><tr><td rowspan=1 colspan=1>B</td><td rowspan=1 colspan=1>C</td></tr></table>\n"
    );
}

#[test]
fn score_gold_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let gold = fixtures().join("mini/test.jsonl");
    let conv = dir.path().join("conv");
    assert!(tablekit(&["convert", "--input", path(&gold), "--out", path(&conv)])
        .status
        .success());
    let scores = dir.path().join("scores");
    let out = tablekit(&[
        "score",
        "--pred",
        path(&conv.join("markup.jsonl")),
        "--gold",
        path(&gold),
        "--out",
        path(&scores),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let lines = jsonl(&scores.join("scores.jsonl"));
    assert_eq!(lines.len(), 10);
    assert!(lines.iter().all(|l| l["teds"] == 1.0 && l["teds_struct"] == 1.0));
}

#[test]
fn degrade_all_scenarios_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let img = fixtures().join("mini/test/t01.png");
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = tablekit(&["degrade", "--input", path(&img), "--seed", "3", "--out", path(&out_dir)]);
        assert_eq!(out.status.code(), Some(0));
        let pngs = fs::read_dir(&out_dir)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
            .count();
        assert_eq!(pngs, 8);
        assert_eq!(jsonl(&out_dir.join("manifest.jsonl")).len(), 8);
        manifests.push(fs::read(out_dir.join("manifest.jsonl")).unwrap());
        assert_eq!(
            fs::read(out_dir.join("t01_T40.png")).unwrap(),
            fs::read(dir.path().join("a/t01_T40.png")).unwrap()
        );
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn bench_on_the_mini_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let mini = fixtures().join("mini");
    let out = tablekit(&[
        "bench",
        "--config",
        path(&mini.join("run.toml")),
        "--input",
        path(&mini.join("test.jsonl")),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bench_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["samples"], 10);
    assert_eq!(summary["full"].as_object().unwrap().len(), 6);
}
