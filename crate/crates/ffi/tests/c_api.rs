use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tablekit_ffi::*;

fn mini() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/mini")
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    tk_string_free(s);
    out
}

fn parse(text: &str) -> *mut TkMarkup {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { tk_markup_parse(cstr(text).as_ptr(), false, &mut m) },
        TkStatus::Ok
    );
    m
}

#[test]
fn teds_through_handles() {
    let a = parse("<table><tr><td>a</td><td>b</td></tr></table>");
    let b = parse("<table><tr><td>a</td><td>c</td></tr></table>");
    let (mut full, mut structure) = (0.0, 0.0);
    unsafe {
        assert_eq!(tk_teds(a, b, false, &mut full), TkStatus::Ok);
        assert_eq!(tk_teds(a, b, true, &mut structure), TkStatus::Ok);
        tk_markup_free(a);
        tk_markup_free(b);
    }
    assert!(full < 1.0);
    assert_eq!(structure, 1.0);
}

#[test]
fn malformed_markup_reports_parse_error() {
    let mut m = ptr::null_mut();
    let status = unsafe { tk_markup_parse(cstr("<table><tr><td>x").as_ptr(), false, &mut m) };
    assert_eq!(status, TkStatus::Parse);
    assert!(m.is_null());
    assert!(!tk_last_error().is_null());
}

#[test]
fn micro_f1_matches_hand_value() {
    let mut f1 = 0.0;
    let status = unsafe {
        tk_micro_f1(
            cstr(r#"["a","b"]"#).as_ptr(),
            cstr(r#"["a","b","c"]"#).as_ptr(),
            &mut f1,
        )
    };
    assert_eq!(status, TkStatus::Ok);
    assert!((f1 - 0.8).abs() < 1e-12);
}

#[test]
fn cells_to_markup() {
    let rec = r#"{"id":"x","image_path":"x.png","cells":[
        {"start_row":0,"end_row":0,"start_col":0,"end_col":1,"content":"H"},
        {"start_row":1,"end_row":1,"start_col":0,"end_col":0,"content":"a"},
        {"start_row":1,"end_row":1,"start_col":1,"end_col":1,"content":"b"}]}"#;
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { tk_cells_to_markup(cstr(rec).as_ptr(), &mut out) },
        TkStatus::Ok
    );
    let markup = unsafe { take(out) };
    assert!(markup.contains("colspan=2>H</td>"), "{markup}");
}

#[test]
fn degrade_writes_png_and_rejects_unknown_codes() {
    let dir = tempfile::tempdir().unwrap();
    let input = cstr(mini().join("test/t01.png").to_str().unwrap());
    let output = dir.path().join("out.png");
    let output_c = cstr(output.to_str().unwrap());
    unsafe {
        assert_eq!(
            tk_degrade(input.as_ptr(), cstr("MB").as_ptr(), 0, output_c.as_ptr()),
            TkStatus::Ok
        );
        assert_eq!(
            tk_degrade(input.as_ptr(), cstr("XX").as_ptr(), 0, output_c.as_ptr()),
            TkStatus::InvalidArgument
        );
    }
    assert!(output.is_file());
}

#[test]
fn store_and_runner_over_the_mini_corpus() {
    let store_dir = cstr(mini().join("store").to_str().unwrap());
    let mut store = ptr::null_mut();
    let mut len = 0;
    unsafe {
        assert_eq!(tk_store_open(store_dir.as_ptr(), &mut store), TkStatus::Ok);
        assert_eq!(tk_store_len(store, &mut len), TkStatus::Ok);
        let query = cstr(mini().join("store/images/nb03.png").to_str().unwrap());
        let (mut id, mut sim) = (ptr::null_mut(), 0.0);
        assert_eq!(tk_store_nearest(store, query.as_ptr(), &mut id, &mut sim), TkStatus::Ok);
        assert_eq!(take(id), "nb03");
        assert_eq!(sim, 1.0);
        tk_store_free(store);
    }
    assert_eq!(len, 16);

    let config = cstr(mini().join("run.toml").to_str().unwrap());
    let mut runner = ptr::null_mut();
    unsafe {
        assert_eq!(
            tk_runner_open(config.as_ptr(), store_dir.as_ptr(), &mut runner),
            TkStatus::Ok
        );
        let image = cstr(mini().join("test/t01.png").to_str().unwrap());
        let mut json = ptr::null_mut();
        let status = tk_runner_run(runner, cstr("t01").as_ptr(), image.as_ptr(), ptr::null(), &mut json);
        assert_eq!(status, TkStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(report["sample_id"], "t01");
        assert!(report["error"].is_null(), "{report}");
        assert!(report["final_markup"].as_str().unwrap().starts_with("<table>"));
        tk_runner_free(runner);
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tablekit.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "tk_markup_parse",
        "tk_teds",
        "tk_runner_run",
        "tk_last_error",
        "TK_STATUS_PANIC",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // Syntax check with the system C compiler when one is installed.
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"tablekit.h\"\nint main(void) { TkMarkup *m = 0; return tk_markup_parse(\"<table></table>\", false, &m); }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    if let Ok(status) = status {
        assert!(status.success(), "header does not compile");
    }
}
