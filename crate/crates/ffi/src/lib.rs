//! C interface to tablekit.
//!
//! Every function returns a [`TkStatus`]. On failure the message for the
//! calling thread is available from [`tk_last_error`] until the next call
//! on that thread. Objects are opaque handles released with their `_free`
//! function; strings returned through out-parameters are released with
//! [`tk_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tablekit::config::RunConfig;
use tablekit::imaging::{degrade, Scenario, TableImage, Toolkit};
use tablekit::pipeline::Pipeline;
use tablekit::retrieval::NeighborStore;
use tablekit::table::{logical_to_matrix, matrix_to_markup, parse_markup, GroundTruthRecord, MarkupTree, ParseMode};
use tablekit::teds::{micro_f1, teds, TedsMode};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TkStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Io = 5,
    Config = 6,
    Retrieval = 7,
    Imaging = 8,
    Pipeline = 9,
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

type FfiResult<T> = Result<T, (TkStatus, String)>;

fn fail<E: std::fmt::Display>(status: TkStatus) -> impl FnOnce(E) -> (TkStatus, String) {
    move |e| (status, e.to_string())
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> TkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TkStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TkStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err((TkStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (TkStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| (TkStatus::NullArgument, format!("{name} is null")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| (TkStatus::NullArgument, format!("{name} is null")))
}

fn c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (TkStatus::InvalidArgument, "output contains a NUL byte".to_string()))
}

/// Message for the last failed call on this thread, or null. Owned by the
/// library.
#[no_mangle]
pub extern "C" fn tk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn tk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// A parsed table markup tree.
pub struct TkMarkup {
    tree: MarkupTree,
}

/// Parses table markup. `lenient` accepts unclosed tags and stray text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_markup_parse(text: *const c_char, lenient: bool, out: *mut *mut TkMarkup) -> TkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let mode = if lenient { ParseMode::Lenient } else { ParseMode::Strict };
        let parsed = parse_markup(str_arg(text, "text")?, mode).map_err(fail(TkStatus::Parse))?;
        *out = Box::into_raw(Box::new(TkMarkup { tree: parsed.tree }));
        Ok(())
    })
}

/// # Safety
/// `markup` must come from [`tk_markup_parse`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tk_markup_free(markup: *mut TkMarkup) {
    if !markup.is_null() {
        drop(Box::from_raw(markup));
    }
}

/// Number of nodes in the tree (table, rows and cells).
///
/// # Safety
/// `markup` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tk_markup_node_count(markup: *const TkMarkup, out: *mut usize) -> TkStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(markup, "markup")?.tree.node_count();
        Ok(())
    })
}

/// Normalized markup text of a parsed tree.
///
/// # Safety
/// `markup` must be a live handle; free the result with [`tk_string_free`].
#[no_mangle]
pub unsafe extern "C" fn tk_markup_to_string(markup: *const TkMarkup, out: *mut *mut c_char) -> TkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = c_string(handle(markup, "markup")?.tree.to_normalized_markup().into_string())?;
        Ok(())
    })
}

/// TEDS similarity in [0, 1]. `structure_only` ignores cell content.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_teds(
    pred: *const TkMarkup,
    gold: *const TkMarkup,
    structure_only: bool,
    out: *mut f64,
) -> TkStatus {
    guard(|| {
        let mode = if structure_only {
            TedsMode::StructOnly
        } else {
            TedsMode::Full
        };
        *out_arg(out, "out")? = teds(&handle(pred, "pred")?.tree, &handle(gold, "gold")?.tree, mode).value;
        Ok(())
    })
}

/// Micro-F1 between two JSON arrays of strings.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn tk_micro_f1(pred_json: *const c_char, gold_json: *const c_char, out: *mut f64) -> TkStatus {
    guard(|| {
        let parse = |p, name| -> FfiResult<Vec<String>> {
            serde_json::from_str(str_arg(p, name)?).map_err(fail(TkStatus::Parse))
        };
        let (pred, gold) = (parse(pred_json, "pred_json")?, parse(gold_json, "gold_json")?);
        *out_arg(out, "out")? = micro_f1(&pred, &gold);
        Ok(())
    })
}

/// Markup for one ground-truth record given as JSON (`id`, `image_path`,
/// `cells`).
///
/// # Safety
/// `record_json` must be a NUL-terminated string; free the result with
/// [`tk_string_free`].
#[no_mangle]
pub unsafe extern "C" fn tk_cells_to_markup(record_json: *const c_char, out: *mut *mut c_char) -> TkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let rec: GroundTruthRecord =
            serde_json::from_str(str_arg(record_json, "record_json")?).map_err(fail(TkStatus::Parse))?;
        let table = rec.to_table().map_err(fail(TkStatus::InvalidArgument))?;
        let matrix = logical_to_matrix(&table).map_err(fail(TkStatus::InvalidArgument))?;
        *out = c_string(matrix_to_markup(&matrix).into_string())?;
        Ok(())
    })
}

/// Writes `input` degraded by the scenario with the given code (BL, UE, OE,
/// UB, MB, TB, T20, T40) to `output` as PNG.
///
/// # Safety
/// All strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tk_degrade(
    input: *const c_char,
    scenario: *const c_char,
    seed: u64,
    output: *const c_char,
) -> TkStatus {
    guard(|| {
        let code = str_arg(scenario, "scenario")?;
        let scenario = Scenario::ALL
            .into_iter()
            .find(|s| s.code().eq_ignore_ascii_case(code))
            .ok_or_else(|| (TkStatus::InvalidArgument, format!("unknown scenario {code:?}")))?;
        let img = TableImage::load(str_arg(input, "input")?, "input").map_err(fail(TkStatus::Imaging))?;
        let out = degrade(&img, scenario, seed, &Default::default()).map_err(fail(TkStatus::Imaging))?;
        out.save(str_arg(output, "output")?).map_err(fail(TkStatus::Io))
    })
}

/// An opened neighbor store.
pub struct TkStore {
    store: NeighborStore,
}

/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_store_open(dir: *const c_char, out: *mut *mut TkStore) -> TkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let store = NeighborStore::open(str_arg(dir, "dir")?).map_err(fail(TkStatus::Retrieval))?;
        *out = Box::into_raw(Box::new(TkStore { store }));
        Ok(())
    })
}

/// # Safety
/// `store` must come from [`tk_store_open`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tk_store_free(store: *mut TkStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// # Safety
/// `store` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tk_store_len(store: *const TkStore, out: *mut usize) -> TkStatus {
    guard(|| {
        *out_arg(out, "out")? = handle(store, "store")?.store.len();
        Ok(())
    })
}

/// Most similar stored image to the image at `image_path`.
///
/// # Safety
/// `store` must be a live handle; free `out_id` with [`tk_string_free`].
#[no_mangle]
pub unsafe extern "C" fn tk_store_nearest(
    store: *const TkStore,
    image_path: *const c_char,
    out_id: *mut *mut c_char,
    out_similarity: *mut f64,
) -> TkStatus {
    guard(|| {
        let store = &handle(store, "store")?.store;
        let out_id = out_arg(out_id, "out_id")?;
        let out_similarity = out_arg(out_similarity, "out_similarity")?;
        let img = TableImage::load(str_arg(image_path, "image_path")?, "query").map_err(fail(TkStatus::Imaging))?;
        let hits = store.retrieve_image(&img, 1).map_err(fail(TkStatus::Retrieval))?;
        let best = hits
            .first()
            .ok_or_else(|| (TkStatus::Retrieval, "store is empty".to_string()))?;
        *out_id = c_string(best.record.id.clone())?;
        *out_similarity = best.score;
        Ok(())
    })
}

/// A configured recognition pipeline together with its neighbor store.
pub struct TkRunner {
    pipeline: Pipeline,
    store: NeighborStore,
}

/// Builds a runner from a TOML run configuration and a store directory.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tk_runner_open(
    config_path: *const c_char,
    store_dir: *const c_char,
    out: *mut *mut TkRunner,
) -> TkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = RunConfig::load(Path::new(str_arg(config_path, "config_path")?)).map_err(fail(TkStatus::Config))?;
        let store = NeighborStore::open(str_arg(store_dir, "store_dir")?).map_err(fail(TkStatus::Retrieval))?;
        let gateway = cfg.gateway.build().map_err(fail(TkStatus::Config))?;
        let pipeline = Pipeline::new(gateway, Toolkit::new(cfg.toolkit.clone()), cfg.pipeline.clone())
            .map_err(fail(TkStatus::Config))?;
        *out = Box::into_raw(Box::new(TkRunner { pipeline, store }));
        Ok(())
    })
}

/// # Safety
/// `runner` must come from [`tk_runner_open`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tk_runner_free(runner: *mut TkRunner) {
    if !runner.is_null() {
        drop(Box::from_raw(runner));
    }
}

/// Recognizes one image and returns its run report as JSON. Per-sample
/// failures are reported inside the JSON, not as a status. `gold_markup`
/// may be null.
///
/// # Safety
/// `runner` must be a live handle; free the result with [`tk_string_free`].
#[no_mangle]
pub unsafe extern "C" fn tk_runner_run(
    runner: *const TkRunner,
    sample_id: *const c_char,
    image_path: *const c_char,
    gold_markup: *const c_char,
    out_report_json: *mut *mut c_char,
) -> TkStatus {
    guard(|| {
        let runner = handle(runner, "runner")?;
        let out = out_arg(out_report_json, "out_report_json")?;
        let id = str_arg(sample_id, "sample_id")?;
        let gold = opt_str_arg(gold_markup, "gold_markup")?
            .map(|g| parse_markup(g, ParseMode::Strict).map(|p| p.tree))
            .transpose()
            .map_err(fail(TkStatus::Parse))?;
        let img = TableImage::load(str_arg(image_path, "image_path")?, id).map_err(fail(TkStatus::Imaging))?;
        let (report, _) = runner.pipeline.run_sample(id, &img, gold.as_ref(), &runner.store);
        *out = c_string(serde_json::to_string(&report).map_err(fail(TkStatus::Pipeline))?)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_arguments_set_the_error() {
        let mut out = ptr::null_mut();
        let status = unsafe { tk_markup_parse(ptr::null(), false, &mut out) };
        assert_eq!(status, TkStatus::NullArgument);
        let msg = unsafe { CStr::from_ptr(tk_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "text is null");
    }

    #[test]
    fn success_clears_the_error() {
        set_error("old");
        let mut n = 0;
        let text = CString::new("<table><tr><td>a</td></tr></table>").unwrap();
        let mut m = ptr::null_mut();
        unsafe {
            assert_eq!(tk_markup_parse(text.as_ptr(), false, &mut m), TkStatus::Ok);
            assert_eq!(tk_markup_node_count(m, &mut n), TkStatus::Ok);
            tk_markup_free(m);
        }
        assert_eq!(n, 3);
        assert!(tk_last_error().is_null());
    }
}
