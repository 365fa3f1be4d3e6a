//! C ABI over `consult-core`.
//!
//! Every function returns a [`ConsultStatus`]; on anything other than
//! `CONSULT_STATUS_OK` a message is available from [`consult_last_error`] on the
//! same thread. Strings handed out by the library are released with
//! [`consult_string_free`], handles with their matching `_free` function.
//! Structured inputs and outputs are UTF-8 JSON.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use consult_core::case::{load_corpus, CaseRecord};
use consult_core::eval::{f1, normalize_to_icd, set_overlap_metrics, IcdIndex};
use consult_core::harness::{run_benchmark, stats, RunConfig};
use consult_core::taxonomy::{load_taxonomy, parse_action, ActionTaxonomy};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsultStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    Io = 4,
    Parse = 5,
    Invalid = 6,
    /// A run finished but at least one case failed.
    Partial = 7,
    Panic = 99,
}

pub struct ConsultTaxonomy(ActionTaxonomy);
pub struct ConsultIcdIndex(IcdIndex);
pub struct ConsultCorpus(Vec<CaseRecord>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(ConsultStatus, String);

impl Fail {
    fn new(status: ConsultStatus, e: impl ToString) -> Self {
        Fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<ConsultStatus, Fail>) -> ConsultStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ConsultStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(ConsultStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::new(ConsultStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::new(ConsultStatus::NullArgument, format!("{what} is null")))
}

unsafe fn give_string(out: *mut *mut c_char, s: String) -> Result<ConsultStatus, Fail> {
    let slot = out_ptr(out, "out")?;
    let c = CString::new(s).map_err(|e| Fail::new(ConsultStatus::Invalid, e))?;
    *slot = c.into_raw();
    Ok(ConsultStatus::Ok)
}

unsafe fn give_handle<T>(out: *mut *mut T, value: T) -> Result<ConsultStatus, Fail> {
    *out_ptr(out, "out")? = Box::into_raw(Box::new(value));
    Ok(ConsultStatus::Ok)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail::new(ConsultStatus::NullArgument, format!("{what} is null")))
}

fn json_set(text: &str) -> Result<BTreeSet<String>, Fail> {
    serde_json::from_str(text).map_err(|e| Fail::new(ConsultStatus::InvalidJson, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Fail> {
    serde_json::to_string(v).map_err(|e| Fail::new(ConsultStatus::Invalid, e))
}

/// Message for the last failed call on this thread, or null. Owned by the
/// library and valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn consult_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn consult_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn consult_taxonomy_bundled(out: *mut *mut ConsultTaxonomy) -> ConsultStatus {
    guard(|| give_handle(out, ConsultTaxonomy(ActionTaxonomy::bundled())))
}

/// # Safety
/// `path` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn consult_taxonomy_load(
    path: *const c_char,
    out: *mut *mut ConsultTaxonomy,
) -> ConsultStatus {
    guard(|| {
        let path = text(path, "path")?;
        let tax = load_taxonomy(path).map_err(|e| Fail::new(ConsultStatus::Invalid, e))?;
        give_handle(out, ConsultTaxonomy(tax))
    })
}

/// # Safety
/// `tax` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn consult_taxonomy_free(tax: *mut ConsultTaxonomy) {
    if !tax.is_null() {
        drop(Box::from_raw(tax));
    }
}

/// Parses an action line and writes its canonical rendering.
///
/// # Safety
/// Pointers must be valid; `text_in` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn consult_action_canonicalize(
    tax: *const ConsultTaxonomy,
    text_in: *const c_char,
    out: *mut *mut c_char,
) -> ConsultStatus {
    guard(|| {
        let tax = handle(tax, "taxonomy")?;
        let line = text(text_in, "text")?;
        let action = parse_action(line, &tax.0).map_err(|e| Fail::new(ConsultStatus::Parse, e))?;
        give_string(out, action.render())
    })
}

/// Harmonic mean of precision and recall on any common scale.
#[no_mangle]
pub extern "C" fn consult_f1(precision: f64, recall: f64) -> f64 {
    f1(precision, recall)
}

/// Precision and recall of two JSON string arrays.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn consult_set_overlap(
    predicted_json: *const c_char,
    truth_json: *const c_char,
    precision: *mut f64,
    recall: *mut f64,
) -> ConsultStatus {
    guard(|| {
        let predicted = json_set(text(predicted_json, "predicted")?)?;
        let truth = json_set(text(truth_json, "truth")?)?;
        let o = set_overlap_metrics(&predicted, &truth).map_err(|e| Fail::new(ConsultStatus::Invalid, e))?;
        *out_ptr(precision, "precision")? = o.precision;
        *out_ptr(recall, "recall")? = o.recall;
        Ok(ConsultStatus::Ok)
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn consult_icd_bundled(out: *mut *mut ConsultIcdIndex) -> ConsultStatus {
    guard(|| give_handle(out, ConsultIcdIndex(IcdIndex::bundled())))
}

/// # Safety
/// `path` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn consult_icd_load(
    path: *const c_char,
    out: *mut *mut ConsultIcdIndex,
) -> ConsultStatus {
    guard(|| {
        let path = text(path, "path")?;
        let index = IcdIndex::load(path).map_err(|e| Fail::new(ConsultStatus::Invalid, e))?;
        give_handle(out, ConsultIcdIndex(index))
    })
}

/// # Safety
/// `index` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn consult_icd_free(index: *mut ConsultIcdIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Maps a JSON array of entity strings to `{"codes": [...], "unmatched": [...]}`.
///
/// # Safety
/// Pointers must be valid; `entities_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn consult_icd_normalize(
    index: *const ConsultIcdIndex,
    entities_json: *const c_char,
    out: *mut *mut c_char,
) -> ConsultStatus {
    guard(|| {
        let index = handle(index, "index")?;
        let entities: Vec<String> = serde_json::from_str(text(entities_json, "entities")?)
            .map_err(|e| Fail::new(ConsultStatus::InvalidJson, e))?;
        give_string(out, to_json(&normalize_to_icd(&entities, &index.0))?)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn consult_corpus_load(
    path: *const c_char,
    out: *mut *mut ConsultCorpus,
) -> ConsultStatus {
    guard(|| {
        let path = text(path, "path")?;
        let cases = load_corpus(path).map_err(|e| Fail::new(ConsultStatus::Invalid, e))?;
        give_handle(out, ConsultCorpus(cases))
    })
}

/// Number of cases, or 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn consult_corpus_len(corpus: *const ConsultCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// Case id at `i` as a new string.
///
/// # Safety
/// `corpus` must be a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn consult_corpus_case_id(
    corpus: *const ConsultCorpus,
    i: usize,
    out: *mut *mut c_char,
) -> ConsultStatus {
    guard(|| {
        let corpus = handle(corpus, "corpus")?;
        let case = corpus
            .0
            .get(i)
            .ok_or_else(|| Fail::new(ConsultStatus::Invalid, format!("index {i} out of range")))?;
        give_string(out, case.case_id.clone())
    })
}

/// # Safety
/// `corpus` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn consult_corpus_free(corpus: *mut ConsultCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Runs a benchmark from a JSON run configuration and writes the run summary
/// as JSON. Returns `Partial` with the summary still written when some cases
/// failed.
///
/// # Safety
/// Pointers must be valid; `config_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn consult_run_benchmark(
    config_json: *const c_char,
    summary_out: *mut *mut c_char,
) -> ConsultStatus {
    guard(|| {
        let config: RunConfig = serde_json::from_str(text(config_json, "config")?)
            .map_err(|e| Fail::new(ConsultStatus::InvalidJson, e))?;
        let summary = run_benchmark(&config).map_err(|e| {
            let status = if e.is_configuration() {
                ConsultStatus::Invalid
            } else {
                ConsultStatus::Io
            };
            Fail::new(status, e)
        })?;
        give_string(summary_out, to_json(&summary)?)?;
        if summary.all_succeeded() {
            Ok(ConsultStatus::Ok)
        } else {
            set_error(format!("{} of {} cases failed", summary.failed.len(), summary.total));
            Ok(ConsultStatus::Partial)
        }
    })
}

/// Turn and score statistics for a transcript directory as JSON.
/// `metrics_path` may be null.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn consult_stats(
    transcripts_dir: *const c_char,
    metrics_path: *const c_char,
    out: *mut *mut c_char,
) -> ConsultStatus {
    guard(|| {
        let dir = PathBuf::from(text(transcripts_dir, "transcripts_dir")?);
        let metrics = if metrics_path.is_null() {
            None
        } else {
            Some(PathBuf::from(text(metrics_path, "metrics_path")?))
        };
        let doc = stats(&dir, metrics.as_deref()).map_err(|e| Fail::new(ConsultStatus::Io, e))?;
        give_string(out, to_json(&doc)?)
    })
}
