//! C ABI over the keystep planner.
//!
//! Every fallible call returns a `KsStatus`; on failure the message is
//! available from `ks_last_error_message` on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use keystep::config::PipelineConfig;
use keystep::corpus::{parse_corpus, Corpus, ParseOptions};
use keystep::difficulty::{normalize_step_weights, step_difficulty};
use keystep::loss_shaping::{evaluate_loss, LossSpec};
use keystep::schedule::BudgetCurve;
use keystep::selection::{Candidate, SelectionProblem};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsStatus {
    Ok = 0,
    Usage = 1,
    Validation = 2,
    Numeric = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    Panic = 6,
}

/// Parsed corpus handle.
pub struct KsCorpus {
    inner: Corpus,
}

/// Budget curve handle.
pub struct KsBudgetCurve {
    inner: BudgetCurve,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &keystep::Error) -> KsStatus {
    match e.exit_code() {
        2 => KsStatus::Validation,
        3 => KsStatus::Numeric,
        _ => KsStatus::Usage,
    }
}

/// Runs `f`, recording any error or panic for `ks_last_error_message`.
fn guard(f: impl FnOnce() -> Result<(), KsStatus>) -> KsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            KsStatus::Panic
        }
    }
}

fn fail(e: keystep::Error) -> KsStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> KsStatus {
    set_error(format!("`{what}` is null"));
    KsStatus::NullPointer
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, KsStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| {
        set_error(format!("`{what}` is not valid UTF-8"));
        KsStatus::InvalidUtf8
    })
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], KsStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Last error message on this thread, or null. Valid until the next
/// `ks_` call on the same thread.
#[no_mangle]
pub extern "C" fn ks_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ks_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from a `ks_` function documented as returning an owned
/// string, or be null.
#[no_mangle]
pub unsafe extern "C" fn ks_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a corpus JSONL file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_corpus_load(
    path: *const c_char,
    lenient: bool,
    out: *mut *mut KsCorpus,
) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let opts = ParseOptions {
            lenient,
            ..Default::default()
        };
        let corpus = parse_corpus(&path, &opts).map_err(fail)?;
        *out = Box::into_raw(Box::new(KsCorpus { inner: corpus }));
        Ok(())
    })
}

/// Number of questions; 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle from `ks_corpus_load`.
#[no_mangle]
pub unsafe extern "C" fn ks_corpus_len(corpus: *const KsCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.inner.len())
}

/// Id of question `index` as an owned string (free with
/// `ks_string_free`), or null when out of range.
///
/// # Safety
/// `corpus` must be null or a live handle from `ks_corpus_load`.
#[no_mangle]
pub unsafe extern "C" fn ks_corpus_question_id(
    corpus: *const KsCorpus,
    index: usize,
) -> *mut c_char {
    corpus
        .as_ref()
        .and_then(|c| c.inner.questions.get(index))
        .and_then(|q| CString::new(q.id.as_str()).ok())
        .map_or(ptr::null_mut(), CString::into_raw)
}

/// # Safety
/// `corpus` must be null or a live handle from `ks_corpus_load`, not
/// already freed.
#[no_mangle]
pub unsafe extern "C" fn ks_corpus_free(corpus: *mut KsCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Runs the whole pipeline from a TOML config. `out_dir` may be null to
/// keep the configured output directory.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out_dir` must be null
/// or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ks_pipeline_run(
    config_path: *const c_char,
    out_dir: *const c_char,
) -> KsStatus {
    guard(|| {
        let path = path_arg(config_path, "config_path")?;
        let mut cfg = PipelineConfig::load(&path).map_err(fail)?;
        if !out_dir.is_null() {
            cfg.out = Some(path_arg(out_dir, "out_dir")?);
        }
        keystep::pipeline::run_pipeline(&cfg).map_err(fail)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_budget_curve_new(
    b: f64,
    c0: f64,
    p: f64,
    terminal_stage: usize,
    out: *mut *mut KsBudgetCurve,
) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = BudgetCurve::new(b, c0, p, terminal_stage).map_err(fail)?;
        *out = Box::into_raw(Box::new(KsBudgetCurve { inner }));
        Ok(())
    })
}

/// Budget at stage `t`; NaN for a null handle.
///
/// # Safety
/// `curve` must be null or a live handle from `ks_budget_curve_new`.
#[no_mangle]
pub unsafe extern "C" fn ks_budget_curve_at(curve: *const KsBudgetCurve, t: f64) -> f64 {
    curve.as_ref().map_or(f64::NAN, |c| c.inner.budget_at(t))
}

/// # Safety
/// `curve` must be null or a live handle from `ks_budget_curve_new`, not
/// already freed.
#[no_mangle]
pub unsafe extern "C" fn ks_budget_curve_free(curve: *mut KsBudgetCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

unsafe fn problem(
    increments: *const f64,
    clusters: *const usize,
    n: usize,
    n_clusters: usize,
    budget: f64,
    beta: f64,
) -> Result<SelectionProblem, KsStatus> {
    let inc = slice_arg(increments, n, "increments")?;
    let cl = slice_arg(clusters, n, "clusters")?;
    let candidates = inc
        .iter()
        .zip(cl)
        .enumerate()
        .map(|(i, (&increment, &cluster))| Candidate {
            id: format!("{i:08}"),
            increment,
            cluster,
        })
        .collect();
    SelectionProblem::new(candidates, budget, n_clusters, beta).map_err(fail)
}

/// Budgeted selection over `n` candidates. Writes 1 into `selected[i]` for
/// chosen candidates and 0 otherwise.
///
/// # Safety
/// `increments` and `clusters` must hold `n` elements; `selected` must
/// have room for `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn ks_select_ftgp(
    increments: *const f64,
    clusters: *const usize,
    n: usize,
    n_clusters: usize,
    budget: f64,
    beta: f64,
    epsilon: f64,
    selected: *mut u8,
) -> KsStatus {
    guard(|| {
        let p = problem(increments, clusters, n, n_clusters, budget, beta)?;
        if n > 0 && selected.is_null() {
            return Err(null("selected"));
        }
        let picked = p.select_ftgp(epsilon).map_err(fail)?;
        let flags = std::slice::from_raw_parts_mut(selected, n);
        flags.fill(0);
        for i in picked {
            flags[i] = 1;
        }
        Ok(())
    })
}

/// Value of the subset flagged nonzero in `selected`.
///
/// # Safety
/// `increments`, `clusters` and `selected` must hold `n` elements; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_value_of(
    increments: *const f64,
    clusters: *const usize,
    n: usize,
    n_clusters: usize,
    budget: f64,
    beta: f64,
    selected: *const u8,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = problem(increments, clusters, n, n_clusters, budget, beta)?;
        let flags = slice_arg(selected, n, "selected")?;
        let set: Vec<usize> = (0..n).filter(|&i| flags[i] != 0).collect();
        *out = p.value_of_indices(&set);
        Ok(())
    })
}

/// Difficulty of one step of `n` tokens given raw token weights.
///
/// # Safety
/// `logprobs` and `weights` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_step_difficulty(
    logprobs: *const f64,
    weights: *const f64,
    n: usize,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let lp = slice_arg(logprobs, n, "logprobs")?;
        let w = slice_arg(weights, n, "weights")?;
        let hat = normalize_step_weights(w, (0, n)).map_err(fail)?;
        *out = step_difficulty(lp, &hat, (0, n)).map_err(fail)?;
        Ok(())
    })
}

/// Weighted loss over tokens `[gen_start, n)`; `weights` covers only that
/// range (`n - gen_start` elements).
///
/// # Safety
/// `logprobs` must hold `n` elements and `weights` `n - gen_start`; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_evaluate_loss(
    logprobs: *const f64,
    n: usize,
    gen_start: usize,
    weights: *const f64,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if gen_start > n {
            set_error(format!("gen_start {gen_start} beyond {n} tokens"));
            return Err(KsStatus::Usage);
        }
        let lp = slice_arg(logprobs, n, "logprobs")?;
        let w = slice_arg(weights, n - gen_start, "weights")?;
        let spec = LossSpec {
            t: 0,
            id: String::new(),
            input_end: gen_start,
            gen_start,
            gen_end: n,
            weights: w.to_vec(),
        };
        *out = evaluate_loss(&spec, lp).map_err(fail)?;
        Ok(())
    })
}
