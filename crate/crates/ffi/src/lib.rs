//! C ABI over the qecs toolkit.
//!
//! Every fallible function returns a [`QecsStatus`]; on failure a message is kept
//! per thread and can be read with [`qecs_last_error`]. Handles are opaque and
//! must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use qecs::config::RunConfig;
use qecs::corpus::{tokenize_identifier, Source, TokenStream};
use qecs::encoder::EncoderModel;
use qecs::metrics::{self, RankResult};
use qecs::qse::Seq2SeqModel;
use qecs::ranker::{self, HybridConfig, RankMode, Ranker, SearchIndex};
use qecs::Error;

/// Result codes shared by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QecsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Io = 4,
    Checkpoint = 5,
    FingerprintMismatch = 6,
    MissingPrerequisite = 7,
    Config = 8,
    Panic = 9,
}

impl From<&Error> for QecsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_)
            | Error::Empty(_)
            | Error::DimensionMismatch { .. }
            | Error::NonFinite(_) => QecsStatus::InvalidInput,
            Error::Checkpoint(_) | Error::VersionMismatch { .. } => QecsStatus::Checkpoint,
            Error::FingerprintMismatch { .. } => QecsStatus::FingerprintMismatch,
            Error::MissingPrerequisite(_) => QecsStatus::MissingPrerequisite,
            Error::Config(_) => QecsStatus::Config,
            Error::Io(_) | Error::Parse { .. } | Error::Json(_) => QecsStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(QecsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

type Outcome<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> Outcome<()>) -> QecsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QecsStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            QecsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Outcome<&'a str> {
    if p.is_null() {
        return Err(Failure(QecsStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(QecsStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Outcome<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Outcome<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(QecsStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn out_arg<'a, T>(p: *mut T, name: &str) -> Outcome<&'a mut T> {
    unsafe { p.as_mut() }.ok_or_else(|| Failure(QecsStatus::NullPointer, format!("{name} is null")))
}

fn franks_of(franks: &[usize], pool_size: usize) -> Vec<RankResult> {
    franks
        .iter()
        .map(|&frank| RankResult { frank, pool_size })
        .collect()
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qecs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn qecs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Splits identifiers and prose into lowercase tokens, joined by single spaces.
/// The result must be released with [`qecs_string_free`].
///
/// # Safety
/// `text` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qecs_tokenize(text: *const c_char, out: *mut *mut c_char) -> QecsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = str_arg(text, "text")?;
        let joined = tokenize_identifier(text).join(" ");
        *out = CString::new(joined).expect("tokens hold no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn qecs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Mean reciprocal rank of 1-based ranks.
///
/// # Safety
/// `franks` must point to `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qecs_mrr(franks: *const usize, len: usize, out: *mut f64) -> QecsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let f = slice_arg(franks, len, "franks")?;
        let pool = f.iter().copied().max().unwrap_or(1);
        *out = metrics::mrr(&franks_of(f, pool))?;
        Ok(())
    })
}

/// Fraction of ranks at or below `k`.
///
/// # Safety
/// `franks` must point to `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qecs_recall_at_k(
    franks: *const usize,
    len: usize,
    k: usize,
    out: *mut f64,
) -> QecsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let f = slice_arg(franks, len, "franks")?;
        let pool = f.iter().copied().max().unwrap_or(1);
        *out = metrics::recall_at_k(&franks_of(f, pool), k)?;
        Ok(())
    })
}

/// Smoothed sentence BLEU-4 between two token id sequences.
///
/// # Safety
/// Each pointer must reference the stated number of ids.
#[no_mangle]
pub unsafe extern "C" fn qecs_bleu4(
    candidate: *const u32,
    candidate_len: usize,
    reference: *const u32,
    reference_len: usize,
    out: *mut f64,
) -> QecsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = slice_arg(candidate, candidate_len, "candidate")?;
        let r = slice_arg(reference, reference_len, "reference")?;
        *out = metrics::bleu4(c, r);
        Ok(())
    })
}

/// `beta * sim_enriched + (1 - beta) * sim_original`.
#[no_mangle]
pub extern "C" fn qecs_hybrid_score(sim_enriched: f64, sim_original: f64, beta: f64) -> f64 {
    ranker::hybrid_score(sim_enriched, sim_original, beta)
}

/// Loaded models and index for interactive search.
pub struct QecsSearcher {
    cs: EncoderModel,
    enricher: Option<Seq2SeqModel>,
    hybrid: HybridConfig,
    index: SearchIndex,
}

/// Ranked hits from one search.
pub struct QecsResults {
    hits: Vec<(CString, f64)>,
}

impl QecsSearcher {
    fn open(
        config: Option<&str>,
        workdir: Option<&str>,
        mode: Option<&str>,
        beta: f64,
    ) -> Outcome<Self> {
        let mut overrides = Vec::new();
        if let Some(w) = workdir {
            overrides.push((
                "paths.workdir".to_owned(),
                serde_json::to_string(w).expect("string"),
            ));
        }
        if let Some(m) = mode {
            overrides.push((
                "hybrid.mode".to_owned(),
                serde_json::to_string(m).expect("string"),
            ));
        }
        if !beta.is_nan() {
            overrides.push(("hybrid.beta".to_owned(), beta.to_string()));
        }
        let cfg = RunConfig::load(config.map(PathBuf::from).as_deref(), &overrides)?;
        let mode = cfg.hybrid.mode;
        if mode == RankMode::QeBaseline {
            return Err(Failure(
                QecsStatus::MissingPrerequisite,
                "qe_baseline is not available through the C interface".into(),
            ));
        }
        let cs = EncoderModel::load(&cfg.paths.checkpoint("cs"))?;
        let load = |name: &str| Seq2SeqModel::load(&cfg.paths.checkpoint(name));
        let enricher = match mode {
            RankMode::NoRl => Some(load("qse")?),
            RankMode::Hybrid | RankMode::EnrichedOnly => Some(load("rl")?),
            RankMode::BaseOnly | RankMode::QeBaseline => None,
        };
        let index = SearchIndex::load_for(&cfg.paths.index_file(), &cs)?;
        Ok(QecsSearcher {
            cs,
            enricher,
            hybrid: cfg.hybrid,
            index,
        })
    }

    fn ranker(&self) -> Outcome<Ranker<'_>> {
        Ok(Ranker::new(
            &self.cs,
            self.enricher.as_ref(),
            None,
            &self.hybrid,
        )?)
    }
}

/// Opens the checkpoints and index of a finished run.
///
/// `config_path`, `workdir` and `mode` may be null to keep the configured (or default)
/// values; pass NaN as `beta` to keep the configured weight.
///
/// # Safety
/// Non-null strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qecs_searcher_open(
    config_path: *const c_char,
    workdir: *const c_char,
    mode: *const c_char,
    beta: f64,
    out: *mut *mut QecsSearcher,
) -> QecsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = QecsSearcher::open(
            opt_str_arg(config_path, "config_path")?,
            opt_str_arg(workdir, "workdir")?,
            opt_str_arg(mode, "mode")?,
            beta,
        )?;
        *out = Box::into_raw(Box::new(s));
        Ok(())
    })
}

/// Number of indexed snippets.
///
/// # Safety
/// `searcher` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn qecs_searcher_len(searcher: *const QecsSearcher) -> usize {
    searcher.as_ref().map_or(0, |s| s.index.len())
}

/// Ranks the index against a free-text query and keeps the best `top_k` hits.
///
/// # Safety
/// `searcher` must be a live handle; `query` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qecs_searcher_search(
    searcher: *const QecsSearcher,
    query: *const c_char,
    top_k: usize,
    out: *mut *mut QecsResults,
) -> QecsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = searcher
            .as_ref()
            .ok_or_else(|| Failure(QecsStatus::NullPointer, "searcher is null".into()))?;
        let q = TokenStream::new(tokenize_identifier(str_arg(query, "query")?), Source::Query);
        let hits = ranker::search(&s.index, &s.ranker()?, &q, top_k)?
            .into_iter()
            .map(|(id, score)| (CString::new(id).expect("ids hold no NUL"), score))
            .collect();
        *out = Box::into_raw(Box::new(QecsResults { hits }));
        Ok(())
    })
}

/// # Safety
/// `searcher` must come from [`qecs_searcher_open`], or be null.
#[no_mangle]
pub unsafe extern "C" fn qecs_searcher_free(searcher: *mut QecsSearcher) {
    if !searcher.is_null() {
        drop(Box::from_raw(searcher));
    }
}

/// # Safety
/// `results` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn qecs_results_len(results: *const QecsResults) -> usize {
    results.as_ref().map_or(0, |r| r.hits.len())
}

/// Snippet id of hit `i`, or null when out of range. Owned by `results`.
///
/// # Safety
/// `results` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn qecs_results_id(results: *const QecsResults, i: usize) -> *const c_char {
    results
        .as_ref()
        .and_then(|r| r.hits.get(i))
        .map_or(ptr::null(), |h| h.0.as_ptr())
}

/// Score of hit `i`, or NaN when out of range.
///
/// # Safety
/// `results` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn qecs_results_score(results: *const QecsResults, i: usize) -> f64 {
    results
        .as_ref()
        .and_then(|r| r.hits.get(i))
        .map_or(f64::NAN, |h| h.1)
}

/// # Safety
/// `results` must come from [`qecs_searcher_search`], or be null.
#[no_mangle]
pub unsafe extern "C" fn qecs_results_free(results: *mut QecsResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}
