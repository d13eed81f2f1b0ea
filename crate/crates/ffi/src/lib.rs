//! C ABI for the `ideal` active-learning engine.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_load` function and released by the matching `*_free`. Every
//! fallible call returns an [`IdealStatus`]; on failure the message is kept
//! per thread and can be read with [`ideal_last_error`].
//!
//! Probability arrays are row-major `n × classes` blocks of doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ideal::config::{LoopConfig, Strategy};
use ideal::dataset::{generate_synthetic, load_dataset, Dataset, SyntheticSpec};
use ideal::engine::{CycleReport, Engine};
use ideal::nn::{kl_divergence, PredictionDist};
use ideal::{selector, Error};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdealStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    Config = 3,
    Usage = 4,
    Shape = 5,
    Numeric = 6,
    DegenerateVector = 7,
    UnknownId = 8,
    PoolExhausted = 9,
    Parse = 10,
    Integrity = 11,
    Io = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

/// Selection strategy codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdealStrategy {
    Ideal = 0,
    Random = 1,
    Entropy = 2,
    Coreset = 3,
}

impl From<IdealStrategy> for Strategy {
    fn from(s: IdealStrategy) -> Self {
        match s {
            IdealStrategy::Ideal => Strategy::Ideal,
            IdealStrategy::Random => Strategy::Random,
            IdealStrategy::Entropy => Strategy::Entropy,
            IdealStrategy::Coreset => Strategy::Coreset,
        }
    }
}

/// Opaque run configuration.
pub struct IdealConfig(LoopConfig);

/// Opaque dataset with min-max normalised features.
pub struct IdealDataset(Dataset);

/// Opaque active-learning loop.
pub struct IdealEngine {
    engine: Engine,
    last: Option<CycleReport>,
}

/// Scalar fields of one cycle. `mean_in_total` and `max_in_total` are NaN
/// when the inconsistency ranker did not run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IdealCycleSummary {
    pub cycle: usize,
    pub n_labeled: usize,
    pub accuracy: f64,
    pub mean_in_total: f64,
    pub max_in_total: f64,
    pub select_ms: f64,
    pub n_selected: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IdealStatus {
    match e {
        Error::Shape(_) => IdealStatus::Shape,
        Error::Usage(_) => IdealStatus::Usage,
        Error::Numeric(_) => IdealStatus::Numeric,
        Error::DegenerateVector(_) => IdealStatus::DegenerateVector,
        Error::UnknownId(_) => IdealStatus::UnknownId,
        Error::PoolExhausted { .. } => IdealStatus::PoolExhausted,
        Error::Config { .. } => IdealStatus::Config,
        Error::Parse { .. } => IdealStatus::Parse,
        Error::Integrity(_) => IdealStatus::Integrity,
        Error::Io { .. } => IdealStatus::Io,
    }
}

/// Internal failure carrying the status to report.
struct Failure(IdealStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(IdealStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IdealStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IdealStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside the ideal library".into());
            IdealStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(IdealStatus::InvalidString, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn dists(p: *const f64, n: usize, classes: usize, what: &str) -> Result<Vec<PredictionDist>, Failure> {
    let flat = slice_arg(p, n * classes, what)?;
    if classes == 0 {
        return Err(Failure(IdealStatus::Shape, "classes must be positive".into()));
    }
    flat.chunks(classes)
        .map(|row| PredictionDist::new(row.to_vec()).map_err(Failure::from))
        .collect()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn ideal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ideal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default configuration. Never null.
#[no_mangle]
pub extern "C" fn ideal_config_default() -> *mut IdealConfig {
    Box::into_raw(Box::new(IdealConfig(LoopConfig::default())))
}

/// Parses TOML text into a configuration.
///
/// # Safety
/// `toml` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ideal_config_from_toml(toml: *const c_char, out: *mut *mut IdealConfig) -> IdealStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = LoopConfig::from_toml_str(str_arg(toml, "toml")?)?;
        *out = Box::into_raw(Box::new(IdealConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ideal_config_free(config: *mut IdealConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn ideal_config_set_seed(config: *mut IdealConfig, seed: u64) -> IdealStatus {
    guard(|| {
        out_arg(config, "config")?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn ideal_config_set_strategy(config: *mut IdealConfig, strategy: IdealStrategy) -> IdealStatus {
    guard(|| {
        out_arg(config, "config")?.0.strategy = strategy.into();
        Ok(())
    })
}

/// # Safety
/// `config` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn ideal_config_set_budget(config: *mut IdealConfig, budget: usize, cycles: usize) -> IdealStatus {
    guard(|| {
        let c = &mut out_arg(config, "config")?.0;
        c.budget = budget;
        c.cycles = cycles;
        c.validate()?;
        Ok(())
    })
}

/// Loads and normalises a dataset file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_load(path: *const c_char, out: *mut *mut IdealDataset) -> IdealStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ds = load_dataset(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(IdealDataset(ds)));
        Ok(())
    })
}

/// Generates a class-balanced Gaussian-mixture dataset.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_synthetic(
    classes: usize,
    clusters_per_class: usize,
    per_class: usize,
    dim: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut IdealDataset,
) -> IdealStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ds = generate_synthetic(&SyntheticSpec {
            classes,
            clusters_per_class,
            per_class,
            dim,
            noise,
            seed,
        })?;
        *out = Box::into_raw(Box::new(IdealDataset(ds)));
        Ok(())
    })
}

/// Sample count, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_len(dataset: *const IdealDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `dataset` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_dim(dataset: *const IdealDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.dim)
}

/// # Safety
/// `dataset` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ideal_dataset_free(dataset: *mut IdealDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Creates a loop. The engine copies what it needs; both inputs may be
/// freed afterwards.
///
/// # Safety
/// `config` and `dataset` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ideal_engine_new(
    config: *const IdealConfig,
    dataset: *const IdealDataset,
    out: *mut *mut IdealEngine,
) -> IdealStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        let dataset = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let engine = Engine::new(&config.0, &dataset.0)?;
        *out = Box::into_raw(Box::new(IdealEngine { engine, last: None }));
        Ok(())
    })
}

/// Runs one cycle. Returns `PoolExhausted` once the pool cannot cover the budget.
///
/// # Safety
/// `engine` must be a live engine handle; `summary` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ideal_engine_run_cycle(engine: *mut IdealEngine, summary: *mut IdealCycleSummary) -> IdealStatus {
    guard(|| {
        let engine = out_arg(engine, "engine")?;
        let summary = out_arg(summary, "summary")?;
        let r = engine.engine.run_cycle()?;
        *summary = IdealCycleSummary {
            cycle: r.cycle,
            n_labeled: r.n_labeled,
            accuracy: r.accuracy,
            mean_in_total: r.mean_in_total.unwrap_or(f64::NAN),
            max_in_total: r.max_in_total.unwrap_or(f64::NAN),
            select_ms: r.select_ms,
            n_selected: r.selected.len(),
        };
        engine.last = Some(r);
        Ok(())
    })
}

/// Copies the ids selected in the most recent cycle into `ids`.
/// `written` receives the id count even when `capacity` is too small.
///
/// # Safety
/// `engine` must be a live engine handle; `ids` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ideal_engine_last_selected(
    engine: *const IdealEngine,
    ids: *mut u64,
    capacity: usize,
    written: *mut usize,
) -> IdealStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or_else(|| null("engine"))?;
        let written = out_arg(written, "written")?;
        let selected = engine.last.as_ref().map_or(&[][..], |r| r.selected.as_slice());
        *written = selected.len();
        if selected.len() > capacity {
            return Err(Failure(
                IdealStatus::BufferTooSmall,
                format!("{} ids do not fit in {capacity}", selected.len()),
            ));
        }
        if !selected.is_empty() {
            if ids.is_null() {
                return Err(null("ids"));
            }
            let dst = std::slice::from_raw_parts_mut(ids, selected.len());
            for (d, s) in dst.iter_mut().zip(selected) {
                *d = s.0;
            }
        }
        Ok(())
    })
}

/// Labeled count, or 0 for a null handle.
///
/// # Safety
/// `engine` must be null or a live engine handle.
#[no_mangle]
pub unsafe extern "C" fn ideal_engine_labeled_count(engine: *const IdealEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.engine.pool().n_labeled())
}

/// # Safety
/// `engine` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ideal_engine_free(engine: *mut IdealEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// `KL(p || q)` for two distributions over `classes` entries.
///
/// # Safety
/// `p` and `q` must hold `classes` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ideal_kl_divergence(p: *const f64, q: *const f64, classes: usize, out: *mut f64) -> IdealStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = dists(p, 1, classes, "p")?;
        let q = dists(q, 1, classes, "q")?;
        *out = kl_divergence(&p[0], &q[0])?;
        Ok(())
    })
}

/// Coarse inconsistency of `n` predictions (original first).
///
/// # Safety
/// `probs` must hold `n * classes` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ideal_coarse_inconsistency(probs: *const f64, n: usize, classes: usize, out: *mut f64) -> IdealStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = selector::coarse_inconsistency(&dists(probs, n, classes, "probs")?)?;
        Ok(())
    })
}

/// Fine inconsistency of `n` coarse predictions against `n` perturbed ones.
///
/// # Safety
/// `coarse` and `perturbed` must each hold `n * classes` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ideal_fine_inconsistency(
    coarse: *const f64,
    perturbed: *const f64,
    n: usize,
    classes: usize,
    out: *mut f64,
) -> IdealStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = dists(coarse, n, classes, "coarse")?;
        let p = dists(perturbed, n, classes, "perturbed")?;
        *out = selector::fine_inconsistency(&c, &p)?;
        Ok(())
    })
}

/// Entropy of one distribution.
///
/// # Safety
/// `probs` must hold `classes` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ideal_entropy(probs: *const f64, classes: usize, out: *mut f64) -> IdealStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = selector::entropy(&dists(probs, 1, classes, "probs")?[0]);
        Ok(())
    })
}

/// Share of `values` strictly below each value, written to `out`.
///
/// # Safety
/// `values` and `out` must each hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn ideal_percentiles(values: *const f64, n: usize, out: *mut f64) -> IdealStatus {
    guard(|| {
        let values = slice_arg(values, n, "values")?;
        if n == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, n);
        dst.copy_from_slice(&selector::percentiles(values));
        Ok(())
    })
}
