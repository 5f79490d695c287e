//! C ABI over the fairstitch toolkit.
//!
//! Every fallible call returns an [`FsStatus`]; on failure the message is
//! available from [`fs_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Strings returned through
//! `char **` out-parameters are owned by the caller and released with
//! [`fs_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fairstitch::cli::{cmd_run, Context};
use fairstitch::config::{RunConfig, SyntheticConfig};
use fairstitch::datasets::{load_csv, synth_biased, TripletDataset};
use fairstitch::fairloss::ConstraintKind;
use fairstitch::fairmetrics::{self, EvalSettings};
use fairstitch::network::Network;
use fairstitch::pipeline::load_checkpoint;
use fairstitch::Error;

/// Result codes. Values 2 to 5 match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    ConfigError = 2,
    DataError = 3,
    Diverged = 4,
    IoError = 5,
    NullPointer = 10,
    InvalidArgument = 11,
    Panic = 12,
}

/// Constraint used for the AF column of an evaluation.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsConstraint {
    None = 0,
    EqualizedOdds = 1,
    AccuracyEquality = 2,
    MaxMinFairness = 3,
}

impl From<FsConstraint> for ConstraintKind {
    fn from(c: FsConstraint) -> Self {
        match c {
            FsConstraint::None => ConstraintKind::None,
            FsConstraint::EqualizedOdds => ConstraintKind::EqualizedOdds,
            FsConstraint::AccuracyEquality => ConstraintKind::AccuracyEquality,
            FsConstraint::MaxMinFairness => ConstraintKind::MaxMinFairness,
        }
    }
}

/// Opaque feature/group/label dataset.
pub struct FsDataset(TripletDataset);

/// Opaque network, possibly with a stitch.
pub struct FsNetwork(Network);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FsStatus {
    match e.exit_code() {
        2 => FsStatus::ConfigError,
        4 => FsStatus::Diverged,
        5 => FsStatus::IoError,
        _ => FsStatus::DataError,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FsStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            FsStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            FsStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn path(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(value);
    Ok(())
}

fn binary(v: &[u8], what: &str) -> Result<(), Fail> {
    match v.iter().position(|&x| x > 1) {
        Some(i) => Err(Fail::Arg(format!("{what}[{i}] = {} is not 0 or 1", v[i]))),
        None => Ok(()),
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next fallible call on the same thread.
#[no_mangle]
pub extern "C" fn fs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn fs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------- datasets

/// Loads a `f0,...,a,y` CSV file.
///
/// # Safety
/// `path_utf8` must be a NUL-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_load_csv(
    path_utf8: *const c_char,
    out: *mut *mut FsDataset,
) -> FsStatus {
    guard(|| {
        let ds = load_csv(path(path_utf8, "path")?)?;
        write_out(out, Box::into_raw(Box::new(FsDataset(ds))), "out")
    })
}

/// Draws the default biased synthetic dataset with `n` rows of `d` features.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_synthetic(
    n: usize,
    d: usize,
    seed: u64,
    out: *mut *mut FsDataset,
) -> FsStatus {
    guard(|| {
        let cfg = SyntheticConfig {
            n,
            d,
            ..SyntheticConfig::default()
        };
        let ds = synth_biased(&cfg.spec(seed))?;
        write_out(out, Box::into_raw(Box::new(FsDataset(ds))), "out")
    })
}

/// Number of rows; 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_len(ds: *const FsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Feature width; 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_dim(ds: *const FsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.dim())
}

/// Writes the `(y,a)` cell counts in the order (0,0), (0,1), (1,0), (1,1).
///
/// # Safety
/// `ds` must be a live dataset handle; `out` must hold 4 elements.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_cell_counts(ds: *const FsDataset, out: *mut usize) -> FsStatus {
    guard(|| {
        let counts = non_null(ds, "dataset")?.0.cell_counts().as_array();
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        ptr::copy_nonoverlapping(counts.as_ptr(), out, 4);
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_free(ds: *mut FsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

// ---------------------------------------------------------------- networks

/// Glorot-initialized MLP with widths `dims[0..len]`; the last width must be 2.
///
/// # Safety
/// `dims` must point to `len` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_network_init_mlp(
    dims: *const usize,
    len: usize,
    seed: u64,
    out: *mut *mut FsNetwork,
) -> FsStatus {
    guard(|| {
        let net = Network::init_mlp(slice(dims, len, "dims")?, seed)?;
        write_out(out, Box::into_raw(Box::new(FsNetwork(net))), "out")
    })
}

/// Loads a checkpoint JSON file written by the pipeline.
///
/// # Safety
/// `path_utf8` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_network_load_checkpoint(
    path_utf8: *const c_char,
    out: *mut *mut FsNetwork,
) -> FsStatus {
    guard(|| {
        let (_, net) = load_checkpoint(path(path_utf8, "path")?)?;
        write_out(out, Box::into_raw(Box::new(FsNetwork(net))), "out")
    })
}

/// Input width; 0 for NULL.
///
/// # Safety
/// `net` must be NULL or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn fs_network_input_dim(net: *const FsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.input_dim())
}

/// Writes `P(y = 1)` for every row of `ds` into `out[0..len]`; `len` must
/// equal the dataset length.
///
/// # Safety
/// Handles must be live; `out` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn fs_network_predict(
    net: *const FsNetwork,
    ds: *const FsDataset,
    out: *mut f64,
    len: usize,
) -> FsStatus {
    guard(|| {
        let (net, ds) = (non_null(net, "network")?, non_null(ds, "dataset")?);
        if len != ds.0.len() {
            return Err(Fail::Arg(format!(
                "buffer holds {len} values, dataset has {} rows",
                ds.0.len()
            )));
        }
        let p = net.0.predict_proba(&ds.0.x)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        ptr::copy_nonoverlapping(p.as_ptr(), out, len);
        Ok(())
    })
}

/// Full metrics report of `net` on `ds` as a JSON object.
///
/// # Safety
/// Handles must be live; `out_json` must be writable. Free the result with
/// [`fs_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fs_network_evaluate_json(
    net: *const FsNetwork,
    ds: *const FsDataset,
    constraint: FsConstraint,
    out_json: *mut *mut c_char,
) -> FsStatus {
    guard(|| {
        let (net, ds) = (non_null(net, "network")?, non_null(ds, "dataset")?);
        let p = net.0.predict_proba(&ds.0.x)?;
        let rep = fairmetrics::evaluate(
            &p,
            &ds.0.y,
            &ds.0.a,
            &ds.0.name,
            constraint.into(),
            &EvalSettings::default(),
        )?;
        let text = serde_json::to_string(&rep).map_err(|e| Fail::Arg(e.to_string()))?;
        let c = CString::new(text).map_err(|e| Fail::Arg(e.to_string()))?;
        write_out(out_json, c.into_raw(), "out_json")
    })
}

/// # Safety
/// `net` must be NULL or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn fs_network_free(net: *mut FsNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

// ---------------------------------------------------------------- metrics

/// Balanced accuracy at `threshold`.
///
/// # Safety
/// `p` and `y` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_bacc(
    p: *const f64,
    y: *const u8,
    n: usize,
    threshold: f64,
    out: *mut f64,
) -> FsStatus {
    guard(|| {
        let y = slice(y, n, "y")?;
        binary(y, "y")?;
        write_out(
            out,
            fairmetrics::bacc(slice(p, n, "p")?, y, threshold)?,
            "out",
        )
    })
}

/// ROC AUC with ties counted as one half.
///
/// # Safety
/// `p` and `y` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_auc(p: *const f64, y: *const u8, n: usize, out: *mut f64) -> FsStatus {
    guard(|| {
        let y = slice(y, n, "y")?;
        binary(y, "y")?;
        write_out(out, fairmetrics::auc(slice(p, n, "p")?, y)?, "out")
    })
}

unsafe fn grouped(
    p: *const f64,
    y: *const u8,
    a: *const u8,
    n: usize,
    out: *mut f64,
    f: impl FnOnce(&[f64], &[u8], &[u8]) -> fairstitch::Result<f64>,
) -> FsStatus {
    guard(|| {
        let (y, a) = (slice(y, n, "y")?, slice(a, n, "a")?);
        binary(y, "y")?;
        binary(a, "a")?;
        write_out(out, f(slice(p, n, "p")?, y, a)?, "out")
    })
}

/// Equalized-odds difference: max of the TPR and FPR gaps between groups.
///
/// # Safety
/// `p`, `y` and `a` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_eo_diff(
    p: *const f64,
    y: *const u8,
    a: *const u8,
    n: usize,
    threshold: f64,
    out: *mut f64,
) -> FsStatus {
    grouped(p, y, a, n, out, |p, y, a| {
        fairmetrics::eo_diff(p, y, a, threshold)
    })
}

/// Accuracy-equality difference between groups.
///
/// # Safety
/// `p`, `y` and `a` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_ae_diff(
    p: *const f64,
    y: *const u8,
    a: *const u8,
    n: usize,
    threshold: f64,
    out: *mut f64,
) -> FsStatus {
    grouped(p, y, a, n, out, |p, y, a| {
        fairmetrics::ae_diff(p, y, a, threshold)
    })
}

/// Lowest accuracy over the four `(y,a)` cells.
///
/// # Safety
/// `p`, `y` and `a` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_worst_accuracy(
    p: *const f64,
    y: *const u8,
    a: *const u8,
    n: usize,
    threshold: f64,
    out: *mut f64,
) -> FsStatus {
    grouped(p, y, a, n, out, |p, y, a| {
        fairmetrics::worst_accuracy(p, y, a, threshold)
    })
}

/// Area between the two groups' ROC curves on a uniform grid of `grid` points.
///
/// # Safety
/// `p`, `y` and `a` must point to `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_abroca(
    p: *const f64,
    y: *const u8,
    a: *const u8,
    n: usize,
    grid: usize,
    out: *mut f64,
) -> FsStatus {
    grouped(p, y, a, n, out, |p, y, a| {
        fairmetrics::abroca(p, y, a, grid)
    })
}

// ---------------------------------------------------------------- pipeline

/// Runs the whole pipeline (data, pretraining, both fine-tuning methods,
/// evaluation, interpolation, report) into `out_dir`. A NULL `config_path`
/// uses the default configuration.
///
/// # Safety
/// `config_path` must be NULL or NUL-terminated; `out_dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fs_run_pipeline(
    config_path: *const c_char,
    out_dir: *const c_char,
) -> FsStatus {
    guard(|| {
        let cfg = if config_path.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(path(config_path, "config_path")?)?
        };
        let ctx = Context::new(cfg, path(out_dir, "out_dir")?)?;
        cmd_run(&ctx)?;
        Ok(())
    })
}
