//! C ABI over the suite problems and the experiment harness.
//!
//! Every fallible call returns a [`CodaStatus`]; on failure the message is
//! available from [`coda_last_error`] on the same thread. Handles are opaque
//! and owned by the caller until passed to their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use coda::harness::{csv_string, parse_config, run_experiment, SeedRun};
use coda::oracle::{full_gradient, objective};
use coda::problems::{build_problem, ProblemParams};
use coda::{CodaError, PrimalDualPoint, Problem, Vector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Bad config, parameter or problem name.
    Validation = 3,
    /// Capability, numeric or other runtime failure.
    Runtime = 4,
    Io = 5,
    Shape = 6,
    Panic = 7,
}

/// Suite problem handle.
pub struct CodaProblem {
    inner: Box<dyn Problem>,
}

/// Results of a multi-seed experiment.
pub struct CodaExperiment {
    runs: Vec<SeedRun>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CodaDims {
    pub d_x: usize,
    pub d_y: usize,
    pub d_z: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &CodaError) -> CodaStatus {
    match err {
        CodaError::Shape(_) => CodaStatus::Shape,
        CodaError::Io { .. } => CodaStatus::Io,
        e if e.exit_code() == 1 => CodaStatus::Validation,
        _ => CodaStatus::Runtime,
    }
}

fn fail(status: CodaStatus, msg: &str) -> CodaStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), CodaStatus>) -> CodaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CodaStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(CodaStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: coda::Result<T>) -> Result<T, CodaStatus> {
    r.map_err(|e| fail(status_of(&e), &e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, CodaStatus> {
    if p.is_null() {
        return Err(fail(CodaStatus::NullArgument, &format!("{what} is null")));
    }
    // SAFETY: caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(CodaStatus::InvalidUtf8, &format!("{what} is not UTF-8")))
}

fn nonnull<T>(p: *const T, what: &str) -> Result<(), CodaStatus> {
    if p.is_null() {
        Err(fail(CodaStatus::NullArgument, &format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn coda_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn coda_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a suite problem. `params` is null or `key=value` pairs separated
/// by `;` or newlines.
///
/// # Safety
/// `name` and `params` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coda_problem_new(
    name: *const c_char,
    params: *const c_char,
    out: *mut *mut CodaProblem,
) -> CodaStatus {
    guard(|| {
        nonnull(out, "out")?;
        let name = unsafe { str_arg(name, "name") }?;
        let mut pp = ProblemParams::new();
        if !params.is_null() {
            let text = unsafe { str_arg(params, "params") }?;
            for kv in text.split([';', '\n']).map(str::trim).filter(|s| !s.is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| fail(CodaStatus::Validation, &format!("expected key=value, got '{kv}'")))?;
                pp.set(k.trim(), v.trim());
            }
        }
        let problem = lift(build_problem(name, &pp))?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(CodaProblem { inner: problem })) };
        Ok(())
    })
}

/// # Safety
/// `problem` must be null or a handle from [`coda_problem_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coda_problem_free(problem: *mut CodaProblem) {
    if !problem.is_null() {
        // SAFETY: ownership returns to Rust exactly once.
        drop(unsafe { Box::from_raw(problem) });
    }
}

/// # Safety
/// `problem` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coda_problem_dims(problem: *const CodaProblem, out: *mut CodaDims) -> CodaStatus {
    guard(|| {
        nonnull(problem, "problem")?;
        nonnull(out, "out")?;
        let m = unsafe { &*problem }.inner.meta();
        unsafe { *out = CodaDims { d_x: m.d_x, d_y: m.d_y, d_z: m.d_z } };
        Ok(())
    })
}

unsafe fn point(p: &dyn Problem, x: *const f64, nx: usize, y: *const f64, ny: usize) -> Result<PrimalDualPoint, CodaStatus> {
    nonnull(x, "x")?;
    nonnull(y, "y")?;
    let m = p.meta();
    if nx != m.d_x || ny != m.d_y {
        return Err(fail(
            CodaStatus::Shape,
            &format!("expected lengths ({}, {}), got ({nx}, {ny})", m.d_x, m.d_y),
        ));
    }
    // SAFETY: caller guarantees nx and ny readable doubles.
    let (xs, ys) = unsafe { (std::slice::from_raw_parts(x, nx), std::slice::from_raw_parts(y, ny)) };
    Ok(PrimalDualPoint::new(Vector::from_column_slice(xs), Vector::from_column_slice(ys)))
}

/// Full-expectation objective `F(x, y)`.
///
/// # Safety
/// `x` and `y` must point to `nx` and `ny` doubles, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coda_problem_objective(
    problem: *const CodaProblem,
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    out: *mut f64,
) -> CodaStatus {
    guard(|| {
        nonnull(problem, "problem")?;
        nonnull(out, "out")?;
        let p = unsafe { &*problem }.inner.as_ref();
        let w = unsafe { point(p, x, nx, y, ny) }?;
        let v = lift(objective(p, &w))?;
        unsafe { *out = v };
        Ok(())
    })
}

/// Full-expectation gradient, written to `gx` (length `nx`) and `gy` (length `ny`).
///
/// # Safety
/// `x`, `gx` must hold `nx` doubles and `y`, `gy` must hold `ny` doubles.
#[no_mangle]
pub unsafe extern "C" fn coda_problem_gradient(
    problem: *const CodaProblem,
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    gx: *mut f64,
    gy: *mut f64,
) -> CodaStatus {
    guard(|| {
        nonnull(problem, "problem")?;
        nonnull(gx, "gx")?;
        nonnull(gy, "gy")?;
        let p = unsafe { &*problem }.inner.as_ref();
        let w = unsafe { point(p, x, nx, y, ny) }?;
        let (a, b) = lift(full_gradient(p, &w))?;
        unsafe {
            ptr::copy_nonoverlapping(a.as_ptr(), gx, nx);
            ptr::copy_nonoverlapping(b.as_ptr(), gy, ny);
        }
        Ok(())
    })
}

/// Parses an experiment config (the CLI format) and runs every seed.
/// `threads == 0` uses all cores. Seeds that fail are counted by
/// [`coda_experiment_failed`] and left out of the CSV.
///
/// # Safety
/// `config` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coda_experiment_run(
    config: *const c_char,
    threads: usize,
    out: *mut *mut CodaExperiment,
) -> CodaStatus {
    guard(|| {
        nonnull(out, "out")?;
        let text = unsafe { str_arg(config, "config") }?;
        let cfg = lift(parse_config(text))?;
        let runs = lift(run_experiment(&cfg, (threads > 0).then_some(threads)))?;
        unsafe { *out = Box::into_raw(Box::new(CodaExperiment { runs })) };
        Ok(())
    })
}

/// Number of seeds in the experiment.
///
/// # Safety
/// `exp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coda_experiment_seeds(exp: *const CodaExperiment) -> usize {
    if exp.is_null() {
        return 0;
    }
    unsafe { &*exp }.runs.len()
}

/// Number of seeds whose run failed.
///
/// # Safety
/// `exp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coda_experiment_failed(exp: *const CodaExperiment) -> usize {
    if exp.is_null() {
        return 0;
    }
    unsafe { &*exp }.runs.iter().filter(|r| r.result.is_err()).count()
}

/// Trajectories as CSV text; release with [`coda_string_free`].
///
/// # Safety
/// `exp` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn coda_experiment_csv(exp: *const CodaExperiment, out: *mut *mut c_char) -> CodaStatus {
    guard(|| {
        nonnull(exp, "experiment")?;
        nonnull(out, "out")?;
        let runs = &unsafe { &*exp }.runs;
        let ok: Vec<_> = runs.iter().filter_map(|r| r.result.as_ref().ok().map(|res| (r.seed, res))).collect();
        let s = CString::new(csv_string(&ok)).map_err(|_| fail(CodaStatus::Runtime, "CSV contains NUL"))?;
        unsafe { *out = s.into_raw() };
        Ok(())
    })
}

/// # Safety
/// `exp` must be null or a handle from [`coda_experiment_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coda_experiment_free(exp: *mut CodaExperiment) {
    if !exp.is_null() {
        drop(unsafe { Box::from_raw(exp) });
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coda_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
