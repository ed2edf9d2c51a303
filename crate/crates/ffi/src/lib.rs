//! C bindings for splitlab.
//!
//! Objects cross the boundary as opaque pointers created by `*_new` and
//! released by the matching `*_free`. Every fallible call returns a
//! [`SplStatus`]; the message of the last failure on the calling thread is
//! available from [`spl_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use splitlab::constants::MeanTable;
use splitlab::splitter::{splitter_moments, Family, SplitterSpec};
use splitlab::tree::{simulate_stats, SplitTreeParams};
use splitlab::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidSplitter = 2,
    UnsupportedSplitter = 3,
    InvalidParams = 4,
    InvalidArgument = 5,
    TooLarge = 6,
    Numerical = 7,
    Io = 8,
    Panic = 9,
    Other = 10,
}

/// Split tree parameters (b, s, s0, s1).
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplParams {
    pub b: u32,
    pub s: u32,
    pub s0: u32,
    pub s1: u32,
}

/// Opaque splitting distribution.
pub struct SplSplitter {
    spec: SplitterSpec,
}

/// Opaque table of exact means E[P_n] and optionally E[W_n].
pub struct SplMeanTable {
    table: MeanTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SplStatus {
    match e {
        Error::InvalidSplitter(_) => SplStatus::InvalidSplitter,
        Error::UnsupportedSplitter(_) => SplStatus::UnsupportedSplitter,
        Error::InvalidParams(_) | Error::ConfigInvalid(_) => SplStatus::InvalidParams,
        Error::InvalidArgument(_) | Error::RootNotSplit { .. } | Error::DimMismatch(..) => SplStatus::InvalidArgument,
        Error::TooLarge(_) => SplStatus::TooLarge,
        Error::QuadratureNotConverged(_) | Error::FitUnstable(_) | Error::StepBudgetExceeded(_) => SplStatus::Numerical,
        Error::Io(_) => SplStatus::Io,
        _ => SplStatus::Other,
    }
}

fn guard<F: FnOnce() -> Result<(), (SplStatus, String)>>(f: F) -> SplStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SplStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SplStatus::Panic
        }
    }
}

fn lift(e: Error) -> (SplStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SplStatus, String) {
    (SplStatus::NullPointer, format!("{what} is null"))
}

impl From<SplitTreeParams> for SplParams {
    fn from(p: SplitTreeParams) -> Self {
        SplParams { b: p.b as u32, s: p.s as u32, s0: p.s0 as u32, s1: p.s1 as u32 }
    }
}

impl SplParams {
    fn to_core(self) -> Result<SplitTreeParams, Error> {
        SplitTreeParams::new(self.b as usize, self.s as usize, self.s0 as usize, self.s1 as usize)
    }
}

fn checked_params(params: *const SplParams, spec: &SplitterSpec) -> Result<SplitTreeParams, (SplStatus, String)> {
    let p = unsafe { params.as_ref() }.ok_or_else(|| null("params"))?;
    let p = p.to_core().map_err(lift)?;
    p.check_splitter(spec).map_err(lift)?;
    Ok(p)
}

/// Message of the last error on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn spl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn new_splitter(out: *mut *mut SplSplitter, family: impl FnOnce() -> Result<Family, Error>) -> SplStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = family().and_then(SplitterSpec::new).map_err(lift)?;
        unsafe { *out = Box::into_raw(Box::new(SplSplitter { spec })) };
        Ok(())
    })
}

/// Splitter by name ("bst", "bary", "median", "beta", "dirichlet").
/// `b`, `k` and `beta` are ignored by families that do not use them;
/// `alpha` may be NULL when `alpha_len` is 0.
///
/// # Safety
/// `name` must be a NUL-terminated string and `alpha` must point to
/// `alpha_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn spl_splitter_new(
    name: *const c_char,
    b: u32,
    k: u32,
    alpha: *const f64,
    alpha_len: usize,
    beta: f64,
    out: *mut *mut SplSplitter,
) -> SplStatus {
    if name.is_null() {
        set_error("name is null".into());
        return SplStatus::NullPointer;
    }
    if alpha.is_null() && alpha_len > 0 {
        set_error("alpha is null".into());
        return SplStatus::NullPointer;
    }
    let name = match CStr::from_ptr(name).to_str() {
        Ok(s) => s.to_owned(),
        Err(_) => {
            set_error("name is not UTF-8".into());
            return SplStatus::InvalidArgument;
        }
    };
    let alpha: Vec<f64> = if alpha_len == 0 { Vec::new() } else { std::slice::from_raw_parts(alpha, alpha_len).to_vec() };
    new_splitter(out, || {
        Family::from_name(&name, Some(b as usize), Some(k as usize), &alpha, Some(beta))
    })
}

/// Uniform splitter of the binary search tree.
#[no_mangle]
pub extern "C" fn spl_splitter_new_bst(out: *mut *mut SplSplitter) -> SplStatus {
    new_splitter(out, || Ok(Family::BinarySearchTree))
}

/// Median of 2k + 1 uniforms.
#[no_mangle]
pub extern "C" fn spl_splitter_new_median(k: u32, out: *mut *mut SplSplitter) -> SplStatus {
    new_splitter(out, || Ok(Family::MedianOf { k: k as usize }))
}

/// # Safety
/// `splitter` must be NULL or a pointer returned by a `spl_splitter_new*`
/// function that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn spl_splitter_free(splitter: *mut SplSplitter) {
    if !splitter.is_null() {
        drop(Box::from_raw(splitter));
    }
}

/// Branching factor of the splitter.
///
/// # Safety
/// `splitter` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn spl_splitter_branching(splitter: *const SplSplitter) -> u32 {
    splitter.as_ref().map_or(0, |s| s.spec.b() as u32)
}

/// Default parameters for the splitter's family.
///
/// # Safety
/// `splitter` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spl_params_default(splitter: *const SplSplitter, out: *mut SplParams) -> SplStatus {
    guard(|| {
        let s = splitter.as_ref().ok_or_else(|| null("splitter"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = SplitTreeParams::default_for(s.spec.family()).into();
        Ok(())
    })
}

/// Writes 1/mu where mu = -b E[V ln V].
///
/// # Safety
/// `splitter` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spl_splitter_mu_inv(splitter: *const SplSplitter, out: *mut f64) -> SplStatus {
    guard(|| {
        let s = splitter.as_ref().ok_or_else(|| null("splitter"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = splitter_moments(&s.spec).map_err(lift)?.mu_inv();
        Ok(())
    })
}

/// Simulates `reps` trees with `n` balls and writes the path length and
/// Wiener index of each into `path_out` and `wiener_out` (as doubles).
/// Either output may be NULL.
///
/// # Safety
/// Handles must be live; each non-NULL output must hold `reps` doubles.
#[no_mangle]
pub unsafe extern "C" fn spl_simulate(
    splitter: *const SplSplitter,
    params: *const SplParams,
    n: u64,
    reps: usize,
    seed: u64,
    path_out: *mut f64,
    wiener_out: *mut f64,
) -> SplStatus {
    guard(|| {
        let s = splitter.as_ref().ok_or_else(|| null("splitter"))?;
        let p = checked_params(params, &s.spec)?;
        let stats = simulate_stats(&p, &s.spec, n, reps, seed).map_err(lift)?;
        for (i, (pl, w)) in stats.into_iter().enumerate() {
            if !path_out.is_null() {
                *path_out.add(i) = pl as f64;
            }
            if !wiener_out.is_null() {
                *wiener_out.add(i) = w as f64;
            }
        }
        Ok(())
    })
}

/// Computes exact means for n = 0..=n_max.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spl_mean_table_new(
    splitter: *const SplSplitter,
    params: *const SplParams,
    n_max: usize,
    with_wiener: bool,
    out: *mut *mut SplMeanTable,
) -> SplStatus {
    guard(|| {
        let s = splitter.as_ref().ok_or_else(|| null("splitter"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = checked_params(params, &s.spec)?;
        let table = MeanTable::compute(n_max, &p, &s.spec, with_wiener).map_err(lift)?;
        *out = Box::into_raw(Box::new(SplMeanTable { table }));
        Ok(())
    })
}

/// # Safety
/// `table` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spl_mean_table_free(table: *mut SplMeanTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Largest n in the table.
///
/// # Safety
/// `table` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn spl_mean_table_n_max(table: *const SplMeanTable) -> usize {
    table.as_ref().map_or(0, |t| t.table.n_max)
}

/// E[P_n].
///
/// # Safety
/// `table` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spl_mean_table_path(table: *const SplMeanTable, n: usize, out: *mut f64) -> SplStatus {
    guard(|| {
        let t = table.as_ref().ok_or_else(|| null("table"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = *t.table.ep.get(n).ok_or_else(|| out_of_range(n, t.table.n_max))?;
        Ok(())
    })
}

/// E[W_n]; fails with `InvalidArgument` when the table was built without it.
///
/// # Safety
/// `table` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spl_mean_table_wiener(table: *const SplMeanTable, n: usize, out: *mut f64) -> SplStatus {
    guard(|| {
        let t = table.as_ref().ok_or_else(|| null("table"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let ew = t.table.ew.as_ref().ok_or((SplStatus::InvalidArgument, "table has no Wiener means".into()))?;
        *out = *ew.get(n).ok_or_else(|| out_of_range(n, t.table.n_max))?;
        Ok(())
    })
}

fn out_of_range(n: usize, n_max: usize) -> (SplStatus, String) {
    (SplStatus::InvalidArgument, format!("n = {n} exceeds n_max = {n_max}"))
}
