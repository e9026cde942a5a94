//! C ABI over `lcbp`.
//!
//! Graphs and results are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`LcbpStatus`]; on failure the
//! message is available from [`lcbp_last_error`] on the same thread until
//! the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lcbp::bench::{max_linf_error, run_method, Method, MethodOutput, RunOptions};
use lcbp::cavity::{CavityEngine, CavityMethod};
use lcbp::exact::exact_marginals;
use lcbp::io::{load_factor_graph, parse_factor_graph, save_factor_graph};
use lcbp::models::{gen_k_factor, gen_regular_spin, spin_to_factor_graph, CouplingType, KFactorSpec, RegularSpinSpec};
use lcbp::{Error, FactorGraph, FactorTable};

/// Opaque factor graph.
pub struct LcbpGraph(FactorGraph);

/// Opaque inference result: one marginal per variable plus convergence data.
pub struct LcbpResult {
    marginals: Vec<FactorTable>,
    converged: bool,
    iterations: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LcbpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Capacity = 5,
    Degenerate = 6,
    Generation = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LcbpMethod {
    Mf = 0,
    Bp = 1,
    Lcbp = 2,
    LcbpCum = 3,
    LcbpCumLin = 4,
    Exact = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LcbpCavityInit {
    Uniform = 0,
    Bp = 1,
    Mf = 2,
    Exact = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct LcbpRunOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub cavity_init: LcbpCavityInit,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LcbpStatus {
    match e {
        Error::Domain(_) => LcbpStatus::InvalidArgument,
        Error::Parse { .. } => LcbpStatus::Parse,
        Error::Io(_) => LcbpStatus::Io,
        Error::Capacity { .. } => LcbpStatus::Capacity,
        Error::Degenerate(_) => LcbpStatus::Degenerate,
        Error::Generation(_) => LcbpStatus::Generation,
    }
}

struct Fail(LcbpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LcbpStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LcbpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LcbpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LcbpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail(LcbpStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn graph_arg<'a>(g: *const LcbpGraph) -> Result<&'a FactorGraph, Fail> {
    g.as_ref().map(|g| &g.0).ok_or_else(|| null("graph"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failing call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lcbp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a factor graph file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcbp_graph_read(path: *const c_char, out: *mut *mut LcbpGraph) -> LcbpStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        put(out, LcbpGraph(load_factor_graph(Path::new(p))?))
    })
}

/// Parses a factor graph from text in the file format.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcbp_graph_from_string(text: *const c_char, out: *mut *mut LcbpGraph) -> LcbpStatus {
    guard(|| put(out, LcbpGraph(parse_factor_graph(str_arg(text, "text")?)?)))
}

/// Writes a graph in the file format.
///
/// # Safety
/// `g` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lcbp_graph_write(g: *const LcbpGraph, path: *const c_char) -> LcbpStatus {
    guard(|| {
        let g = graph_arg(g)?;
        Ok(save_factor_graph(Path::new(str_arg(path, "path")?), g, &[])?)
    })
}

/// # Safety
/// `g` must be NULL or a graph from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lcbp_graph_free(g: *mut LcbpGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of variables, 0 for NULL.
///
/// # Safety
/// `g` must be NULL or a live graph.
#[no_mangle]
pub unsafe extern "C" fn lcbp_graph_num_vars(g: *const LcbpGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.num_vars())
}

/// Number of factors, 0 for NULL.
///
/// # Safety
/// `g` must be NULL or a live graph.
#[no_mangle]
pub unsafe extern "C" fn lcbp_graph_num_factors(g: *const LcbpGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.num_factors())
}

/// # Safety
/// `g` must be a live graph and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcbp_graph_cardinality(g: *const LcbpGraph, var: usize, out: *mut usize) -> LcbpStatus {
    guard(|| {
        let g = graph_arg(g)?;
        if var >= g.num_vars() {
            return Err(Fail(LcbpStatus::InvalidArgument, format!("variable {var} out of range")));
        }
        let out = out.as_mut().ok_or_else(|| null("output pointer"))?;
        *out = g.cardinality(var);
        Ok(())
    })
}

/// Random d-regular binary spin model as a factor graph.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcbp_gen_regular(
    n: usize,
    d: usize,
    beta: f64,
    theta: f64,
    attractive: bool,
    seed: u64,
    out: *mut *mut LcbpGraph,
) -> LcbpStatus {
    guard(|| {
        let spec = RegularSpinSpec {
            n,
            d,
            beta,
            theta,
            coupling: if attractive { CouplingType::Attractive } else { CouplingType::Mixed },
            seed,
        };
        put(out, LcbpGraph(spin_to_factor_graph(&gen_regular_spin(&spec)?)))
    })
}

/// Random graph of `m` binary factors over `k` variables each.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcbp_gen_kfactor(n: usize, m: usize, k: usize, beta: f64, seed: u64, out: *mut *mut LcbpGraph) -> LcbpStatus {
    guard(|| {
        let spec = KFactorSpec {
            n,
            m,
            k,
            beta,
            seed,
            tree: false,
        };
        put(out, LcbpGraph(gen_k_factor(&spec)?))
    })
}

#[no_mangle]
pub extern "C" fn lcbp_run_options_default() -> LcbpRunOptions {
    let d = RunOptions::default();
    LcbpRunOptions {
        tol: d.tol,
        max_iter: d.max_iter,
        damping: d.damping,
        cavity_init: LcbpCavityInit::Bp,
        seed: d.seed,
    }
}

fn to_result(o: MethodOutput) -> LcbpResult {
    LcbpResult {
        marginals: o.marginals,
        converged: o.converged,
        iterations: o.iterations,
    }
}

/// Runs one method. `opts` may be NULL for the defaults.
///
/// # Safety
/// `g` must be a live graph, `opts` NULL or valid, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcbp_run(g: *const LcbpGraph, method: LcbpMethod, opts: *const LcbpRunOptions, out: *mut *mut LcbpResult) -> LcbpStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let o = opts.as_ref().copied().unwrap_or_else(|| lcbp_run_options_default());
        let method = match method {
            LcbpMethod::Mf => Method::Mf,
            LcbpMethod::Bp => Method::Bp,
            LcbpMethod::Lcbp => Method::Lcbp,
            LcbpMethod::LcbpCum => Method::LcbpCum,
            LcbpMethod::LcbpCumLin => Method::LcbpCumLin,
            LcbpMethod::Exact => Method::Exact,
        };
        let cavity_init = match o.cavity_init {
            LcbpCavityInit::Uniform => CavityMethod::Uniform,
            LcbpCavityInit::Bp => CavityMethod::Clamped(CavityEngine::Bp),
            LcbpCavityInit::Mf => CavityMethod::Clamped(CavityEngine::Mf),
            LcbpCavityInit::Exact => CavityMethod::Clamped(CavityEngine::Exact),
        };
        let ro = RunOptions {
            tol: o.tol,
            max_iter: o.max_iter,
            damping: o.damping,
            cavity_init,
            seed: o.seed,
            ..RunOptions::default()
        };
        put(out, to_result(run_method(g, method, &ro)?))
    })
}

/// Exact single-variable marginals.
///
/// # Safety
/// `g` must be a live graph and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcbp_exact(g: *const LcbpGraph, out: *mut *mut LcbpResult) -> LcbpStatus {
    guard(|| {
        let g = graph_arg(g)?;
        put(
            out,
            LcbpResult {
                marginals: exact_marginals(g)?.marginals,
                converged: true,
                iterations: 0,
            },
        )
    })
}

/// # Safety
/// `r` must be NULL or a live result.
#[no_mangle]
pub unsafe extern "C" fn lcbp_result_converged(r: *const LcbpResult) -> bool {
    r.as_ref().is_some_and(|r| r.converged)
}

/// # Safety
/// `r` must be NULL or a live result.
#[no_mangle]
pub unsafe extern "C" fn lcbp_result_iterations(r: *const LcbpResult) -> usize {
    r.as_ref().map_or(0, |r| r.iterations)
}

/// # Safety
/// `r` must be NULL or a live result.
#[no_mangle]
pub unsafe extern "C" fn lcbp_result_num_vars(r: *const LcbpResult) -> usize {
    r.as_ref().map_or(0, |r| r.marginals.len())
}

/// Copies the marginal of `var` into `buf`, which must hold at least the
/// variable's cardinality. `len` is the capacity of `buf`.
///
/// # Safety
/// `r` must be a live result and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn lcbp_result_marginal(r: *const LcbpResult, var: usize, buf: *mut f64, len: usize) -> LcbpStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("result"))?;
        let m = r
            .marginals
            .get(var)
            .ok_or_else(|| Fail(LcbpStatus::InvalidArgument, format!("variable {var} out of range")))?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len < m.len() {
            return Err(Fail(LcbpStatus::InvalidArgument, format!("buffer holds {len} values, marginal has {}", m.len())));
        }
        ptr::copy_nonoverlapping(m.values().as_ptr(), buf, m.len());
        Ok(())
    })
}

/// # Safety
/// `r` must be NULL or a result from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lcbp_result_free(r: *mut LcbpResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Largest absolute difference between the marginals of two results.
///
/// # Safety
/// `a` and `b` must be live results and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lcbp_max_linf_error(a: *const LcbpResult, b: *const LcbpResult, out: *mut f64) -> LcbpStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| null("result"))?;
        let b = b.as_ref().ok_or_else(|| null("result"))?;
        let out = out.as_mut().ok_or_else(|| null("output pointer"))?;
        *out = max_linf_error(&a.marginals, &b.marginals)?;
        Ok(())
    })
}
