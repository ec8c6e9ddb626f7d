//! C ABI over the factorization and scoring core.
//!
//! Every function returns a [`CsStatus`]; outputs go through pointer
//! arguments. Handles are opaque and owned by the caller once returned, so
//! each `*_new` or producing call pairs with the matching `*_free`. The
//! message of the most recent failure on the calling thread is available
//! from [`cs_last_error_message`].

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use cardiosep::bss;
use cardiosep::nmf::{self, AlphaNmfConfig, FactorizationResult};
use cardiosep::{Error, NonNegMatrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    Degenerate = 5,
    DependentReferences = 6,
    BufferTooSmall = 7,
    Internal = 99,
}

/// Non-negative row-major matrix.
pub struct CsMatrix(NonNegMatrix);

/// Result of one factorization run.
pub struct CsFactorization(FactorizationResult);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsNmfConfig {
    pub alpha: f64,
    pub rank: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub epsilon_floor: f64,
    pub seed: u64,
}

impl From<&AlphaNmfConfig> for CsNmfConfig {
    fn from(c: &AlphaNmfConfig) -> Self {
        CsNmfConfig {
            alpha: c.alpha,
            rank: c.rank,
            max_iter: c.max_iter,
            rel_tol: c.rel_tol,
            epsilon_floor: c.epsilon_floor,
            seed: c.seed,
        }
    }
}

impl From<&CsNmfConfig> for AlphaNmfConfig {
    fn from(c: &CsNmfConfig) -> Self {
        AlphaNmfConfig {
            alpha: c.alpha,
            rank: c.rank,
            max_iter: c.max_iter,
            rel_tol: c.rel_tol,
            epsilon_floor: c.epsilon_floor,
            seed: c.seed,
        }
    }
}

/// Scores in dB; infinite when the matching error energy vanishes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsBssScores {
    pub sdr_db: f64,
    pub sir_db: f64,
    pub sar_db: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CsStatus {
    match e {
        Error::Dimension(_) => CsStatus::DimensionMismatch,
        Error::NonFinite(_) => CsStatus::NonFinite,
        Error::Degenerate(_) => CsStatus::Degenerate,
        Error::DependentReferences => CsStatus::DependentReferences,
        Error::Config(_) | Error::InvalidInput(_) => CsStatus::InvalidArgument,
        _ => CsStatus::Internal,
    }
}

fn fail(status: CsStatus, msg: impl Into<String>) -> CsStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), CsStatus>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(CsStatus::Internal, "panic inside cardiosep"),
    }
}

fn lift<T>(r: cardiosep::Result<T>) -> Result<T, CsStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn nonnull<'a, T>(p: *const T, name: &str) -> Result<&'a T, CsStatus> {
    p.as_ref().ok_or_else(|| fail(CsStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn input_slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], CsStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(CsStatus::NullPointer, format!("`{name}` is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), CsStatus> {
    if out.is_null() {
        return Err(fail(CsStatus::NullPointer, format!("`{name}` is null")));
    }
    out.write(value);
    Ok(())
}

/// Copies `src` into `dst[..capacity]`, or reports the needed length.
unsafe fn copy_out(src: &[f64], dst: *mut f64, capacity: usize) -> Result<(), CsStatus> {
    if capacity < src.len() {
        return Err(fail(
            CsStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if dst.is_null() {
            return Err(fail(CsStatus::NullPointer, "`out` is null"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    Ok(())
}

/// Copies the thread's last error message, NUL-terminated and truncated to
/// `capacity`. Returns the full message length without the terminator.
///
/// # Safety
/// `buf` must be null or valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn cs_last_error_message(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub extern "C" fn cs_nmf_config_default() -> CsNmfConfig {
    CsNmfConfig::from(&AlphaNmfConfig::default())
}

/// Builds a `rows` x `cols` matrix from row-major `data`.
///
/// # Safety
/// `data` must be valid for `rows * cols` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut CsMatrix) -> CsStatus {
    guard(|| {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(CsStatus::InvalidArgument, "matrix size overflows"))?;
        let values = input_slice(data, len, "data")?.to_vec();
        let m = lift(NonNegMatrix::new(rows, cols, values))?;
        write_out(out, Box::into_raw(Box::new(CsMatrix(m))), "out")
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_free(m: *mut CsMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_shape(m: *const CsMatrix, rows: *mut usize, cols: *mut usize) -> CsStatus {
    guard(|| {
        let m = nonnull(m, "m")?;
        write_out(rows, m.0.rows(), "rows")?;
        write_out(cols, m.0.cols(), "cols")
    })
}

/// Copies the row-major entries into `out`, which must hold `rows * cols`.
///
/// # Safety
/// `m` must be a live handle; `out` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_copy_data(m: *const CsMatrix, out: *mut f64, capacity: usize) -> CsStatus {
    guard(|| copy_out(nonnull(m, "m")?.0.data(), out, capacity))
}

/// `D_alpha(Y || A X)` with `A X` floored at `epsilon_floor`.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_alpha_divergence(
    y: *const CsMatrix,
    a: *const CsMatrix,
    x: *const CsMatrix,
    alpha: f64,
    epsilon_floor: f64,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        let d = lift(nmf::alpha_divergence(
            &nonnull(y, "y")?.0,
            &nonnull(a, "a")?.0,
            &nonnull(x, "x")?.0,
            alpha,
            epsilon_floor,
        ))?;
        write_out(out, d, "out")
    })
}

/// # Safety
/// `y` must be a live handle, `config` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_factorize(
    y: *const CsMatrix,
    config: *const CsNmfConfig,
    out: *mut *mut CsFactorization,
) -> CsStatus {
    guard(|| {
        let cfg = AlphaNmfConfig::from(nonnull(config, "config")?);
        let r = lift(nmf::factorize(&nonnull(y, "y")?.0, &cfg))?;
        write_out(out, Box::into_raw(Box::new(CsFactorization(r))), "out")
    })
}

/// # Safety
/// `f` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cs_factorization_free(f: *mut CsFactorization) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// New handle holding a copy of the basis `A`.
///
/// # Safety
/// `f` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_factorization_basis(f: *const CsFactorization, out: *mut *mut CsMatrix) -> CsStatus {
    guard(|| {
        let a = nonnull(f, "f")?.0.a.clone();
        write_out(out, Box::into_raw(Box::new(CsMatrix(a))), "out")
    })
}

/// New handle holding a copy of the activations `X`.
///
/// # Safety
/// `f` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_factorization_activations(f: *const CsFactorization, out: *mut *mut CsMatrix) -> CsStatus {
    guard(|| {
        let x = nonnull(f, "f")?.0.x.clone();
        write_out(out, Box::into_raw(Box::new(CsMatrix(x))), "out")
    })
}

/// Iteration count, convergence flag and cost trace length.
///
/// # Safety
/// `f` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_factorization_summary(
    f: *const CsFactorization,
    iterations: *mut usize,
    converged: *mut bool,
    trace_len: *mut usize,
) -> CsStatus {
    guard(|| {
        let r = &nonnull(f, "f")?.0;
        write_out(iterations, r.iterations, "iterations")?;
        write_out(converged, r.converged, "converged")?;
        write_out(trace_len, r.cost_trace.len(), "trace_len")
    })
}

/// # Safety
/// `f` must be a live handle; `out` must be valid for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn cs_factorization_cost_trace(f: *const CsFactorization, out: *mut f64, capacity: usize) -> CsStatus {
    guard(|| copy_out(&nonnull(f, "f")?.0.cost_trace, out, capacity))
}

/// Scores `estimate` against reference `target` of `n_refs` references
/// stored back to back in `references`, each `len` samples long.
///
/// # Safety
/// `estimate` must be valid for `len` reads, `references` for
/// `n_refs * len` reads, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_bss_eval(
    estimate: *const f64,
    references: *const f64,
    len: usize,
    n_refs: usize,
    target: usize,
    out: *mut CsBssScores,
) -> CsStatus {
    guard(|| {
        let total = n_refs
            .checked_mul(len)
            .ok_or_else(|| fail(CsStatus::InvalidArgument, "reference size overflows"))?;
        let est = input_slice(estimate, len, "estimate")?;
        let flat = input_slice(references, total, "references")?;
        let refs: Vec<Vec<f64>> = if len == 0 {
            vec![Vec::new(); n_refs]
        } else {
            flat.chunks(len).map(<[f64]>::to_vec).collect()
        };
        let s = lift(bss::bss_eval(est, &refs, target))?;
        write_out(
            out,
            CsBssScores {
                sdr_db: s.sdr_db,
                sir_db: s.sir_db,
                sar_db: s.sar_db,
            },
            "out",
        )
    })
}
