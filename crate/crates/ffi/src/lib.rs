//! C ABI over the specreg library.
//!
//! Every call returns a `SpecregStatus`; results go through out-pointers. On a
//! nonzero status the message is available from `specreg_last_error` on the
//! same thread. Handles are opaque and must be released with their `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use specreg::experiments::{run_experiment, ExperimentConfig};
use specreg::index_fn::{IndexFunction, THETA_TOL};
use specreg::regularize::{bias, variance_trace, worst_case_error};
use specreg::spectral::xtk_norm;
use specreg::{FilterKind, FilterMethod, SpecregError, SpectralElement, SpectralOperator};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpecregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Domain = 4,
    BasisMismatch = 5,
    Structure = 6,
    NoConvergence = 7,
    FitRefused = 8,
    Io = 9,
    Panic = 10,
}

impl From<&SpecregError> for SpecregStatus {
    fn from(e: &SpecregError) -> Self {
        match e {
            SpecregError::Domain { .. } | SpecregError::OutOfRange { .. } => SpecregStatus::Domain,
            SpecregError::InvalidInput(_) | SpecregError::Json(_) | SpecregError::Csv(_) => SpecregStatus::InvalidInput,
            SpecregError::BasisMismatch { .. } => SpecregStatus::BasisMismatch,
            SpecregError::Structure(_) => SpecregStatus::Structure,
            SpecregError::NoConvergence { .. } => SpecregStatus::NoConvergence,
            SpecregError::FitRefused(_) => SpecregStatus::FitRefused,
            SpecregError::Io(_) => SpecregStatus::Io,
        }
    }
}

/// Index function κ.
pub struct SpecregIndexFn {
    inner: IndexFunction,
}

/// Filter method bound to an operator norm.
pub struct SpecregFilter {
    inner: FilterMethod,
}

/// Diagonal operator T*T.
pub struct SpecregOperator {
    inner: SpectralOperator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(SpecregStatus, String);

impl From<SpecregError> for Fail {
    fn from(e: SpecregError) -> Self {
        Fail(SpecregStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SpecregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpecregStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            SpecregStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail(SpecregStatus::NullPointer, "null pointer argument".into())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|e| Fail(SpecregStatus::InvalidUtf8, e.to_string()))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn specreg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map(|c| c.as_bytes()).unwrap_or(b"");
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn specreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses an index function from JSON, e.g. `{"kind":"power","nu":0.5}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_index_fn_from_json(json: *const c_char, out: *mut *mut SpecregIndexFn) -> SpecregStatus {
    guard(|| {
        let k: IndexFunction = serde_json::from_str(str_arg(json)?).map_err(SpecregError::from)?;
        k.validate()?;
        write(out, Box::into_raw(Box::new(SpecregIndexFn { inner: k })))
    })
}

/// # Safety
/// `h` must come from `specreg_index_fn_from_json` or be null.
#[no_mangle]
pub unsafe extern "C" fn specreg_index_fn_free(h: *mut SpecregIndexFn) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// κ(t)
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_index_fn_eval(h: *const SpecregIndexFn, t: f64, out: *mut f64) -> SpecregStatus {
    guard(|| write(out, handle(h)?.inner.eval(t)?))
}

/// Θ_κ⁻¹(y)
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_index_fn_theta_inverse(h: *const SpecregIndexFn, y: f64, out: *mut f64) -> SpecregStatus {
    guard(|| write(out, handle(h)?.inner.theta_inverse(y, THETA_TOL)?))
}

/// ψ_κ(t)
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_index_fn_psi(h: *const SpecregIndexFn, t: f64, out: *mut f64) -> SpecregStatus {
    guard(|| write(out, handle(h)?.inner.psi(t)?))
}

/// Parses a filter descriptor, e.g. `{"method":"landweber","mu_step":0.9}`, for ‖T*T‖ = `norm_tt`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_filter_from_json(json: *const c_char, norm_tt: f64, out: *mut *mut SpecregFilter) -> SpecregStatus {
    guard(|| {
        let kind: FilterKind = serde_json::from_str(str_arg(json)?).map_err(SpecregError::from)?;
        let m = FilterMethod::new(kind, norm_tt)?;
        write(out, Box::into_raw(Box::new(SpecregFilter { inner: m })))
    })
}

/// # Safety
/// `h` must come from `specreg_filter_from_json` or be null.
#[no_mangle]
pub unsafe extern "C" fn specreg_filter_free(h: *mut SpecregFilter) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// r_α(λ)
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_filter_r(h: *const SpecregFilter, alpha: f64, lambda: f64, out: *mut f64) -> SpecregStatus {
    guard(|| write(out, handle(h)?.inner.r_alpha(alpha, lambda)?))
}

/// q_α(λ)
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_filter_q(h: *const SpecregFilter, alpha: f64, lambda: f64, out: *mut f64) -> SpecregStatus {
    guard(|| write(out, handle(h)?.inner.q_alpha(alpha, lambda)?))
}

/// Builds an operator from `n` nonincreasing eigenvalues and their multiplicities.
///
/// # Safety
/// `eigenvalues` and `multiplicities` must be valid for `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_operator_new(
    eigenvalues: *const f64,
    multiplicities: *const usize,
    n: usize,
    out: *mut *mut SpecregOperator,
) -> SpecregStatus {
    guard(|| {
        let e = slice_arg(eigenvalues, n)?.to_vec();
        let m = slice_arg(multiplicities, n)?.to_vec();
        let op = SpectralOperator::new(e, m)?;
        write(out, Box::into_raw(Box::new(SpecregOperator { inner: op })))
    })
}

/// # Safety
/// `h` must come from `specreg_operator_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn specreg_operator_free(h: *mut SpecregOperator) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of coefficient slots (sum of multiplicities).
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_operator_dim(h: *const SpecregOperator, out: *mut usize) -> SpecregStatus {
    guard(|| write(out, handle(h)?.inner.dim()))
}

unsafe fn element(x: *const f64, n: usize) -> Result<SpectralElement, Fail> {
    Ok(SpectralElement::new(slice_arg(x, n)?.to_vec()))
}

/// ‖r_α(T*T)x‖
///
/// # Safety
/// Handles must be live; `x` valid for `n` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_bias(
    filter: *const SpecregFilter,
    alpha: f64,
    op: *const SpecregOperator,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> SpecregStatus {
    guard(|| {
        let v = bias(&handle(filter)?.inner, alpha, &handle(op)?.inner, &element(x, n)?)?;
        write(out, v)
    })
}

/// trace(R_α* R_α) = Σ mult · q_α(λ)² λ
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_variance_trace(
    filter: *const SpecregFilter,
    alpha: f64,
    op: *const SpecregOperator,
    out: *mut f64,
) -> SpecregStatus {
    guard(|| write(out, variance_trace(&handle(filter)?.inner, alpha, &handle(op)?.inner)?))
}

/// sup over ‖ξ‖ ≤ δ of ‖R_α(Tx + ξ) − x‖. When `witness` is nonnull it receives
/// the maximizing ξ (`n` entries).
///
/// # Safety
/// Handles must be live; `x` valid for `n` elements; `value` writable;
/// `witness` null or writable for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn specreg_worst_case(
    filter: *const SpecregFilter,
    alpha: f64,
    op: *const SpecregOperator,
    x: *const f64,
    n: usize,
    delta: f64,
    value: *mut f64,
    witness: *mut f64,
) -> SpecregStatus {
    guard(|| {
        let wc = worst_case_error(&handle(filter)?.inner, alpha, &handle(op)?.inner, &element(x, n)?, delta)?;
        write(value, wc.value)?;
        if !witness.is_null() {
            ptr::copy_nonoverlapping(wc.witness.as_ptr(), witness, n);
        }
        Ok(())
    })
}

/// sup_λ ‖E_λ x‖ / κ(λ); +∞ when κ vanishes where x has mass.
///
/// # Safety
/// Handles must be live; `x` valid for `n` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_xtk_norm(
    op: *const SpecregOperator,
    kappa: *const SpecregIndexFn,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> SpecregStatus {
    guard(|| write(out, xtk_norm(&element(x, n)?, &handle(op)?.inner, &handle(kappa)?.inner)?))
}

/// Runs an experiment config (JSON text) and returns the report as JSON in
/// `report_out`, to be released with `specreg_string_free`. `passed` receives
/// 1 when every verdict passed, 0 otherwise. Nothing is written to disk.
///
/// # Safety
/// `config` must be a NUL-terminated string; `report_out` and `passed` writable.
#[no_mangle]
pub unsafe extern "C" fn specreg_run_experiment_json(
    config: *const c_char,
    report_out: *mut *mut c_char,
    passed: *mut i32,
) -> SpecregStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_json(str_arg(config)?)?;
        let report = run_experiment(&cfg)?;
        let text = serde_json::to_string(&report).map_err(SpecregError::from)?;
        let c = CString::new(text).map_err(|e| Fail(SpecregStatus::InvalidInput, e.to_string()))?;
        write(passed, i32::from(report.passed()))?;
        write(report_out, c.into_raw())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn specreg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
