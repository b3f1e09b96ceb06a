//! C ABI over `nckit`.
//!
//! Every fallible call returns an [`NckitStatus`]. On failure the message is
//! kept per thread and read back with [`nckit_last_error`]. Strings handed out
//! by this library are released with [`nckit_string_free`], polynomial handles
//! with [`nckit_poly_free`].

use nckit::error::NcError;
use nckit::linalg::{CMatrix, C64};
use nckit::ncpoly::{MatTuple, NcPoly};
use nckit::report::{run_suite, Suite, SuiteConfig};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes. `Ok` is zero; every other value is an error.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NckitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    DimensionMismatch = 3,
    ArityMismatch = 4,
    LevelNotMultiple = 5,
    BudgetExceeded = 6,
    InvalidArgument = 7,
    InconsistentData = 8,
    NotFreeRank = 9,
    FlandersExhausted = 10,
    NonVanishing = 11,
    Unsupported = 12,
    Json = 13,
    BufferTooSmall = 14,
    Panic = 15,
}

impl From<&NcError> for NckitStatus {
    fn from(e: &NcError) -> Self {
        match e {
            NcError::DimensionMismatch { .. } => NckitStatus::DimensionMismatch,
            NcError::ArityMismatch { .. } => NckitStatus::ArityMismatch,
            NcError::LevelNotMultiple { .. } => NckitStatus::LevelNotMultiple,
            NcError::BudgetExceeded { .. } => NckitStatus::BudgetExceeded,
            NcError::InvalidArgument(_) => NckitStatus::InvalidArgument,
            NcError::InconsistentData { .. } => NckitStatus::InconsistentData,
            NcError::NotFreeRank { .. } => NckitStatus::NotFreeRank,
            NcError::FlandersExhausted { .. } => NckitStatus::FlandersExhausted,
            NcError::NonVanishing { .. } => NckitStatus::NonVanishing,
            NcError::Unsupported(_) => NckitStatus::Unsupported,
            NcError::Json(_) => NckitStatus::Json,
        }
    }
}

/// Opaque free nc polynomial.
pub struct NckitPoly {
    inner: NcPoly,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NckitStatus, String);

impl From<NcError> for Failure {
    fn from(e: NcError) -> Self {
        Failure(NckitStatus::from(&e), e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NckitStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NckitStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside nckit".into());
            NckitStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(NckitStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NckitStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).expect("JSON has no interior nul").into_raw()
}

/// Message of the last failed call on this thread, or null after a success.
///
/// The pointer stays valid until the next nckit call on the same thread.
#[no_mangle]
pub extern "C" fn nckit_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Parses a polynomial fixture `{"d", "r", "terms": [{"word", "coef"}]}` into a new handle.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nckit_poly_from_json(json: *const c_char, out: *mut *mut NckitPoly) -> NckitStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(json, "json")?;
        let inner = NcPoly::from_json_str(text)?;
        *out = Box::into_raw(Box::new(NckitPoly { inner }));
        Ok(())
    })
}

/// Releases a handle from [`nckit_poly_from_json`]. Null is ignored.
///
/// # Safety
/// `poly` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nckit_poly_free(poly: *mut NckitPoly) {
    if !poly.is_null() {
        drop(Box::from_raw(poly));
    }
}

/// Number of noncommuting variables, or 0 for a null handle.
///
/// # Safety
/// `poly` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nckit_poly_arity(poly: *const NckitPoly) -> usize {
    poly.as_ref().map_or(0, |p| p.inner.d)
}

/// Number of output components, or 0 for a null handle.
///
/// # Safety
/// `poly` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nckit_poly_components(poly: *const NckitPoly) -> usize {
    poly.as_ref().map_or(0, |p| p.inner.r)
}

/// Longest stored word, or 0 for a null handle.
///
/// # Safety
/// `poly` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nckit_poly_degree(poly: *const NckitPoly) -> usize {
    poly.as_ref().map_or(0, |p| p.inner.degree())
}

/// Evaluates at a tuple of `n × n` matrices.
///
/// `x` holds `d·n·n` complex entries as interleaved `(re, im)` doubles,
/// matrix after matrix, each row-major; `x_len` counts doubles. `out`
/// receives `r·n·n` entries in the same layout and must hold `out_len`
/// doubles; a short buffer gives `BufferTooSmall`.
///
/// # Safety
/// `x` must be readable for `x_len` doubles and `out` writable for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn nckit_poly_eval(
    poly: *const NckitPoly,
    n: usize,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> NckitStatus {
    guard(|| {
        let p = &poly.as_ref().ok_or_else(|| null("poly"))?.inner;
        if x.is_null() {
            return Err(null("x"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let per = n * n * 2;
        if x_len != p.d * per {
            return Err(NcError::DimensionMismatch {
                context: "nckit_poly_eval input length",
                expected: p.d * per,
                got: x_len,
            }
            .into());
        }
        let need = p.r * per;
        if out_len < need {
            return Err(Failure(
                NckitStatus::BufferTooSmall,
                format!("output buffer holds {out_len} doubles, {need} needed"),
            ));
        }
        let xs = std::slice::from_raw_parts(x, x_len);
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(NcError::InvalidArgument("non-finite input entry".into()).into());
        }
        let mats = xs
            .chunks(per)
            .map(|m| CMatrix::from_fn(n, n, |i, j| C64::new(m[2 * (i * n + j)], m[2 * (i * n + j) + 1])))
            .collect();
        let tuple = if p.d == 0 { MatTuple::zeros(0, n) } else { MatTuple::new(mats)? };
        let value = p.eval(&tuple)?;
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (t, m) in value.comps.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    let k = t * per + 2 * (i * n + j);
                    dst[k] = m[(i, j)].re;
                    dst[k + 1] = m[(i, j)].im;
                }
            }
        }
        Ok(())
    })
}

/// Serializes the polynomial back to its JSON fixture form.
///
/// # Safety
/// `poly` must be a live handle and `out` writable; free the string with
/// [`nckit_string_free`].
#[no_mangle]
pub unsafe extern "C" fn nckit_poly_to_json(poly: *const NckitPoly, out: *mut *mut c_char) -> NckitStatus {
    guard(|| {
        let p = &poly.as_ref().ok_or_else(|| null("poly"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = serde_json::to_string(&p.to_json()).map_err(NcError::from)?;
        *out = into_c_string(text);
        Ok(())
    })
}

/// Runs a verification suite with its default parameters and writes the JSON report.
///
/// `suite` is one of `ncpoly`, `ncdiff`, `ncrkhs`, `cdclass`, `solver`,
/// `gleason`, `all`. `pass` receives 1 when every check passed, else 0.
///
/// # Safety
/// `suite` must be a nul-terminated string; `report_json` and `pass` must be
/// writable. Free the report with [`nckit_string_free`].
#[no_mangle]
pub unsafe extern "C" fn nckit_verify(
    suite: *const c_char,
    seed: u64,
    report_json: *mut *mut c_char,
    pass: *mut i32,
) -> NckitStatus {
    guard(|| {
        if report_json.is_null() {
            return Err(null("report_json"));
        }
        if pass.is_null() {
            return Err(null("pass"));
        }
        let suite: Suite = read_str(suite, "suite")?.parse()?;
        let cfg = SuiteConfig::new(suite, seed);
        cfg.validate()?;
        let report = run_suite(&cfg)?;
        *pass = i32::from(report.pass);
        *report_json = into_c_string(report.to_json()?);
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nckit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
