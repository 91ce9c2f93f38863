//! C ABI over `clh-core`.
//!
//! Instances and witnesses cross the boundary as opaque handles. Every
//! fallible call returns a [`ClhStatus`]; on anything other than `Ok` or
//! `Rejected` a message is kept per thread and can be fetched with
//! [`clh_last_error`]. Strings returned to the caller are owned by the
//! caller and must be released with [`clh_string_free`].
//!
//! The header `include/clh.h` is regenerated by the build script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use clh_core::budget::Budget;
use clh_core::model::{check_commuting, Instance};
use clh_core::oracle;
use clh_core::witness::{verify, Witness};

/// Result codes. `Rejected` is a normal answer (invalid instance, unsat
/// threshold, witness that fails to check), not an error.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClhStatus {
    Ok = 0,
    Rejected = 1,
    NullPointer = 2,
    InvalidUtf8 = 3,
    ParseError = 4,
    ComputeError = 5,
    Panic = 6,
}

/// A parsed, structurally valid instance.
pub struct ClhInstance {
    inner: Instance,
}

/// A certificate for an energy bound.
pub struct ClhWitness {
    inner: Witness,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    // Interior NULs would truncate the message on the C side anyway.
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Run `f`, turning panics into `ClhStatus::Panic`.
fn guard(f: impl FnOnce() -> ClhStatus) -> ClhStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            ClhStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, ClhStatus> {
    if s.is_null() {
        set_error("null string argument");
        return Err(ClhStatus::NullPointer);
    }
    CStr::from_ptr(s).to_str().map_err(|e| {
        set_error(format!("argument is not UTF-8: {e}"));
        ClhStatus::InvalidUtf8
    })
}

macro_rules! deref_or_null {
    ($p:expr, $what:literal) => {
        match $p.as_ref() {
            Some(v) => v,
            None => {
                set_error(concat!("null ", $what));
                return ClhStatus::NullPointer;
            }
        }
    };
}

/// Library version as a static NUL-terminated string. Do not free it.
#[no_mangle]
pub extern "C" fn clh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL if the last
/// call succeeded. The caller owns the returned string.
#[no_mangle]
pub extern "C" fn clh_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a pointer obtained from [`clh_last_error`],
/// [`clh_witness_to_json`], [`clh_instance_to_json`] or [`clh_verify`], and
/// must not be used after this call.
#[no_mangle]
pub unsafe extern "C" fn clh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse an instance from JSON text and run the structural checks (lattice,
/// dimensions, supports, Hermiticity). Commutation is checked separately
/// by [`clh_instance_check_commuting`].
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer to
/// writable storage for one handle. On success `*out` owns a new instance
/// that must be released with [`clh_instance_free`]; otherwise `*out` is
/// set to NULL.
#[no_mangle]
pub unsafe extern "C" fn clh_instance_parse(json: *const c_char, out: *mut *mut ClhInstance) -> ClhStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return ClhStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let parsed = Instance::parse_json_str(text).and_then(|i| i.validate_structure().map(|()| i));
        match parsed {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ClhInstance { inner }));
                ClhStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                ClhStatus::ParseError
            }
        }
    })
}

/// Release an instance.
///
/// # Safety
/// `inst` must be NULL or a handle from [`clh_instance_parse`] that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn clh_instance_free(inst: *mut ClhInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Number of lattice sites, or 0 for NULL.
///
/// # Safety
/// `inst` must be NULL or a live instance handle.
#[no_mangle]
pub unsafe extern "C" fn clh_instance_site_count(inst: *const ClhInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.inner.site_count())
}

/// Number of terms, or 0 for NULL.
///
/// # Safety
/// `inst` must be NULL or a live instance handle.
#[no_mangle]
pub unsafe extern "C" fn clh_instance_term_count(inst: *const ClhInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.inner.terms.len())
}

/// Serialize an instance back to JSON. Returns NULL for a NULL handle.
///
/// # Safety
/// `inst` must be NULL or a live instance handle. Free the result with
/// [`clh_string_free`].
#[no_mangle]
pub unsafe extern "C" fn clh_instance_to_json(inst: *const ClhInstance) -> *mut c_char {
    inst.as_ref().map_or(ptr::null_mut(), |i| into_c_string(i.inner.to_json_string()))
}

/// Pairwise commutation check. `Ok` when every pair commutes, `Rejected`
/// otherwise (the offending pair is in [`clh_last_error`]).
///
/// # Safety
/// `inst` must be a live instance handle.
#[no_mangle]
pub unsafe extern "C" fn clh_instance_check_commuting(inst: *const ClhInstance) -> ClhStatus {
    guard(|| {
        let inst = deref_or_null!(inst, "instance");
        let report = check_commuting(&inst.inner);
        match report.violation {
            None if report.pass => ClhStatus::Ok,
            Some((a, b, norm)) => {
                set_error(format!("terms {a} and {b} do not commute (norm {norm:e})"));
                ClhStatus::Rejected
            }
            None => {
                set_error("commutation check failed");
                ClhStatus::Rejected
            }
        }
    })
}

/// Lowest eigenvalue of the full Hamiltonian by dense diagonalization.
///
/// # Safety
/// `inst` must be a live instance handle and `out` a valid pointer to a
/// double.
#[no_mangle]
pub unsafe extern "C" fn clh_oracle_ground_energy(inst: *const ClhInstance, out: *mut f64) -> ClhStatus {
    guard(|| {
        let inst = deref_or_null!(inst, "instance");
        if out.is_null() {
            set_error("null output pointer");
            return ClhStatus::NullPointer;
        }
        match oracle::assemble(&inst.inner) {
            Ok(h) => {
                *out = oracle::ground_energy(&h);
                ClhStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                ClhStatus::ComputeError
            }
        }
    })
}

/// Search for a witness that the ground energy is at most `threshold`.
/// `budget` caps the search (0 selects the default). Returns `Ok` with a
/// witness in `*out`, or `Rejected` with `*out` NULL when no witness
/// exists.
///
/// # Safety
/// `inst` must be a live instance handle and `out` a valid pointer to
/// writable storage for one handle. A returned witness must be released
/// with [`clh_witness_free`].
#[no_mangle]
pub unsafe extern "C" fn clh_prove(
    inst: *const ClhInstance,
    threshold: f64,
    factorized: bool,
    budget: u64,
    out: *mut *mut ClhWitness,
) -> ClhStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return ClhStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let inst = deref_or_null!(inst, "instance");
        let mut budget = if budget == 0 { Budget::default() } else { Budget::new(budget) };
        match oracle::prove(&inst.inner, threshold, factorized, &mut budget) {
            Ok(Some(inner)) => {
                *out = Box::into_raw(Box::new(ClhWitness { inner }));
                ClhStatus::Ok
            }
            Ok(None) => ClhStatus::Rejected,
            Err(e) => {
                set_error(e.to_string());
                ClhStatus::ComputeError
            }
        }
    })
}

/// Parse a witness from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer to
/// writable storage for one handle. Release the result with
/// [`clh_witness_free`].
#[no_mangle]
pub unsafe extern "C" fn clh_witness_parse(json: *const c_char, out: *mut *mut ClhWitness) -> ClhStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return ClhStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match Witness::from_json_str(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ClhWitness { inner }));
                ClhStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                ClhStatus::ParseError
            }
        }
    })
}

/// Serialize a witness. Returns NULL for a NULL handle.
///
/// # Safety
/// `w` must be NULL or a live witness handle. Free the result with
/// [`clh_string_free`].
#[no_mangle]
pub unsafe extern "C" fn clh_witness_to_json(w: *const ClhWitness) -> *mut c_char {
    w.as_ref().map_or(ptr::null_mut(), |w| into_c_string(w.inner.to_json_string()))
}

/// The threshold a witness claims, or NaN for NULL.
///
/// # Safety
/// `w` must be NULL or a live witness handle.
#[no_mangle]
pub unsafe extern "C" fn clh_witness_threshold(w: *const ClhWitness) -> f64 {
    w.as_ref().map_or(f64::NAN, |w| w.inner.threshold)
}

/// Release a witness.
///
/// # Safety
/// `w` must be NULL or a handle from [`clh_prove`] or [`clh_witness_parse`]
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn clh_witness_free(w: *mut ClhWitness) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Check a witness against an instance. Returns `Ok` when it is accepted
/// and `Rejected` otherwise. If `report` is not NULL, `*report` receives
/// the JSON verification report, which the caller frees with
/// [`clh_string_free`].
///
/// # Safety
/// `inst` and `w` must be live handles; `report` must be NULL or a valid
/// pointer to writable storage for one string pointer.
#[no_mangle]
pub unsafe extern "C" fn clh_verify(
    inst: *const ClhInstance,
    w: *const ClhWitness,
    report: *mut *mut c_char,
) -> ClhStatus {
    guard(|| {
        if !report.is_null() {
            *report = ptr::null_mut();
        }
        let inst = deref_or_null!(inst, "instance");
        let w = deref_or_null!(w, "witness");
        let r = verify(&inst.inner, &w.inner, None);
        if !report.is_null() {
            let text = serde_json::to_string(&r).expect("report serializes");
            *report = into_c_string(text);
        }
        if r.accept {
            ClhStatus::Ok
        } else {
            if let Some(rej) = &r.rejection {
                set_error(rej.reason.clone());
            }
            ClhStatus::Rejected
        }
    })
}
