//! C ABI for the `l2ru` library.
//!
//! Exposes model loading, inference, and certificate checks to non-Rust
//! hosts through opaque handles and integer status codes. The companion
//! header `include/l2ru.h` is regenerated by the build script.
//!
//! Conventions shared by every function here:
//! - Handles are opaque; create them with the `_load_` functions and
//!   release them with the matching `_free` exactly once.
//! - Every fallible call returns [`L2ruStatus`]; on any value other than
//!   `Ok` the output arguments are untouched and a message is available
//!   from [`l2ru_last_error`] until the next failing call on the same
//!   thread.
//! - Sequence buffers are row-major with one sample per row.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use l2ru::lti::{gain_lmi_bisection, hinf_norm, LtiSystem, Trajectory};
use l2ru::model::{certified_gain, forward, model_from_json, Engine, L2ruModel};
use l2ru::train::certificate_audit;

/// Outcome of an interface call. Anything other than `Ok` leaves the output
/// arguments untouched; consult `l2ru_last_error` for a diagnostic.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2ruStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A file could not be read.
    Io = 3,
    /// The input text was not a valid model or system description.
    Parse = 4,
    /// Arguments were structurally invalid (dimension mismatch, bad flag).
    InvalidArgument = 5,
    /// A numerical routine failed on otherwise well-formed data.
    Numerical = 6,
    /// An internal invariant was violated; the library state is still sound.
    Internal = 7,
}

/// Owned model behind an opaque pointer.
pub struct L2ruModelHandle {
    inner: L2ruModel,
}

/// Owned state-space system behind an opaque pointer.
pub struct L2ruSystemHandle {
    inner: LtiSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(status: L2ruStatus, message: &str) -> L2ruStatus {
    let owned = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("invalid error text").expect("static text"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(owned));
    status
}

/// Runs a closure, translating panics into `Internal` so unwinding never
/// crosses the ABI boundary.
fn guarded<F: FnOnce() -> L2ruStatus>(body: F) -> L2ruStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let text = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown internal failure".to_string());
            set_error(L2ruStatus::Internal, &text)
        }
    }
}

/// Reads a required C string argument.
///
/// # Safety
/// `text` must be null or point to a NUL-terminated string.
unsafe fn required_str<'a>(text: *const c_char) -> Result<&'a str, L2ruStatus> {
    if text.is_null() {
        return Err(set_error(L2ruStatus::NullPointer, "string argument is null"));
    }
    unsafe { CStr::from_ptr(text) }
        .to_str()
        .map_err(|e| set_error(L2ruStatus::InvalidUtf8, &format!("string argument: {e}")))
}

fn required_out<'a, T>(out: *mut T) -> Result<&'a mut T, L2ruStatus> {
    if out.is_null() {
        return Err(set_error(L2ruStatus::NullPointer, "output argument is null"));
    }
    Ok(unsafe { &mut *out })
}

fn required_model<'a>(model: *const L2ruModelHandle) -> Result<&'a L2ruModel, L2ruStatus> {
    if model.is_null() {
        return Err(set_error(L2ruStatus::NullPointer, "model handle is null"));
    }
    Ok(unsafe { &(*model).inner })
}

fn required_system<'a>(system: *const L2ruSystemHandle) -> Result<&'a LtiSystem, L2ruStatus> {
    if system.is_null() {
        return Err(set_error(L2ruStatus::NullPointer, "system handle is null"));
    }
    Ok(unsafe { &(*system).inner })
}

fn read_text_file(path: &str) -> Result<String, L2ruStatus> {
    std::fs::read_to_string(Path::new(path))
        .map_err(|e| set_error(L2ruStatus::Io, &format!("cannot read {path}: {e}")))
}

/// Library version as a static NUL-terminated string; never null, never freed.
#[no_mangle]
pub extern "C" fn l2ru_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on the calling thread, or null if no
/// call has failed yet. The pointer stays valid until the next failing call
/// on the same thread; copy it if you need to keep it.
#[no_mangle]
pub extern "C" fn l2ru_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |text| text.as_ptr())
    })
}

unsafe fn model_from_text(
    text: *const c_char,
    out: *mut *mut L2ruModelHandle,
    from_file: bool,
) -> L2ruStatus {
    guarded(|| {
        let out = match required_out(out) {
            Ok(v) => v,
            Err(status) => return status,
        };
        let arg = match unsafe { required_str(text) } {
            Ok(v) => v,
            Err(status) => return status,
        };
        let json = if from_file {
            match read_text_file(arg) {
                Ok(v) => v,
                Err(status) => return status,
            }
        } else {
            arg.to_string()
        };
        match model_from_json(&json) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(L2ruModelHandle { inner }));
                L2ruStatus::Ok
            }
            Err(e) => set_error(L2ruStatus::Parse, &format!("model: {e}")),
        }
    })
}

/// Loads a model from a JSON file written by the trainer or exporter.
///
/// On success stores a new handle in `out`; release it with
/// `l2ru_model_free`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn l2ru_model_load_file(
    path: *const c_char,
    out: *mut *mut L2ruModelHandle,
) -> L2ruStatus {
    unsafe { model_from_text(path, out, true) }
}

/// Loads a model from an in-memory JSON string.
///
/// On success stores a new handle in `out`; release it with
/// `l2ru_model_free`.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn l2ru_model_load_json(
    json: *const c_char,
    out: *mut *mut L2ruModelHandle,
) -> L2ruStatus {
    unsafe { model_from_text(json, out, false) }
}

/// Releases a model handle. Passing null is a no-op; passing the same
/// handle twice is undefined behavior.
///
/// # Safety
/// `model` must be null or a handle produced by a model load call.
#[no_mangle]
pub unsafe extern "C" fn l2ru_model_free(model: *mut L2ruModelHandle) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of input channels the model expects per sample.
///
/// # Safety
/// `model` must be a live handle; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn l2ru_model_input_dim(
    model: *const L2ruModelHandle,
    out: *mut usize,
) -> L2ruStatus {
    guarded(|| match (required_model(model), required_out(out)) {
        (Ok(m), Ok(out)) => {
            *out = m.e.cols();
            L2ruStatus::Ok
        }
        (Err(status), _) | (_, Err(status)) => status,
    })
}

/// Number of output channels the model produces per sample.
///
/// # Safety
/// `model` must be a live handle; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn l2ru_model_output_dim(
    model: *const L2ruModelHandle,
    out: *mut usize,
) -> L2ruStatus {
    guarded(|| match (required_model(model), required_out(out)) {
        (Ok(m), Ok(out)) => {
            *out = m.h.rows();
            L2ruStatus::Ok
        }
        (Err(status), _) | (_, Err(status)) => status,
    })
}

/// Number of stacked state-space layers in the model.
///
/// # Safety
/// `model` must be a live handle; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn l2ru_model_layer_count(
    model: *const L2ruModelHandle,
    out: *mut usize,
) -> L2ruStatus {
    guarded(|| match (required_model(model), required_out(out)) {
        (Ok(m), Ok(out)) => {
            *out = m.layers.len();
            L2ruStatus::Ok
        }
        (Err(status), _) | (_, Err(status)) => status,
    })
}

/// The gain bound the model was built to respect.
///
/// # Safety
/// `model` must be a live handle; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn l2ru_model_gamma_hat(
    model: *const L2ruModelHandle,
    out: *mut f64,
) -> L2ruStatus {
    guarded(|| match (required_model(model), required_out(out)) {
        (Ok(m), Ok(out)) => {
            *out = m.gamma_hat;
            L2ruStatus::Ok
        }
        (Err(status), _) | (_, Err(status)) => status,
    })
}

/// Recomputes the certified gain bound from the stored stage certificates;
/// equals the prescribed bound up to floating-point rounding.
///
/// # Safety
/// `model` must be a live handle; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn l2ru_model_certified_gain(
    model: *const L2ruModelHandle,
    out: *mut f64,
) -> L2ruStatus {
    guarded(|| match (required_model(model), required_out(out)) {
        (Ok(m), Ok(out)) => match certified_gain(m) {
            Ok(value) => {
                *out = value;
                L2ruStatus::Ok
            }
            Err(e) => set_error(L2ruStatus::Numerical, &format!("certified gain: {e}")),
        },
        (Err(status), _) | (_, Err(status)) => status,
    })
}

/// Re-verifies every stored stage certificate against its system and the
/// overall budget. Writes 1 if everything checks out, 0 otherwise; a result
/// of 0 is still `Ok` at the call level.
///
/// # Safety
/// `model` must be a live handle; `out_certified` must point to writable
/// storage.
#[no_mangle]
pub unsafe extern "C" fn l2ru_model_certify(
    model: *const L2ruModelHandle,
    out_certified: *mut c_int,
) -> L2ruStatus {
    guarded(
        || match (required_model(model), required_out(out_certified)) {
            (Ok(m), Ok(out)) => match certificate_audit(m) {
                Ok(passed) => {
                    *out = c_int::from(passed);
                    L2ruStatus::Ok
                }
                Err(e) => set_error(L2ruStatus::Numerical, &format!("certificate audit: {e}")),
            },
            (Err(status), _) | (_, Err(status)) => status,
        },
    )
}

/// Runs the model on an input sequence from zero initial state.
///
/// `input` holds `sample_count` rows of `l2ru_model_input_dim` values each;
/// `output` must have room for `sample_count` rows of
/// `l2ru_model_output_dim` values. `engine` selects the simulation path:
/// 0 = per-sample recursion, 1 = chunked prefix evaluation (parallel over
/// worker threads, same result to within accumulation order).
///
/// # Safety
/// `model` must be a live handle; `input` and `output` must point to
/// buffers of the sizes stated above.
#[no_mangle]
pub unsafe extern "C" fn l2ru_model_forward(
    model: *const L2ruModelHandle,
    input: *const f64,
    sample_count: usize,
    engine: c_int,
    output: *mut f64,
) -> L2ruStatus {
    guarded(|| {
        let m = match required_model(model) {
            Ok(v) => v,
            Err(status) => return status,
        };
        if input.is_null() || output.is_null() {
            return set_error(L2ruStatus::NullPointer, "sequence buffer is null");
        }
        let engine = match engine {
            0 => Engine::Recursive,
            1 => Engine::Scan,
            other => {
                return set_error(
                    L2ruStatus::InvalidArgument,
                    &format!("engine flag must be 0 (recursive) or 1 (scan), got {other}"),
                )
            }
        };
        let in_dim = m.e.cols();
        let out_dim = m.h.rows();
        let Some(in_len) = sample_count.checked_mul(in_dim) else {
            return set_error(L2ruStatus::InvalidArgument, "input size overflows");
        };
        let u = unsafe { slice::from_raw_parts(input, in_len) };
        let u = match Trajectory::from_flat(in_dim, u.to_vec()) {
            Ok(v) => v,
            Err(e) => return set_error(L2ruStatus::InvalidArgument, &format!("input: {e}")),
        };
        match forward(m, &u, engine) {
            Ok(y) => {
                let flat = y.as_flat();
                debug_assert_eq!(flat.len(), sample_count * out_dim);
                unsafe { slice::from_raw_parts_mut(output, flat.len()) }.copy_from_slice(flat);
                L2ruStatus::Ok
            }
            Err(e) => set_error(L2ruStatus::Numerical, &format!("forward: {e}")),
        }
    })
}

unsafe fn system_from_text(
    text: *const c_char,
    out: *mut *mut L2ruSystemHandle,
    from_file: bool,
) -> L2ruStatus {
    guarded(|| {
        let out = match required_out(out) {
            Ok(v) => v,
            Err(status) => return status,
        };
        let arg = match unsafe { required_str(text) } {
            Ok(v) => v,
            Err(status) => return status,
        };
        let json = if from_file {
            match read_text_file(arg) {
                Ok(v) => v,
                Err(status) => return status,
            }
        } else {
            arg.to_string()
        };
        let parsed: LtiSystem = match serde_json::from_str(&json) {
            Ok(v) => v,
            Err(e) => return set_error(L2ruStatus::Parse, &format!("system: {e}")),
        };
        match parsed.validated() {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(L2ruSystemHandle { inner }));
                L2ruStatus::Ok
            }
            Err(e) => set_error(L2ruStatus::Parse, &format!("system: {e}")),
        }
    })
}

/// Loads a state-space system from a JSON file (the format the CLI reads
/// and writes).
///
/// On success stores a new handle in `out`; release it with
/// `l2ru_system_free`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn l2ru_system_load_file(
    path: *const c_char,
    out: *mut *mut L2ruSystemHandle,
) -> L2ruStatus {
    unsafe { system_from_text(path, out, true) }
}

/// Loads a state-space system from an in-memory JSON string.
///
/// On success stores a new handle in `out`; release it with
/// `l2ru_system_free`.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn l2ru_system_load_json(
    json: *const c_char,
    out: *mut *mut L2ruSystemHandle,
) -> L2ruStatus {
    unsafe { system_from_text(json, out, false) }
}

/// Releases a system handle. Passing null is a no-op; passing the same
/// handle twice is undefined behavior.
///
/// # Safety
/// `system` must be null or a handle produced by a system load call.
#[no_mangle]
pub unsafe extern "C" fn l2ru_system_free(system: *mut L2ruSystemHandle) {
    if !system.is_null() {
        drop(unsafe { Box::from_raw(system) });
    }
}

/// State, input, and output dimensions of a loaded system. Any of the
/// output pointers may be null to skip that value.
///
/// # Safety
/// `system` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn l2ru_system_dims(
    system: *const L2ruSystemHandle,
    out_state: *mut usize,
    out_input: *mut usize,
    out_output: *mut usize,
) -> L2ruStatus {
    guarded(|| {
        let sys = match required_system(system) {
            Ok(v) => v,
            Err(status) => return status,
        };
        if !out_state.is_null() {
            unsafe { *out_state = sys.state_dim() };
        }
        if !out_input.is_null() {
            unsafe { *out_input = sys.input_dim() };
        }
        if !out_output.is_null() {
            unsafe { *out_output = sys.output_dim() };
        }
        L2ruStatus::Ok
    })
}

/// Peak frequency-response gain of a stable system, estimated by a dense
/// frequency sweep refined to the given relative tolerance.
///
/// # Safety
/// `system` must be a live handle; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn l2ru_system_hinf_norm(
    system: *const L2ruSystemHandle,
    rel_tol: f64,
    out: *mut f64,
) -> L2ruStatus {
    guarded(|| match (required_system(system), required_out(out)) {
        (Ok(sys), Ok(out)) => match hinf_norm(sys, rel_tol) {
            Ok(value) => {
                *out = value;
                L2ruStatus::Ok
            }
            Err(e) => set_error(L2ruStatus::Numerical, &format!("peak gain: {e}")),
        },
        (Err(status), _) | (_, Err(status)) => status,
    })
}

/// Smallest certifiable gain bound of a stable system, found by bisecting
/// over feasibility of the gain certificate.
///
/// # Safety
/// `system` must be a live handle; `out` must point to writable storage.
#[no_mangle]
pub unsafe extern "C" fn l2ru_system_certified_bound(
    system: *const L2ruSystemHandle,
    rel_tol: f64,
    out: *mut f64,
) -> L2ruStatus {
    guarded(|| match (required_system(system), required_out(out)) {
        (Ok(sys), Ok(out)) => match gain_lmi_bisection(sys, rel_tol) {
            Ok(value) => {
                *out = value;
                L2ruStatus::Ok
            }
            Err(e) => set_error(L2ruStatus::Numerical, &format!("certified bound: {e}")),
        },
        (Err(status), _) | (_, Err(status)) => status,
    })
}
