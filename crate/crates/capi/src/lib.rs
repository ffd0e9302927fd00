//! C ABI over the pnpcm solver: opaque tensor handles, status codes, and
//! entry points for tensor I/O, metrics, and config-driven reconstruction.
//!
//! Conventions:
//! - Functions returning pointers yield NULL on failure; functions returning
//!   [`PnpStatus`] yield a nonzero code. Either way the message is retrievable
//!   with `pnp_last_error_message` (free it with `pnp_string_free`).
//! - Complex buffers are interleaved (re, im) f64 pairs, row-major.
//! - Handles are freed exactly once with their matching `_free` function.

use libc::{c_char, size_t};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};

use pnpcm::error::Error;
use pnpcm::io::{build_experiment, config::RunConfigFile, tensor_file};
use pnpcm::metrics;
use pnpcm::tensor::{Dtype, Tensor};

/// Status codes returned by fallible entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NumericalError = 4,
    IoError = 5,
    ProtocolError = 6,
    ConfigError = 7,
    BufferTooSmall = 8,
}

/// Opaque tensor handle.
pub struct PnpTensor {
    inner: Tensor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PnpStatus {
    match e {
        Error::ShapeMismatch { .. } | Error::DtypeMismatch { .. } => PnpStatus::ShapeMismatch,
        Error::InvalidParameter(_) => PnpStatus::InvalidArgument,
        Error::NonFinite(_) => PnpStatus::NumericalError,
        Error::Protocol(_) => PnpStatus::ProtocolError,
        Error::Config(_) => PnpStatus::ConfigError,
        Error::Io(_) | Error::Image(_) => PnpStatus::IoError,
        _ => PnpStatus::InvalidArgument,
    }
}

fn fail(e: Error) -> PnpStatus {
    let code = status_of(&e);
    set_error(e.to_string());
    code
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok()
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn pnp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// The last error message on this thread, or NULL if none was recorded.
/// The caller owns the returned string and must free it with
/// `pnp_string_free`.
#[no_mangle]
pub extern "C" fn pnp_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(c) => c.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Free a string returned by this library.
///
/// # Safety
/// `s` must have been returned by a pnpcm function and not freed before.
#[no_mangle]
pub unsafe extern "C" fn pnp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn dims_arg(dims: *const u64, ndim: size_t) -> Option<Vec<usize>> {
    if dims.is_null() || ndim == 0 || ndim > 16 {
        return None;
    }
    Some(
        std::slice::from_raw_parts(dims, ndim)
            .iter()
            .map(|&d| d as usize)
            .collect(),
    )
}

/// New real tensor from a row-major buffer of `prod(dims)` doubles.
///
/// # Safety
/// `dims` points to `ndim` u64s; `data` points to `prod(dims)` doubles.
#[no_mangle]
pub unsafe extern "C" fn pnp_tensor_new_real(
    dims: *const u64,
    ndim: size_t,
    data: *const f64,
) -> *mut PnpTensor {
    let Some(shape) = dims_arg(dims, ndim) else {
        set_error("bad dims".into());
        return std::ptr::null_mut();
    };
    let n: usize = shape.iter().product();
    if data.is_null() {
        set_error("null data".into());
        return std::ptr::null_mut();
    }
    let buf = std::slice::from_raw_parts(data, n).to_vec();
    match Tensor::from_real(&shape, buf) {
        Ok(t) => Box::into_raw(Box::new(PnpTensor { inner: t })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// New complex tensor from `2·prod(dims)` doubles, interleaved (re, im).
///
/// # Safety
/// `dims` points to `ndim` u64s; `data` points to `2·prod(dims)` doubles.
#[no_mangle]
pub unsafe extern "C" fn pnp_tensor_new_complex(
    dims: *const u64,
    ndim: size_t,
    data: *const f64,
) -> *mut PnpTensor {
    let Some(shape) = dims_arg(dims, ndim) else {
        set_error("bad dims".into());
        return std::ptr::null_mut();
    };
    let n: usize = shape.iter().product();
    if data.is_null() {
        set_error("null data".into());
        return std::ptr::null_mut();
    }
    let raw = std::slice::from_raw_parts(data, 2 * n);
    let buf: Vec<pnpcm::tensor::Complex64> = raw
        .chunks_exact(2)
        .map(|p| pnpcm::tensor::Complex64::new(p[0], p[1]))
        .collect();
    match Tensor::from_complex(&shape, buf) {
        Ok(t) => Box::into_raw(Box::new(PnpTensor { inner: t })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Free a tensor handle.
///
/// # Safety
/// `t` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pnp_tensor_free(t: *mut PnpTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn pnp_tensor_ndim(t: *const PnpTensor) -> size_t {
    if t.is_null() {
        return 0;
    }
    (*t).inner.shape().len()
}

/// Number of elements (a complex element counts once).
///
/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn pnp_tensor_len(t: *const PnpTensor) -> size_t {
    if t.is_null() {
        return 0;
    }
    (*t).inner.len()
}

/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn pnp_tensor_is_complex(t: *const PnpTensor) -> bool {
    !t.is_null() && (*t).inner.is_complex()
}

/// Copy the dimension sizes into `out` (capacity `cap`).
///
/// # Safety
/// `t` live handle; `out` points to at least `cap` u64s.
#[no_mangle]
pub unsafe extern "C" fn pnp_tensor_dims(
    t: *const PnpTensor,
    out: *mut u64,
    cap: size_t,
) -> PnpStatus {
    if t.is_null() || out.is_null() {
        return PnpStatus::NullArgument;
    }
    let shape = (*t).inner.shape();
    if cap < shape.len() {
        return PnpStatus::BufferTooSmall;
    }
    for (i, &d) in shape.iter().enumerate() {
        *out.add(i) = d as u64;
    }
    PnpStatus::Ok
}

/// Copy the scalar payload into `out`: `len` doubles for real tensors,
/// `2·len` interleaved doubles for complex ones.
///
/// # Safety
/// `t` live handle; `out` points to at least `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn pnp_tensor_copy_data(
    t: *const PnpTensor,
    out: *mut f64,
    cap: size_t,
) -> PnpStatus {
    if t.is_null() || out.is_null() {
        return PnpStatus::NullArgument;
    }
    let inner = &(*t).inner;
    let needed = inner.scalar_count();
    if cap < needed {
        return PnpStatus::BufferTooSmall;
    }
    match inner.dtype() {
        Dtype::Real64 => {
            let v = inner.as_real().expect("real");
            std::ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
        }
        Dtype::Complex128 => {
            let v = inner.as_complex().expect("complex");
            for (i, c) in v.iter().enumerate() {
                *out.add(2 * i) = c.re;
                *out.add(2 * i + 1) = c.im;
            }
        }
    }
    PnpStatus::Ok
}

/// Load a .pnpt tensor file.
///
/// # Safety
/// `path` is a nul-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn pnp_tensor_load(path: *const c_char) -> *mut PnpTensor {
    let Some(p) = cstr_arg(path) else {
        set_error("null or non-utf8 path".into());
        return std::ptr::null_mut();
    };
    match tensor_file::load(Path::new(p)) {
        Ok(t) => Box::into_raw(Box::new(PnpTensor { inner: t })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Save a tensor as a .pnpt file.
///
/// # Safety
/// `path` is a nul-terminated UTF-8 string; `t` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn pnp_tensor_save(path: *const c_char, t: *const PnpTensor) -> PnpStatus {
    let Some(p) = cstr_arg(path) else {
        return PnpStatus::NullArgument;
    };
    if t.is_null() {
        return PnpStatus::NullArgument;
    }
    match tensor_file::save(Path::new(p), &(*t).inner) {
        Ok(()) => PnpStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Elementwise modulus of a complex tensor (new real handle).
///
/// # Safety
/// `t` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn pnp_tensor_magnitude(t: *const PnpTensor) -> *mut PnpTensor {
    if t.is_null() {
        set_error("null tensor".into());
        return std::ptr::null_mut();
    }
    match metrics::magnitude(&(*t).inner) {
        Ok(m) => Box::into_raw(Box::new(PnpTensor { inner: m })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// PSNR in dB between two real tensors at the given peak.
///
/// # Safety
/// `x`, `reference` live handles; `out` a valid double pointer.
#[no_mangle]
pub unsafe extern "C" fn pnp_psnr(
    x: *const PnpTensor,
    reference: *const PnpTensor,
    peak: f64,
    out: *mut f64,
) -> PnpStatus {
    if x.is_null() || reference.is_null() || out.is_null() {
        return PnpStatus::NullArgument;
    }
    match metrics::psnr(&(*x).inner, &(*reference).inner, peak) {
        Ok(v) => {
            *out = v;
            PnpStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Windowed SSIM between two real tensors; the standard 11×11 window is
/// shrunk to fit small images.
///
/// # Safety
/// `x`, `reference` live handles; `out` a valid double pointer.
#[no_mangle]
pub unsafe extern "C" fn pnp_ssim(
    x: *const PnpTensor,
    reference: *const PnpTensor,
    peak: f64,
    out: *mut f64,
) -> PnpStatus {
    if x.is_null() || reference.is_null() || out.is_null() {
        return PnpStatus::NullArgument;
    }
    let shape = (*reference).inner.shape();
    let (h, w) = (shape[0], shape.get(1).copied().unwrap_or(1));
    let params = metrics::SsimParams::with_peak(peak).fitted_to(h, w);
    match metrics::ssim(&(*x).inner, &(*reference).inner, &params) {
        Ok(v) => {
            *out = v;
            PnpStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Run a reconstruction described by a config file and return the estimate
/// as a new tensor handle. `seed` overrides the config seed when
/// `has_seed` is true.
///
/// # Safety
/// `config_path` is a nul-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn pnp_reconstruct(
    config_path: *const c_char,
    has_seed: bool,
    seed: u64,
) -> *mut PnpTensor {
    let Some(p) = cstr_arg(config_path) else {
        set_error("null or non-utf8 config path".into());
        return std::ptr::null_mut();
    };
    let run = || -> Result<Tensor, Error> {
        let cfg = RunConfigFile::from_path(p)?;
        let dir = Path::new(p)
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let exp = build_experiment(&cfg, &dir, has_seed.then_some(seed))?;
        let (x, _) = pnpcm::admm::run(&exp.engine, &exp.y)?;
        Ok(x)
    };
    match run() {
        Ok(x) => Box::into_raw(Box::new(PnpTensor { inner: x })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}
