//! C ABI for dnnlab.
//!
//! Every entry point returns a [`DnnStatus`]; on failure a message for the
//! calling thread is available from [`dnn_last_error_message`]. Networks and
//! transforms are opaque handles owned by the caller and released with their
//! `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dnnlab::adaptation::FdlrTransform;
use dnnlab::diagnostics::{gain_norms, kl_divergence, spectral_norm};
use dnnlab::{Error, LabeledFrames, Matrix, Network};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    MissingFile = 4,
    InvalidConfig = 5,
    Parse = 6,
    Numerical = 7,
    Io = 8,
    Panic = 9,
}

/// Opaque network handle.
pub struct DnnNetwork {
    inner: Network,
}

/// Opaque fDLR transform handle.
pub struct DnnTransform {
    inner: FdlrTransform,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

struct Failure(DnnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::MissingFile(_) => DnnStatus::MissingFile,
            Error::InvalidConfig(_) => DnnStatus::InvalidConfig,
            Error::Parse { .. } | Error::Json(_) => DnnStatus::Parse,
            Error::Shape(_) => DnnStatus::Shape,
            Error::Io(_) => DnnStatus::Io,
            e if e.is_numerical() => DnnStatus::Numerical,
            _ => DnnStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: DnnStatus, msg: &str) -> Failure {
    Failure(status, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DnnStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DnnStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(DnnStatus::NullPointer, "null buffer"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(fail(DnnStatus::NullPointer, "null output buffer"));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn string<'a>(ptr: *const c_char) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(fail(DnnStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(DnnStatus::InvalidArgument, "string is not UTF-8"))
}

unsafe fn out_ptr<'a, T>(ptr: *mut T) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| fail(DnnStatus::NullPointer, "null output pointer"))
}

unsafe fn network<'a>(ptr: *const DnnNetwork) -> Result<&'a Network, Failure> {
    ptr.as_ref()
        .map(|h| &h.inner)
        .ok_or_else(|| fail(DnnStatus::NullPointer, "null network"))
}

unsafe fn transform<'a>(ptr: *const DnnTransform) -> Result<&'a FdlrTransform, Failure> {
    ptr.as_ref()
        .map(|h| &h.inner)
        .ok_or_else(|| fail(DnnStatus::NullPointer, "null transform"))
}

fn boxed_network(net: Network) -> *mut DnnNetwork {
    Box::into_raw(Box::new(DnnNetwork { inner: net }))
}

fn boxed_transform(t: FdlrTransform) -> *mut DnnTransform {
    Box::into_raw(Box::new(DnnTransform { inner: t }))
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dnn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn dnn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Seeded uniform initialisation; `sizes` lists input, hidden and output
/// widths.
///
/// # Safety
/// `sizes` must point to `n_sizes` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_network_init(
    sizes: *const usize,
    n_sizes: usize,
    seed: u64,
    init_scale: f64,
    out: *mut *mut DnnNetwork,
) -> DnnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        if sizes.is_null() {
            return Err(fail(DnnStatus::NullPointer, "null sizes"));
        }
        let sizes = std::slice::from_raw_parts(sizes, n_sizes);
        *out = boxed_network(Network::init(sizes, seed, init_scale)?);
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_network_from_json(json: *const c_char, out: *mut *mut DnnNetwork) -> DnnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = boxed_network(Network::from_json(string(json)?)?);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_network_load(path: *const c_char, out: *mut *mut DnnNetwork) -> DnnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = boxed_network(Network::load(Path::new(string(path)?))?);
        Ok(())
    })
}

/// # Safety
/// `net` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dnn_network_save(net: *const DnnNetwork, path: *const c_char) -> DnnStatus {
    guard(|| {
        network(net)?.save(Path::new(string(path)?))?;
        Ok(())
    })
}

/// JSON form of the network; free the result with [`dnn_string_free`].
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_network_to_json(net: *const DnnNetwork, out: *mut *mut c_char) -> DnnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let s = CString::new(network(net)?.to_json()).map_err(|_| fail(DnnStatus::Io, "interior NUL"))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// # Safety
/// `net` must come from this library and not have been freed; NULL is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn dnn_network_free(net: *mut DnnNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input width, class count and hidden layer count.
///
/// # Safety
/// `net` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_network_dims(
    net: *const DnnNetwork,
    input_dim: *mut usize,
    classes: *mut usize,
    hidden_layers: *mut usize,
) -> DnnStatus {
    guard(|| {
        let n = network(net)?;
        *out_ptr(input_dim)? = n.input_dim();
        *out_ptr(classes)? = n.class_count();
        *out_ptr(hidden_layers)? = n.hidden_layer_count();
        Ok(())
    })
}

/// Softmax posteriors of one input vector into `out` (`out_len` = classes).
///
/// # Safety
/// `x` must hold `len` values and `out` `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn dnn_network_posteriors(
    net: *const DnnNetwork,
    x: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> DnnStatus {
    guard(|| {
        let n = network(net)?;
        if out_len != n.class_count() {
            return Err(fail(DnnStatus::Shape, "output length must equal the class count"));
        }
        let p = n.posteriors(slice(x, len)?)?;
        slice_mut(out, out_len)?.copy_from_slice(&p);
        Ok(())
    })
}

/// Most probable class of one input vector.
///
/// # Safety
/// `x` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_network_predict(
    net: *const DnnNetwork,
    x: *const f64,
    len: usize,
    out: *mut usize,
) -> DnnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = network(net)?.predict(slice(x, len)?)?;
        Ok(())
    })
}

/// Mean and max gain norm per hidden layer over `n_frames` row-major
/// frames of width `dim`. `mean_out` and `max_out` hold `n_layers` values
/// each, `n_layers` being the hidden layer count.
///
/// # Safety
/// `frames` must hold `n_frames * dim` values; the outputs `n_layers`.
#[no_mangle]
pub unsafe extern "C" fn dnn_network_gain_norms(
    net: *const DnnNetwork,
    frames: *const f64,
    n_frames: usize,
    dim: usize,
    mean_out: *mut f64,
    max_out: *mut f64,
    n_layers: usize,
) -> DnnStatus {
    guard(|| {
        let n = network(net)?;
        if n_layers != n.hidden_layer_count() {
            return Err(fail(DnnStatus::Shape, "n_layers must equal the hidden layer count"));
        }
        let total = n_frames
            .checked_mul(dim)
            .ok_or_else(|| fail(DnnStatus::InvalidArgument, "frame buffer size overflows"))?;
        let m = Matrix::from_row_major(n_frames, dim, slice(frames, total)?.to_vec())?;
        let data = LabeledFrames::new(m, vec![0; n_frames])?;
        let g = gain_norms(n, &data)?;
        let (means, maxes) = (slice_mut(mean_out, n_layers)?, slice_mut(max_out, n_layers)?);
        for (i, mm) in g.iter().enumerate() {
            means[i] = mm.mean;
            maxes[i] = mm.max;
        }
        Ok(())
    })
}

/// Largest singular value of a row-major `rows × cols` matrix.
///
/// # Safety
/// `data` must hold `rows * cols` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_spectral_norm(data: *const f64, rows: usize, cols: usize, out: *mut f64) -> DnnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let total = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(DnnStatus::InvalidArgument, "matrix size overflows"))?;
        let m = Matrix::from_row_major(rows, cols, slice(data, total)?.to_vec())?;
        *out = spectral_norm(&m)?;
        Ok(())
    })
}

/// `KL(p ‖ q)` in nats.
///
/// # Safety
/// `p` and `q` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_kl_divergence(p: *const f64, q: *const f64, n: usize, out: *mut f64) -> DnnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = kl_divergence(slice(p, n)?, slice(q, n)?);
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_transform_identity(dim: usize, out: *mut *mut DnnTransform) -> DnnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        if dim == 0 {
            return Err(fail(DnnStatus::InvalidArgument, "dimension must be positive"));
        }
        *out = boxed_transform(FdlrTransform::identity(dim));
        Ok(())
    })
}

/// Transform from a row-major `dim × dim` matrix and a `dim` offset.
///
/// # Safety
/// `a` must hold `dim * dim` values, `b` `dim`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_transform_new(
    a: *const f64,
    b: *const f64,
    dim: usize,
    out: *mut *mut DnnTransform,
) -> DnnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let total = dim
            .checked_mul(dim)
            .ok_or_else(|| fail(DnnStatus::InvalidArgument, "matrix size overflows"))?;
        let m = Matrix::from_row_major(dim, dim, slice(a, total)?.to_vec())?;
        *out = boxed_transform(FdlrTransform::new(m, slice(b, dim)?.to_vec())?);
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_transform_from_json(json: *const c_char, out: *mut *mut DnnTransform) -> DnnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = boxed_transform(FdlrTransform::from_json(string(json)?)?);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_transform_load(path: *const c_char, out: *mut *mut DnnTransform) -> DnnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = boxed_transform(FdlrTransform::load(Path::new(string(path)?))?);
        Ok(())
    })
}

/// # Safety
/// `t` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnn_transform_dim(t: *const DnnTransform, out: *mut usize) -> DnnStatus {
    guard(|| {
        *out_ptr(out)? = transform(t)?.dim();
        Ok(())
    })
}

/// `out = A·frame + b`.
///
/// # Safety
/// `frame` and `out` must each hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dnn_transform_apply_frame(
    t: *const DnnTransform,
    frame: *const f64,
    len: usize,
    out: *mut f64,
) -> DnnStatus {
    guard(|| {
        let y = transform(t)?.apply_frame(slice(frame, len)?)?;
        slice_mut(out, len)?.copy_from_slice(&y);
        Ok(())
    })
}

/// # Safety
/// `t` must come from this library and not have been freed; NULL is a
/// no-op.
#[no_mangle]
pub unsafe extern "C" fn dnn_transform_free(t: *mut DnnTransform) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}
