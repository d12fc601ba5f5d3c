//! C interface to the dsgq workbench.
//!
//! Conventions:
//! - Every fallible function returns a [`DsgqStatus`]; on failure a message is
//!   available from [`dsgq_last_error`] on the same thread.
//! - Networks are opaque handles created by `dsgq_network_*` constructors and
//!   released with [`dsgq_network_free`].
//! - Arrays are row-major `double` buffers; the caller passes each output
//!   buffer's capacity in elements and receives [`DsgqStatus::BufferTooSmall`]
//!   when it does not fit.
//! - Panics never cross the boundary; they surface as [`DsgqStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dsgq::dsg::{eig_sym, sci_loss_with, NoiseSet, SciNormalization};
use dsgq::io::{load_model, model_from_json};
use dsgq::metrics::similarity_index_s;
use dsgq::pipelines::{dsg_ptq_generate, RunConfig};
use dsgq::{Error, Mode, Network, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsgqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Parse = 4,
    Io = 5,
    Config = 6,
    NonFinite = 7,
    Numerical = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Opaque network handle.
pub struct DsgqNetwork {
    net: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DsgqStatus {
    match e {
        Error::Shape(_) => DsgqStatus::Shape,
        Error::NonFinite(_) => DsgqStatus::NonFinite,
        Error::Parse(_) | Error::Format { .. } => DsgqStatus::Parse,
        Error::Io { .. } => DsgqStatus::Io,
        Error::Config(_) => DsgqStatus::Config,
        Error::NotSymmetric(_) | Error::NoConvergence(_) | Error::ZeroNorm(_) => DsgqStatus::Numerical,
        Error::MissingCache | Error::Empty(_) | Error::InvalidArgument(_) | Error::NoBatchNorm => DsgqStatus::InvalidArgument,
    }
}

/// Failure inside the boundary: a status plus its message.
struct Fail(DsgqStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail(status: DsgqStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

/// Runs `f`, records any failure, and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DsgqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DsgqStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_default();
            set_error(format!("panic: {msg}"));
            DsgqStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(DsgqStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(DsgqStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(DsgqStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, cap: usize, need: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(fail(DsgqStatus::NullPointer, format!("{what} is null")));
    }
    if cap < need {
        return Err(fail(DsgqStatus::BufferTooSmall, format!("{what} holds {cap} values, {need} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn network<'a>(h: *const DsgqNetwork) -> Result<&'a Network, Fail> {
    h.as_ref().map(|n| &n.net).ok_or_else(|| fail(DsgqStatus::NullPointer, "network handle is null"))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(DsgqStatus::NullPointer, format!("{what} is null")));
    }
    out.write(v);
    Ok(())
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> Result<Tensor, Fail> {
    Ok(Tensor::new(vec![rows, cols], data.to_vec())?)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dsgq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dsgq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dsgq_network_load(path: *const c_char, out: *mut *mut DsgqNetwork) -> DsgqStatus {
    guard(|| {
        let p = c_str(path, "path")?;
        let net = load_model(Path::new(p))?;
        put(out, Box::into_raw(Box::new(DsgqNetwork { net })), "out")
    })
}

/// Parses a model document held in memory.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dsgq_network_from_json(json: *const c_char, out: *mut *mut DsgqNetwork) -> DsgqStatus {
    guard(|| {
        let text = c_str(json, "json")?;
        let net = model_from_json(text, "<memory>")?;
        put(out, Box::into_raw(Box::new(DsgqNetwork { net })), "out")
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `net` must come from a constructor of this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn dsgq_network_free(net: *mut DsgqNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Flattened input size and output size of one sample.
///
/// # Safety
/// `net` must be a live handle; `input_dim` and `output_dim` writable.
#[no_mangle]
pub unsafe extern "C" fn dsgq_network_dims(net: *const DsgqNetwork, input_dim: *mut usize, output_dim: *mut usize) -> DsgqStatus {
    guard(|| {
        let n = network(net)?;
        put(input_dim, n.input_shape().iter().product(), "input_dim")?;
        put(output_dim, n.output_shape().iter().product(), "output_dim")
    })
}

/// Eval-mode forward pass of `batch` samples; writes `batch x output_dim` logits.
///
/// # Safety
/// `x` must hold `batch x input_dim` values and `out` `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn dsgq_network_forward(net: *const DsgqNetwork, x: *const f64, batch: usize, out: *mut f64, out_len: usize) -> DsgqStatus {
    guard(|| {
        let n = network(net)?;
        let mut shape = vec![batch];
        shape.extend_from_slice(n.input_shape());
        let len = shape.iter().product();
        let input = Tensor::new(shape, slice(x, len, "x")?.to_vec())?;
        let fwd = n.forward(&input, Mode::Eval)?;
        let logits = fwd.logits().data();
        out_slice(out, out_len, logits.len(), "out")?.copy_from_slice(logits);
        Ok(())
    })
}

/// Synthesizes one calibration batch. `config_json` is a run configuration
/// (null or `"{}"` for defaults). Writes `batch_size x input_dim` samples.
///
/// # Safety
/// `net` must be a live handle; `config_json` null or NUL-terminated;
/// `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn dsgq_ptq_generate(net: *const DsgqNetwork, config_json: *const c_char, out: *mut f64, out_len: usize) -> DsgqStatus {
    guard(|| {
        let n = network(net)?;
        let cfg: RunConfig = if config_json.is_null() {
            RunConfig::default()
        } else {
            serde_json::from_str(c_str(config_json, "config_json")?).map_err(|e| fail(DsgqStatus::Config, format!("run config: {e}")))?
        };
        cfg.validate()?;
        let batch = dsg_ptq_generate(n, &cfg)?;
        let data = batch.samples.data();
        out_slice(out, out_len, data.len(), "out")?.copy_from_slice(data);
        Ok(())
    })
}

/// Correlation-inhibition loss of `features` against frozen `noise`, both
/// `batch x dim`, with noise-spectrum weights. `grad` (optional, may be null)
/// receives the `batch x dim` gradient.
///
/// # Safety
/// Input buffers must hold `batch x dim` values; `value` must be writable;
/// `grad`, when non-null, must hold `grad_len` values.
#[no_mangle]
pub unsafe extern "C" fn dsgq_sci_loss(
    features: *const f64,
    noise: *const f64,
    batch: usize,
    dim: usize,
    value: *mut f64,
    grad: *mut f64,
    grad_len: usize,
) -> DsgqStatus {
    guard(|| {
        let len = batch * dim;
        let f = matrix(slice(features, len, "features")?, batch, dim)?;
        let ns = NoiseSet::from_tensor(matrix(slice(noise, len, "noise")?, batch, dim)?)?;
        let loss = sci_loss_with(&f, &ns, SciNormalization::Noise)?;
        put(value, loss.value, "value")?;
        if !grad.is_null() {
            out_slice(grad, grad_len, len, "grad")?.copy_from_slice(loss.grad.data());
        }
        Ok(())
    })
}

/// Symmetric eigendecomposition of the row-major `n x n` matrix `a`.
/// Eigenvalues descend; column `k` of `vectors` is the k-th eigenvector.
///
/// # Safety
/// `a` and `vectors` must hold `n x n` values, `values` `n` values.
#[no_mangle]
pub unsafe extern "C" fn dsgq_eig_sym(a: *const f64, n: usize, values: *mut f64, vectors: *mut f64) -> DsgqStatus {
    guard(|| {
        let m = matrix(slice(a, n * n, "a")?, n, n)?;
        let e = eig_sym(&m)?;
        out_slice(values, n, n, "values")?.copy_from_slice(&e.values);
        out_slice(vectors, n * n, n * n, "vectors")?.copy_from_slice(&e.vectors);
        Ok(())
    })
}

/// Sum of the normalized similarity kernel of `batch x dim` features.
///
/// # Safety
/// `features` must hold `batch x dim` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn dsgq_similarity_index(features: *const f64, batch: usize, dim: usize, out: *mut f64) -> DsgqStatus {
    guard(|| {
        let f = matrix(slice(features, batch * dim, "features")?, batch, dim)?;
        put(out, similarity_index_s(&f)?, "out")
    })
}
