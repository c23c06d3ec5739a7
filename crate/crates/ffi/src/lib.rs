//! C ABI for the gaitgp kernels, MoGP, HMM and metrics.
//!
//! Functions return a [`GaitgpStatus`]; on failure a message is available from
//! [`gaitgp_last_error`] on the same thread. Models are opaque handles freed
//! with their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use gaitgp::hmm::{self, HmmModel, ObservationSequence, ObservationSource, N_STATES};
use gaitgp::kernels::{self, CompositeKernelSpec, SubKernelParams};
use gaitgp::kv::KvDocument;
use gaitgp::mogp::{self, MoGPModel, OptimizerConfig, TrainingSet};
use gaitgp::{metrics, Error};

/// Result codes. Validation and numeric failures match the CLI exit statuses.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GaitgpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    NumericFailure = 3,
    Panic = 4,
}

/// Composite kernel hyperparameters in natural (positive) units.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GaitgpKernelParams {
    pub periodic_variance: f64,
    pub periodic_lengthscale: f64,
    pub period: f64,
    pub se_variance: f64,
    pub se_lengthscale: f64,
    pub matern_variance: f64,
    pub matern_lengthscale: f64,
}

/// Opaque fitted MoGP.
pub struct GaitgpMogp {
    model: MoGPModel,
}

/// Opaque four-state HMM.
pub struct GaitgpHmm {
    model: HmmModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next gaitgp call on the same thread.
#[no_mangle]
pub extern "C" fn gaitgp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gaitgp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> GaitgpStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GaitgpStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            GaitgpStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            let status = if e.exit_code() == 3 {
                GaitgpStatus::NumericFailure
            } else {
                GaitgpStatus::InvalidInput
            };
            set_error(e.to_string());
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            GaitgpStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &'static str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn out<'a, T>(ptr: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    ptr.as_mut().ok_or(Failure::Null(what))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &'static str) -> FfiResult<&'a T> {
    ptr.as_ref().ok_or(Failure::Null(what))
}

unsafe fn text<'a>(ptr: *const c_char, what: &'static str) -> FfiResult<&'a str> {
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidInput(format!("{what} is not UTF-8"))))
}

fn spec_from(p: &GaitgpKernelParams) -> gaitgp::Result<CompositeKernelSpec> {
    let spec = CompositeKernelSpec {
        periodic: SubKernelParams::with_period(
            p.periodic_variance,
            p.periodic_lengthscale,
            p.period,
        ),
        se: SubKernelParams::new(p.se_variance, p.se_lengthscale),
        matern32: SubKernelParams::new(p.matern_variance, p.matern_lengthscale),
    };
    spec.validate()?;
    Ok(spec)
}

/// Composite kernel k(t, t').
///
/// # Safety
/// `params` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_kernel_eval(
    params: *const GaitgpKernelParams,
    t: f64,
    t_prime: f64,
    out: *mut f64,
) -> GaitgpStatus {
    guard(|| {
        let spec = spec_from(handle(params, "params")?)?;
        *self::out(out, "out")? = kernels::eval_composite(&spec, t, t_prime);
        Ok(())
    })
}

/// Fits a MoGP by Adam on `n` observations `(times[i], outputs[i], values[i])`
/// with default optimizer settings except `iterations` and `seed`.
///
/// # Safety
/// Arrays must hold `n` elements; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_mogp_fit(
    times: *const f64,
    outputs: *const usize,
    values: *const f64,
    n: usize,
    iterations: usize,
    seed: u64,
    out: *mut *mut GaitgpMogp,
) -> GaitgpStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let training = TrainingSet::new(
            slice(times, n, "times")?.to_vec(),
            slice(outputs, n, "outputs")?.to_vec(),
            slice(values, n, "values")?.to_vec(),
        )?;
        let config = OptimizerConfig {
            iterations,
            seed,
            ..Default::default()
        };
        let model = mogp::fit(&training, &config)?.model;
        *slot = Box::into_raw(Box::new(GaitgpMogp { model }));
        Ok(())
    })
}

/// Loads a `mogp-v1` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_mogp_load(
    path: *const c_char,
    out: *mut *mut GaitgpMogp,
) -> GaitgpStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let model = mogp::load_model(Path::new(text(path, "path")?))?;
        *slot = Box::into_raw(Box::new(GaitgpMogp { model }));
        Ok(())
    })
}

/// Writes a `mogp-v1` file atomically.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_mogp_save(
    model: *const GaitgpMogp,
    path: *const c_char,
) -> GaitgpStatus {
    guard(|| {
        let m = handle(model, "model")?;
        mogp::save_model(&m.model, Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// Number of outputs.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_mogp_outputs(
    model: *const GaitgpMogp,
    out: *mut usize,
) -> GaitgpStatus {
    guard(|| {
        *self::out(out, "out")? = handle(model, "model")?.model.n_outputs();
        Ok(())
    })
}

/// Log marginal likelihood of the model on its training data.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_mogp_lml(model: *const GaitgpMogp, out: *mut f64) -> GaitgpStatus {
    guard(|| {
        *self::out(out, "out")? = handle(model, "model")?.model.log_marginal_likelihood();
        Ok(())
    })
}

/// Posterior mean and standard deviation at `nq` query times. Outputs are
/// written output-major: `mean[m * nq + i]`, each buffer `outputs * nq` long.
///
/// # Safety
/// `query` holds `nq` values; `mean` and `std` hold `outputs * nq` values.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_mogp_predict(
    model: *const GaitgpMogp,
    query: *const f64,
    nq: usize,
    mean: *mut f64,
    std: *mut f64,
) -> GaitgpStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        let len = m.n_outputs() * nq;
        let mean = slice_mut(mean, len, "mean")?;
        let std = slice_mut(std, len, "std")?;
        let post = m.predict(slice(query, nq, "query")?)?;
        for o in 0..m.n_outputs() {
            mean[o * nq..(o + 1) * nq].copy_from_slice(&post.mean[o]);
            std[o * nq..(o + 1) * nq].copy_from_slice(&post.std[o]);
        }
        Ok(())
    })
}

/// Coregionalization matrix B, row-major, `outputs * outputs` values.
///
/// # Safety
/// `out` holds `outputs * outputs` values.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_mogp_coregionalization(
    model: *const GaitgpMogp,
    out: *mut f64,
) -> GaitgpStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        let mm = m.n_outputs();
        let dst = slice_mut(out, mm * mm, "out")?;
        let b = m.export_coregionalization()?.covariance;
        for i in 0..mm {
            for j in 0..mm {
                dst[i * mm + j] = b[(i, j)];
            }
        }
        Ok(())
    })
}

/// Frees a MoGP handle; NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_mogp_free(model: *mut GaitgpMogp) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// The default four-state HMM.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_hmm_default(out: *mut *mut GaitgpHmm) -> GaitgpStatus {
    guard(|| {
        *self::out(out, "out")? = Box::into_raw(Box::new(GaitgpHmm {
            model: hmm::default_model(),
        }));
        Ok(())
    })
}

/// Builds an HMM from `initial[4]`, row-major `transitions[16]`, row-major
/// `means[8]` (state, then right/left ankle) and `covariance[4]`.
///
/// # Safety
/// Arrays must hold the stated number of values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_hmm_new(
    initial: *const f64,
    transitions: *const f64,
    means: *const f64,
    covariance: *const f64,
    out: *mut *mut GaitgpHmm,
) -> GaitgpStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let pi = slice(initial, N_STATES, "initial")?;
        let a = slice(transitions, N_STATES * N_STATES, "transitions")?;
        let mu = slice(means, 2 * N_STATES, "means")?;
        let s = slice(covariance, 4, "covariance")?;
        let model = HmmModel {
            initial_probs: std::array::from_fn(|i| pi[i]),
            transitions: std::array::from_fn(|i| std::array::from_fn(|j| a[i * N_STATES + j])),
            state_means: std::array::from_fn(|i| [mu[2 * i], mu[2 * i + 1]]),
            shared_covariance: [[s[0], s[1]], [s[2], s[3]]],
        };
        model.validate()?;
        *slot = Box::into_raw(Box::new(GaitgpHmm { model }));
        Ok(())
    })
}

/// Loads an `hmm-v1` file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_hmm_load(
    path: *const c_char,
    out: *mut *mut GaitgpHmm,
) -> GaitgpStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let model = hmm::load_hmm(Path::new(text(path, "path")?))?;
        *slot = Box::into_raw(Box::new(GaitgpHmm { model }));
        Ok(())
    })
}

/// Renders the model as an `hmm-v1` document into `buf`. `written` receives
/// the document length plus one for the NUL; when `buf_len` is smaller,
/// nothing is copied and the call still succeeds so callers can size a buffer.
///
/// # Safety
/// `buf` holds `buf_len` bytes (may be NULL when `buf_len` is 0).
#[no_mangle]
pub unsafe extern "C" fn gaitgp_hmm_to_document(
    model: *const GaitgpHmm,
    buf: *mut c_char,
    buf_len: usize,
    written: *mut usize,
) -> GaitgpStatus {
    guard(|| {
        let text = hmm::hmm_to_document(&handle(model, "model")?.model).render();
        let need = text.len() + 1;
        *out(written, "written")? = need;
        if buf_len >= need {
            let dst = slice_mut(buf.cast::<u8>(), need, "buf")?;
            dst[..text.len()].copy_from_slice(text.as_bytes());
            dst[text.len()] = 0;
        }
        Ok(())
    })
}

/// Parses an `hmm-v1` document.
///
/// # Safety
/// `document` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_hmm_from_document(
    document: *const c_char,
    out: *mut *mut GaitgpHmm,
) -> GaitgpStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let model = hmm::hmm_from_document(&KvDocument::parse(text(document, "document")?)?)?;
        *slot = Box::into_raw(Box::new(GaitgpHmm { model }));
        Ok(())
    })
}

unsafe fn observations(obs: *const f64, steps: usize) -> FfiResult<ObservationSequence> {
    let flat = slice(obs, 2 * steps, "observations")?;
    let pairs = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    Ok(ObservationSequence::new(pairs, ObservationSource::Raw)?)
}

/// Forward log-likelihood of `steps` interleaved (right, left) observations.
///
/// # Safety
/// `obs` holds `2 * steps` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_hmm_forward(
    model: *const GaitgpHmm,
    obs: *const f64,
    steps: usize,
    out: *mut f64,
) -> GaitgpStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        let seq = observations(obs, steps)?;
        *self::out(out, "out")? = hmm::forward_log_likelihood(m, &seq)?;
        Ok(())
    })
}

/// Viterbi path as state labels 1..4 plus its joint log-probability.
///
/// # Safety
/// `obs` holds `2 * steps` values, `states` holds `steps` bytes and
/// `log_joint` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_hmm_viterbi(
    model: *const GaitgpHmm,
    obs: *const f64,
    steps: usize,
    states: *mut u8,
    log_joint: *mut f64,
) -> GaitgpStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        let seq = observations(obs, steps)?;
        let dst = slice_mut(states, steps, "states")?;
        let lj = out(log_joint, "log_joint")?;
        let decoded = hmm::viterbi_decode(m, &seq)?;
        for (d, s) in dst.iter_mut().zip(&decoded.states) {
            *d = s.label();
        }
        *lj = decoded.log_joint;
        Ok(())
    })
}

/// Frees an HMM handle; NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_hmm_free(model: *mut GaitgpHmm) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn pairwise(
    pred: *const f64,
    truth: *const f64,
    n: usize,
    out: *mut f64,
    f: fn(&[f64], &[f64]) -> gaitgp::Result<f64>,
) -> GaitgpStatus {
    guard(|| {
        let v = f(slice(pred, n, "pred")?, slice(truth, n, "truth")?)?;
        *self::out(out, "out")? = v;
        Ok(())
    })
}

/// Mean absolute error.
///
/// # Safety
/// `pred` and `truth` hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_mae(
    pred: *const f64,
    truth: *const f64,
    n: usize,
    out: *mut f64,
) -> GaitgpStatus {
    pairwise(pred, truth, n, out, metrics::mae)
}

/// Coefficient of determination of `pred` against `truth`.
///
/// # Safety
/// `pred` and `truth` hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_r_squared(
    pred: *const f64,
    truth: *const f64,
    n: usize,
    out: *mut f64,
) -> GaitgpStatus {
    pairwise(pred, truth, n, out, metrics::r_squared)
}

/// Dynamic time warping distance with absolute-difference cost.
///
/// # Safety
/// `a` holds `na` values, `b` holds `nb`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gaitgp_dtw(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut f64,
) -> GaitgpStatus {
    guard(|| {
        let v = metrics::dtw(slice(a, na, "a")?, slice(b, nb, "b")?)?;
        *self::out(out, "out")? = v;
        Ok(())
    })
}
