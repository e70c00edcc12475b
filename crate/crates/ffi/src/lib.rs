//! C ABI over telerisk-core.
//!
//! Every fallible call returns a [`TeleriskStatus`]; on failure the message
//! is available from [`telerisk_last_error`] on the same thread. Handles are
//! opaque and owned by the caller until passed to their `_free` function.
//! Output arrays are caller-allocated, with their capacity passed alongside.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use telerisk_core::pipeline::{ErrorKind, PipelineError};
use telerisk_core::risk::{self, DriverPosterior, GammaPrior, LayerSystem, MltcProfile, SeverityWeights};
use telerisk_core::severity::{self, SeverityConfig, SeverityModel};
use telerisk_core::wavelet::{self, AggregationRule, WaveletDecomposition, WaveletFamily};

/// Result of every fallible call. Values 2 to 4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeleriskStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeleriskFamily {
    D4 = 0,
    Haar = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeleriskRule {
    SignedMaxAbs = 0,
    MaxAbs = 1,
    AverageAbs = 2,
}

/// MODWT of one series.
pub struct TeleriskDecomposition(WaveletDecomposition);

/// Fitted severity mixture.
pub struct TeleriskSeverityModel {
    model: SeverityModel,
    layers: LayerSystem,
}

/// Running Gamma posterior of one driver.
pub struct TeleriskDriverPosterior(DriverPosterior);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(TeleriskStatus, String);

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let status = match e.kind {
            ErrorKind::Config => TeleriskStatus::Config,
            ErrorKind::Data => TeleriskStatus::Data,
            ErrorKind::Numerical => TeleriskStatus::Numerical,
        };
        Failure(status, e.message)
    }
}

macro_rules! impl_failure {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                PipelineError::from(e).into()
            }
        }
    )*};
}

impl_failure!(wavelet::WaveletError, severity::SeverityError, risk::RiskError);

fn null(what: &str) -> Failure {
    Failure(TeleriskStatus::NullPointer, format!("{what} is null"))
}

fn config(msg: impl Into<String>) -> Failure {
    Failure(TeleriskStatus::Config, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TeleriskStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TeleriskStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TeleriskStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn input<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { slice::from_raw_parts(ptr, len) })
}

/// # Safety
/// `ptr` must be null or valid for `cap` writes.
unsafe fn output<'a, T>(ptr: *mut T, cap: usize, need: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if cap < need {
        return Err(Failure(TeleriskStatus::BufferTooSmall, format!("{what} needs {need} slots, got {cap}")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { slice::from_raw_parts_mut(ptr, need) })
}

fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    unsafe { ptr.as_mut() }.ok_or_else(|| null(what))
}

fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { ptr.as_ref() }.ok_or_else(|| null(what))
}

fn prior_from(alpha: &[f64], beta: &[f64]) -> Result<GammaPrior, Failure> {
    if alpha.len() != beta.len() || alpha.is_empty() {
        return Err(config("alpha and beta must have the same nonzero length"));
    }
    if alpha.iter().chain(beta).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(config("prior parameters must be positive and finite"));
    }
    Ok(GammaPrior { alpha: alpha.to_vec(), beta: beta.to_vec(), omega: 0.0, fallback_used: vec![false; alpha.len()] })
}

/// Message of the previous call on this thread if it failed, else null.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn telerisk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn telerisk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn telerisk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// MODWT of `samples` to depth `levels`.
///
/// # Safety
/// `samples` must be valid for `len` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn telerisk_modwt_forward(
    samples: *const f64,
    len: usize,
    levels: usize,
    family: TeleriskFamily,
    out: *mut *mut TeleriskDecomposition,
) -> TeleriskStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let x = unsafe { input(samples, len, "samples") }?;
        let family = match family {
            TeleriskFamily::D4 => WaveletFamily::D4,
            TeleriskFamily::Haar => WaveletFamily::Haar,
        };
        let d = wavelet::modwt_forward_with(x, levels, family)?;
        *out = Box::into_raw(Box::new(TeleriskDecomposition(d)));
        Ok(())
    })
}

/// Series length of a decomposition, 0 for null.
///
/// # Safety
/// `d` must be null or a live decomposition handle.
#[no_mangle]
pub unsafe extern "C" fn telerisk_decomposition_len(d: *const TeleriskDecomposition) -> usize {
    unsafe { d.as_ref() }.map_or(0, |d| d.0.len())
}

/// Depth of a decomposition, 0 for null.
///
/// # Safety
/// `d` must be null or a live decomposition handle.
#[no_mangle]
pub unsafe extern "C" fn telerisk_decomposition_levels(d: *const TeleriskDecomposition) -> usize {
    unsafe { d.as_ref() }.map_or(0, |d| d.0.levels())
}

/// Copies level `level` (1-based) into `out`; level 0 selects the scaling
/// coefficients.
///
/// # Safety
/// `d` must be a live handle and `out` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn telerisk_decomposition_level(
    d: *const TeleriskDecomposition,
    level: usize,
    out: *mut f64,
    cap: usize,
) -> TeleriskStatus {
    guard(|| {
        let d = &handle(d, "decomposition")?.0;
        if level > d.levels() {
            return Err(config(format!("level {level} beyond depth {}", d.levels())));
        }
        let src = if level == 0 { &d.scaling_coeffs[..] } else { d.level(level) };
        unsafe { output(out, cap, src.len(), "out") }?.copy_from_slice(src);
        Ok(())
    })
}

/// Inverse transform into `out`.
///
/// # Safety
/// `d` must be a live handle and `out` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn telerisk_decomposition_inverse(
    d: *const TeleriskDecomposition,
    out: *mut f64,
    cap: usize,
) -> TeleriskStatus {
    guard(|| {
        let d = &handle(d, "decomposition")?.0;
        let x = wavelet::modwt_inverse(d);
        unsafe { output(out, cap, x.len(), "out") }?.copy_from_slice(&x);
        Ok(())
    })
}

/// Aggregates all levels with `rule` into `out`.
///
/// # Safety
/// `d` must be a live handle and `out` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn telerisk_decomposition_aggregate(
    d: *const TeleriskDecomposition,
    rule: TeleriskRule,
    out: *mut f64,
    cap: usize,
) -> TeleriskStatus {
    guard(|| {
        let d = &handle(d, "decomposition")?.0;
        let rule = match rule {
            TeleriskRule::SignedMaxAbs => AggregationRule::SignedMaxAbs,
            TeleriskRule::MaxAbs => AggregationRule::MaxAbs,
            TeleriskRule::AverageAbs => AggregationRule::AverageAbs,
        };
        let agg = wavelet::aggregate(d, &rule, &[])?;
        unsafe { output(out, cap, agg.len(), "out") }?.copy_from_slice(&agg.values);
        Ok(())
    })
}

/// # Safety
/// `d` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn telerisk_decomposition_free(d: *mut TeleriskDecomposition) {
    if !d.is_null() {
        drop(unsafe { Box::from_raw(d) });
    }
}

/// Fits a mixture with `g` Gaussians and `m_left`/`m_right` layers by the
/// full candidate search. `q` and `p` size the endpoint grids.
///
/// # Safety
/// `data` must be valid for `n` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn telerisk_severity_fit(
    data: *const f64,
    n: usize,
    g: usize,
    m_left: usize,
    m_right: usize,
    alpha: f64,
    q: usize,
    p: usize,
    seed: u64,
    out: *mut *mut TeleriskSeverityModel,
) -> TeleriskStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let x = unsafe { input(data, n, "data") }?;
        let cfg = SeverityConfig { alpha, q, p, ..Default::default() };
        let fit = severity::mu_memr(x, g, m_left, m_right, &cfg, seed)?;
        let layers = LayerSystem::from_model(&fit.model);
        *out = Box::into_raw(Box::new(TeleriskSeverityModel { model: fit.model, layers }));
        Ok(())
    })
}

/// Loads a model from the JSON written by `telerisk fit` (model.json).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn telerisk_severity_model_from_json(
    json: *const c_char,
    out: *mut *mut TeleriskSeverityModel,
) -> TeleriskStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if json.is_null() {
            return Err(null("json"));
        }
        let text = unsafe { CStr::from_ptr(json) }
            .to_str()
            .map_err(|e| Failure(TeleriskStatus::Data, format!("json is not UTF-8: {e}")))?;
        let model: SeverityModel =
            serde_json::from_str(text).map_err(|e| Failure(TeleriskStatus::Data, format!("model json: {e}")))?;
        model.check_constraints(model.n).map_err(|e| Failure(TeleriskStatus::Data, e))?;
        let layers = LayerSystem::from_model(&model);
        *out = Box::into_raw(Box::new(TeleriskSeverityModel { model, layers }));
        Ok(())
    })
}

/// Serializes a model; release the result with `telerisk_string_free`.
///
/// # Safety
/// `m` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn telerisk_severity_model_to_json(
    m: *const TeleriskSeverityModel,
    out: *mut *mut c_char,
) -> TeleriskStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let m = handle(m, "model")?;
        let text = serde_json::to_string(&m.model).map_err(|e| Failure(TeleriskStatus::Data, e.to_string()))?;
        *out = CString::new(text).map_err(|e| Failure(TeleriskStatus::Data, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Number of tail layers M, 0 for null.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn telerisk_severity_layer_count(m: *const TeleriskSeverityModel) -> usize {
    unsafe { m.as_ref() }.map_or(0, |m| m.layers.len())
}

/// Log-likelihood of the fitted model, NaN for null.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn telerisk_severity_loglik(m: *const TeleriskSeverityModel) -> f64 {
    unsafe { m.as_ref() }.map_or(f64::NAN, |m| m.model.log_lik)
}

/// Layer probabilities in layer order: left layers deepest first, then
/// right layers from the bulk outward.
///
/// # Safety
/// `m` must be a live handle and `out` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn telerisk_severity_layer_probabilities(
    m: *const TeleriskSeverityModel,
    out: *mut f64,
    cap: usize,
) -> TeleriskStatus {
    guard(|| {
        let pis = handle(m, "model")?.layers.probabilities();
        unsafe { output(out, cap, pis.len(), "out") }?.copy_from_slice(&pis);
        Ok(())
    })
}

/// Multi-layer tail counts of the retained positions of one trip. Writes
/// one count per layer to `counts` and the exposure to `exposure`.
///
/// # Safety
/// `values` must be valid for `len` reads, `retained` for `n_retained`
/// reads, `counts` for `cap` writes and `exposure` for one write.
#[no_mangle]
pub unsafe extern "C" fn telerisk_severity_mltc(
    m: *const TeleriskSeverityModel,
    values: *const f64,
    len: usize,
    retained: *const usize,
    n_retained: usize,
    counts: *mut u64,
    cap: usize,
    exposure: *mut u64,
) -> TeleriskStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let exposure = out_ref(exposure, "exposure")?;
        let values = unsafe { input(values, len, "values") }?;
        let retained = unsafe { input(retained, n_retained, "retained") }?;
        let out = unsafe { output(counts, cap, m.layers.len(), "counts") }?;
        let prof = risk::mltc("", "", values, retained, &m.layers)?;
        out.copy_from_slice(&prof.counts);
        *exposure = prof.exposure;
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn telerisk_severity_model_free(m: *mut TeleriskSeverityModel) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Severity weights proportional to `pis[k]^(-gamma)`, normalized.
///
/// # Safety
/// `pis` must be valid for `m` reads and `out` for `m` writes.
#[no_mangle]
pub unsafe extern "C" fn telerisk_severity_weights(
    pis: *const f64,
    m: usize,
    gamma: f64,
    out: *mut f64,
) -> TeleriskStatus {
    guard(|| {
        let pis = unsafe { input(pis, m, "pis") }?;
        let w = risk::severity_weights(pis, gamma)?;
        unsafe { output(out, m, m, "out") }?.copy_from_slice(&w.weights);
        Ok(())
    })
}

/// Trip risk index under the Gamma prior (`alpha`, `beta`).
///
/// # Safety
/// `alpha`, `beta`, `counts` and `weights` must each be valid for `m`
/// reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn telerisk_trip_index(
    alpha: *const f64,
    beta: *const f64,
    weights: *const f64,
    counts: *const u64,
    m: usize,
    exposure: u64,
    out: *mut f64,
) -> TeleriskStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let prior = prior_from(unsafe { input(alpha, m, "alpha") }?, unsafe { input(beta, m, "beta") }?)?;
        let weights = SeverityWeights { gamma: f64::NAN, weights: unsafe { input(weights, m, "weights") }?.to_vec() };
        let profile = MltcProfile {
            driver_id: String::new(),
            trip_id: String::new(),
            exposure,
            counts: unsafe { input(counts, m, "counts") }?.to_vec(),
        };
        *out = risk::trip_index(&profile, &prior, &weights)?.index;
        Ok(())
    })
}

/// New driver posterior at the prior (`alpha`, `beta`).
///
/// # Safety
/// `alpha` and `beta` must be valid for `m` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn telerisk_driver_posterior_new(
    alpha: *const f64,
    beta: *const f64,
    m: usize,
    out: *mut *mut TeleriskDriverPosterior,
) -> TeleriskStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let prior = prior_from(unsafe { input(alpha, m, "alpha") }?, unsafe { input(beta, m, "beta") }?)?;
        *out = Box::into_raw(Box::new(TeleriskDriverPosterior(DriverPosterior::new("", &prior))));
        Ok(())
    })
}

/// Adds one trip's counts and exposure.
///
/// # Safety
/// `d` must be a live handle and `counts` valid for `m` reads.
#[no_mangle]
pub unsafe extern "C" fn telerisk_driver_posterior_update(
    d: *mut TeleriskDriverPosterior,
    counts: *const u64,
    m: usize,
    exposure: u64,
) -> TeleriskStatus {
    guard(|| {
        let d = &mut out_ref(d, "posterior")?.0;
        let profile = MltcProfile {
            driver_id: String::new(),
            trip_id: String::new(),
            exposure,
            counts: unsafe { input(counts, m, "counts") }?.to_vec(),
        };
        d.update(&profile)?;
        Ok(())
    })
}

/// Posterior mean intensity of each layer into `out`.
///
/// # Safety
/// `d` must be a live handle and `out` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn telerisk_driver_posterior_means(
    d: *const TeleriskDriverPosterior,
    out: *mut f64,
    cap: usize,
) -> TeleriskStatus {
    guard(|| {
        let d = &handle(d, "posterior")?.0;
        let m = d.sum_counts.len();
        let out = unsafe { output(out, cap, m, "out") }?;
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = d.posterior_mean(k);
        }
        Ok(())
    })
}

/// Driver risk index after the trips seen so far.
///
/// # Safety
/// `d` must be a live handle, `weights` valid for `m` reads and `out` for
/// one write.
#[no_mangle]
pub unsafe extern "C" fn telerisk_driver_posterior_index(
    d: *const TeleriskDriverPosterior,
    weights: *const f64,
    m: usize,
    out: *mut f64,
) -> TeleriskStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let d = &handle(d, "posterior")?.0;
        let weights = SeverityWeights { gamma: f64::NAN, weights: unsafe { input(weights, m, "weights") }?.to_vec() };
        *out = d.index(&weights)?;
        Ok(())
    })
}

/// # Safety
/// `d` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn telerisk_driver_posterior_free(d: *mut TeleriskDriverPosterior) {
    if !d.is_null() {
        drop(unsafe { Box::from_raw(d) });
    }
}
