//! C ABI over the `cmoe` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_sample`
//! style constructors and released by the matching `*_free`. Every fallible
//! call returns a [`CmoeStatus`]; on failure a description is available from
//! [`cmoe_last_error`] on the same thread. Array arguments are caller-owned
//! and must hold the documented number of elements.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use cmoe::identifiability::{check_expert, Condition};
use cmoe::metrics::{loss_d1, loss_d2};
use cmoe::model::log_mixture_density;
use cmoe::{
    em_fit, gating_weight, log_density_grad, make_truth, sample, Activation, Dataset, EmConfig,
    Error, ExpertMean, FitResult, ModelSpec, PromptParams, Scenario, ScenarioTag,
};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmoeStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    Domain = 3,
    Input = 4,
    Underflow = 5,
    Io = 6,
    Format = 7,
    Panic = 8,
}

/// Benchmark scenario selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmoeScenario {
    /// Laplace pre-trained expert.
    Distinguishable = 1,
    /// Gaussian experts, prompt mean parameter drifting towards the pre-trained one.
    EtaDrift = 2,
    /// Gaussian experts, prompt variance drifting towards the pre-trained one.
    NuDrift = 3,
}

/// Expert mean function selector for identifiability checks.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmoeExpert {
    Tanh = 0,
    Sigmoid = 1,
    Gelu = 2,
    Relu = 3,
    /// `tanh(eta'x + b)`.
    AffineTanh = 4,
}

/// Borrowed view of gate and prompt parameters. `beta` holds `d` values and
/// `eta` holds `q` values for the model it is used with.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CmoeParams {
    pub beta: *const f64,
    pub tau: f64,
    pub eta: *const f64,
    pub nu: f64,
}

/// Caller-owned buffers receiving a parameter vector.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CmoeParamsOut {
    pub beta: *mut f64,
    pub tau: *mut f64,
    pub eta: *mut f64,
    pub nu: *mut f64,
}

/// EM settings exposed over the ABI. Fields not listed keep library defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CmoeEmOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub init_perturb_scale: f64,
    pub restarts: usize,
}

/// Model description plus the scenario's true parameters.
pub struct CmoeModel {
    spec: ModelSpec,
    truth: PromptParams,
}

pub struct CmoeDataset(Dataset);

pub struct CmoeFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CmoeStatus {
    match e {
        Error::Dimension { .. } => CmoeStatus::Dimension,
        Error::Domain(_) => CmoeStatus::Domain,
        Error::Input(_) => CmoeStatus::Input,
        Error::Underflow(_) => CmoeStatus::Underflow,
        Error::Io { .. } => CmoeStatus::Io,
        Error::Format { .. } => CmoeStatus::Format,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

type FfiResult<T> = std::result::Result<T, Fail>;

/// Run `f`, translating errors and panics into a status code.
fn guard<F: FnOnce() -> FfiResult<()>>(f: F) -> CmoeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CmoeStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CmoeStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            CmoeStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn arr<'a>(p: *const f64, len: usize, what: &'static str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn params_in(
    model: &CmoeModel,
    p: *const CmoeParams,
    what: &'static str,
) -> FfiResult<PromptParams> {
    let p = obj(p, what)?;
    let beta = arr(p.beta, model.spec.d, "params.beta")?.to_vec();
    let eta = arr(p.eta, model.spec.q(), "params.eta")?.to_vec();
    Ok(PromptParams::new(beta, p.tau, eta, p.nu)?)
}

unsafe fn params_out(src: &PromptParams, dst: &CmoeParamsOut) -> FfiResult<()> {
    if dst.beta.is_null() || dst.tau.is_null() || dst.eta.is_null() || dst.nu.is_null() {
        return Err(Fail::Null("output parameter buffer"));
    }
    slice::from_raw_parts_mut(dst.beta, src.beta.len()).copy_from_slice(&src.beta);
    slice::from_raw_parts_mut(dst.eta, src.eta.len()).copy_from_slice(&src.eta);
    *dst.tau = src.tau;
    *dst.nu = src.nu;
    Ok(())
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cmoe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn cmoe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Model and truth of a benchmark scenario at sample size `n` (the drift
/// scenarios depend on `n`).
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to free
/// with [`cmoe_model_free`].
#[no_mangle]
pub unsafe extern "C" fn cmoe_model_from_scenario(
    scenario: CmoeScenario,
    d: usize,
    n: usize,
    out_model: *mut *mut CmoeModel,
) -> CmoeStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let tag = match scenario {
            CmoeScenario::Distinguishable => ScenarioTag::DistinguishableLaplace,
            CmoeScenario::EtaDrift => ScenarioTag::NonDistEtaDrift,
            CmoeScenario::NuDrift => ScenarioTag::NonDistNuDrift,
        };
        let (spec, truth) = make_truth(&Scenario::new(tag, d), n)?;
        *slot = Box::into_raw(Box::new(CmoeModel { spec, truth }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cmoe_model_free(model: *mut CmoeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Covariate dimension `d` and prompt parameter dimension `q`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cmoe_model_dims(
    model: *const CmoeModel,
    d: *mut usize,
    q: *mut usize,
) -> CmoeStatus {
    guard(|| {
        let m = obj(model, "model")?;
        *out(d, "d")? = m.spec.d;
        *out(q, "q")? = m.spec.q();
        Ok(())
    })
}

/// Copy the true parameters into caller buffers (`d` and `q` values).
///
/// # Safety
/// `model` must be valid; the buffers must have the sizes given by [`cmoe_model_dims`].
#[no_mangle]
pub unsafe extern "C" fn cmoe_model_truth(
    model: *const CmoeModel,
    dst: CmoeParamsOut,
) -> CmoeStatus {
    guard(|| params_out(&obj(model, "model")?.truth, &dst))
}

/// `log p(y | x)` under `params`; `x` holds `d` values.
///
/// # Safety
/// Pointers must be valid and sized for the model.
#[no_mangle]
pub unsafe extern "C" fn cmoe_log_density(
    model: *const CmoeModel,
    params: *const CmoeParams,
    x: *const f64,
    y: f64,
    out_value: *mut f64,
) -> CmoeStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let p = params_in(m, params, "params")?;
        let x = arr(x, m.spec.d, "x")?;
        *out(out_value, "out_value")? = log_mixture_density(&m.spec, &p, x, y)?;
        Ok(())
    })
}

/// Gradient of `log p(y | x)` in `(beta, tau, eta, log nu)`; `out_grad`
/// receives `d + 1 + q + 1` values.
///
/// # Safety
/// Pointers must be valid and sized for the model.
#[no_mangle]
pub unsafe extern "C" fn cmoe_log_density_grad(
    model: *const CmoeModel,
    params: *const CmoeParams,
    x: *const f64,
    y: f64,
    out_grad: *mut f64,
) -> CmoeStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let p = params_in(m, params, "params")?;
        let x = arr(x, m.spec.d, "x")?;
        if out_grad.is_null() {
            return Err(Fail::Null("out_grad"));
        }
        let g = log_density_grad(&m.spec, &p, x, y)?;
        slice::from_raw_parts_mut(out_grad, g.len()).copy_from_slice(&g);
        Ok(())
    })
}

/// Gate weight `logistic(beta'x + tau)` for `d` values in `beta` and `x`.
///
/// # Safety
/// Pointers must be valid for `d` reads.
#[no_mangle]
pub unsafe extern "C" fn cmoe_gating_weight(
    x: *const f64,
    beta: *const f64,
    d: usize,
    tau: f64,
    out_value: *mut f64,
) -> CmoeStatus {
    guard(|| {
        let x = arr(x, d, "x")?;
        let beta = arr(beta, d, "beta")?;
        *out(out_value, "out_value")? = gating_weight(x, beta, tau)?;
        Ok(())
    })
}

/// Draw `n` observations from the model's true parameters.
///
/// # Safety
/// `model` and `out_data` must be valid; free the result with [`cmoe_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn cmoe_sample(
    model: *const CmoeModel,
    n: usize,
    seed: u64,
    out_data: *mut *mut CmoeDataset,
) -> CmoeStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let slot = out(out_data, "out_data")?;
        let ds = sample(&m.spec, &m.truth, n, seed)?;
        *slot = Box::into_raw(Box::new(CmoeDataset(ds)));
        Ok(())
    })
}

/// Dataset from `n` rows of row-major covariates (`n * d` values) and `n` responses.
///
/// # Safety
/// Arrays must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn cmoe_dataset_new(
    d: usize,
    n: usize,
    x: *const f64,
    y: *const f64,
    out_data: *mut *mut CmoeDataset,
) -> CmoeStatus {
    guard(|| {
        let slot = out(out_data, "out_data")?;
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Error::Input("n * d overflows".into()))?;
        let xs = arr(x, len, "x")?.to_vec();
        let ys = arr(y, n, "y")?.to_vec();
        *slot = Box::into_raw(Box::new(CmoeDataset(Dataset::new(d, xs, ys, 0)?)));
        Ok(())
    })
}

/// Number of observations; 0 for a null handle.
///
/// # Safety
/// `data` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn cmoe_dataset_len(data: *const CmoeDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.n())
}

/// Copy covariates (`n * d` values, row-major) and responses (`n` values).
/// Either buffer may be null to skip it.
///
/// # Safety
/// Non-null buffers must have room for the values.
#[no_mangle]
pub unsafe extern "C" fn cmoe_dataset_copy(
    data: *const CmoeDataset,
    x: *mut f64,
    y: *mut f64,
) -> CmoeStatus {
    guard(|| {
        let ds = &obj(data, "data")?.0;
        if !x.is_null() {
            slice::from_raw_parts_mut(x, ds.x().len()).copy_from_slice(ds.x());
        }
        if !y.is_null() {
            slice::from_raw_parts_mut(y, ds.n()).copy_from_slice(ds.y());
        }
        Ok(())
    })
}

/// # Safety
/// `data` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cmoe_dataset_free(data: *mut CmoeDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Library defaults for EM.
#[no_mangle]
pub extern "C" fn cmoe_em_options_default() -> CmoeEmOptions {
    let c = EmConfig::default();
    CmoeEmOptions {
        max_iter: c.max_iter,
        rel_tol: c.rel_tol,
        init_perturb_scale: c.init_perturb_scale,
        restarts: c.restarts,
    }
}

/// Fit gate and prompt parameters by EM, starting near the model's truth.
///
/// # Safety
/// Handles and `out_fit` must be valid; free the result with [`cmoe_fit_free`].
#[no_mangle]
pub unsafe extern "C" fn cmoe_em_fit(
    model: *const CmoeModel,
    data: *const CmoeDataset,
    options: CmoeEmOptions,
    seed: u64,
    out_fit: *mut *mut CmoeFit,
) -> CmoeStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let ds = &obj(data, "data")?.0;
        let slot = out(out_fit, "out_fit")?;
        let cfg = EmConfig {
            max_iter: options.max_iter,
            rel_tol: options.rel_tol,
            init_perturb_scale: options.init_perturb_scale,
            restarts: options.restarts,
            ..EmConfig::default()
        };
        let fit = em_fit(&m.spec, ds, &m.truth, &cfg, seed)?;
        *slot = Box::into_raw(Box::new(CmoeFit(fit)));
        Ok(())
    })
}

/// # Safety
/// `fit` and the buffers must be valid and sized for the model.
#[no_mangle]
pub unsafe extern "C" fn cmoe_fit_estimate(fit: *const CmoeFit, dst: CmoeParamsOut) -> CmoeStatus {
    guard(|| params_out(&obj(fit, "fit")?.0.estimate, &dst))
}

/// EM iterations performed and whether the tolerance was met.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cmoe_fit_summary(
    fit: *const CmoeFit,
    iterations: *mut usize,
    converged: *mut bool,
) -> CmoeStatus {
    guard(|| {
        let f = &obj(fit, "fit")?.0;
        *out(iterations, "iterations")? = f.iterations;
        *out(converged, "converged")? = f.converged;
        Ok(())
    })
}

/// Copy up to `cap` entries of the average log-likelihood trace into `buf`
/// and report the full trace length in `len`. Pass `cap = 0` to query the length.
///
/// # Safety
/// `buf` must have room for `cap` values; `len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cmoe_fit_trace(
    fit: *const CmoeFit,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> CmoeStatus {
    guard(|| {
        let t = &obj(fit, "fit")?.0.loglik_trace;
        *out(len, "len")? = t.len();
        let k = cap.min(t.len());
        if k > 0 {
            if buf.is_null() {
                return Err(Fail::Null("buf"));
            }
            slice::from_raw_parts_mut(buf, k).copy_from_slice(&t[..k]);
        }
        Ok(())
    })
}

/// # Safety
/// `fit` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cmoe_fit_free(fit: *mut CmoeFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Loss for distinguishable pre-trained experts between `g` and `g_star`.
///
/// # Safety
/// Pointers must be valid and sized for the model.
#[no_mangle]
pub unsafe extern "C" fn cmoe_loss_d1(
    model: *const CmoeModel,
    g: *const CmoeParams,
    g_star: *const CmoeParams,
    out_value: *mut f64,
) -> CmoeStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let a = params_in(m, g, "g")?;
        let b = params_in(m, g_star, "g_star")?;
        *out(out_value, "out_value")? = loss_d1(&a, &b)?;
        Ok(())
    })
}

/// Drift-aware loss, using the model's pre-trained `eta0` and `nu0`.
///
/// # Safety
/// Pointers must be valid and sized for the model.
#[no_mangle]
pub unsafe extern "C" fn cmoe_loss_d2(
    model: *const CmoeModel,
    g: *const CmoeParams,
    g_star: *const CmoeParams,
    out_value: *mut f64,
) -> CmoeStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let a = params_in(m, g, "g")?;
        let b = params_in(m, g_star, "g_star")?;
        let pre = &m.spec.pretrained;
        *out(out_value, "out_value")? = loss_d2(&a, &b, &pre.eta0, pre.nu0)?;
        Ok(())
    })
}

/// Identifiability checks for an expert mean. `min_sigma` and `pass` each
/// receive four entries: first-order gating, gradient product, mixed
/// second order, distinguishability.
///
/// # Safety
/// `min_sigma` and `pass` must have room for four values.
#[no_mangle]
pub unsafe extern "C" fn cmoe_check_ident(
    expert: CmoeExpert,
    d: usize,
    samples: usize,
    seed: u64,
    threshold: f64,
    min_sigma: *mut f64,
    pass: *mut bool,
) -> CmoeStatus {
    guard(|| {
        if min_sigma.is_null() || pass.is_null() {
            return Err(Fail::Null("output buffer"));
        }
        let kind = match expert {
            CmoeExpert::Tanh => ExpertMean::TANH,
            CmoeExpert::Sigmoid => ExpertMean::SIGMOID,
            CmoeExpert::Gelu => ExpertMean::GELU,
            CmoeExpert::Relu => ExpertMean::RELU,
            CmoeExpert::AffineTanh => ExpertMean::AffineInner(Activation::Tanh),
        };
        let verdicts = check_expert(kind, d, samples, seed, threshold)?;
        let order = [
            Condition::FirstOrderGating,
            Condition::GradientProduct,
            Condition::MixedSecondOrder,
            Condition::Distinguishability,
        ];
        let sig = slice::from_raw_parts_mut(min_sigma, 4);
        let ok = slice::from_raw_parts_mut(pass, 4);
        for (i, c) in order.iter().enumerate() {
            let v = verdicts
                .iter()
                .find(|v| v.condition == *c)
                .expect("every condition is checked");
            sig[i] = v.min_singular_value;
            ok[i] = v.pass;
        }
        Ok(())
    })
}
