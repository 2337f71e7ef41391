//! C interface to `ivep`.
//!
//! Objects are handed out as opaque pointers and released with the matching
//! `*_free` function. Every fallible call returns an [`IvepStatus`]; on
//! failure the message is kept per thread and read back with
//! [`ivep_last_error`]. Matrices cross the boundary as row-major `double`
//! arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ivep::ep::EpConfig;
use ivep::hyperinit::{strategy1, Strategy1Options};
use ivep::simulate::{gen_dataset, NoiseScale, Preset};
use ivep::two_stage::{fit, predict_response, vec_row_major, Dataset, FitOptions, HyperParams, TwoStageFit, XhatSource};
use ivep::Probability;
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvepStatus {
    Ok = 0,
    /// Invalid settings or hyperparameters.
    Config = 1,
    /// Malformed or inconsistent data.
    Data = 2,
    /// Factorization breakdown, non-finite update or solver failure.
    Numerical = 3,
    /// Null pointer or undersized buffer.
    InvalidArgument = 4,
    /// A panic was caught at the boundary.
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvepPreset {
    /// p = 300, q = 400.
    Full = 0,
    /// p = 100, q = 120.
    Scaled = 1,
    /// p = 60, q = 80.
    Small = 2,
}

/// Which coefficient estimate to copy out of a fit.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvepEstimate {
    /// Posterior means.
    Dense = 0,
    /// Ridge post-estimates, zero off the selected support.
    Post = 1,
    /// Inclusion log-odds.
    LogOdds = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvepHyperParams {
    pub sigma0_sq: f64,
    pub tau0_sq: f64,
    pub nu0: f64,
    pub omega0: f64,
    pub p0: f64,
    pub pi0: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvepFitConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub lambda_ridge: f64,
    /// Build the Stage II design from sparsified Stage I means.
    pub sparse_xhat: bool,
}

/// Opaque dataset handle.
pub struct IvepDataset(Dataset);

/// Opaque fit handle.
pub struct IvepFit {
    fit: TwoStageFit,
    p: usize,
    q: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Core(ivep::Error),
    Arg(String),
}

impl From<ivep::Error> for Failure {
    fn from(e: ivep::Error) -> Self {
        Failure::Core(e)
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> IvepStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IvepStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.to_string());
            match e.exit_code() {
                1 => IvepStatus::Config,
                2 => IvepStatus::Data,
                _ => IvepStatus::Numerical,
            }
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_last_error(msg);
            IvepStatus::InvalidArgument
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            IvepStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Arg(format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, need: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len < need {
        return Err(Failure::Arg(format!("{name} holds {len} values, need {need}")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Arg(format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::Arg(format!("{name} is null")))
}

fn out_ptr<T>(out: *mut T, name: &str) -> Result<*mut T, Failure> {
    if out.is_null() {
        Err(Failure::Arg(format!("{name} is null")))
    } else {
        Ok(out)
    }
}

fn to_hyper(h: &IvepHyperParams) -> Result<HyperParams, Failure> {
    let prob = |v: f64, name: &str| {
        Probability::new(v).map_err(|_| ivep::Error::Config(format!("{name} must lie in (0, 1), got {v}")))
    };
    let hyper = HyperParams {
        sigma0_sq: h.sigma0_sq,
        tau0_sq: h.tau0_sq,
        nu0: h.nu0,
        omega0: h.omega0,
        p0: prob(h.p0, "p0")?,
        pi0: prob(h.pi0, "pi0")?,
    };
    hyper.validate().map_err(|e| ivep::Error::Config(e.to_string()))?;
    Ok(hyper)
}

fn from_hyper(h: &HyperParams) -> IvepHyperParams {
    IvepHyperParams {
        sigma0_sq: h.sigma0_sq,
        tau0_sq: h.tau0_sq,
        nu0: h.nu0,
        omega0: h.omega0,
        p0: h.p0.value(),
        pi0: h.pi0.value(),
    }
}

/// Copies the message of the last failed call on this thread into `buf`
/// (NUL-terminated, truncated to `len`). Returns the full message length
/// including the terminator, or 0 when there is no message.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ivep_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Defaults used by the command-line tool.
#[no_mangle]
pub extern "C" fn ivep_fit_config_default() -> IvepFitConfig {
    let ep = EpConfig::default();
    let opts = FitOptions::default();
    IvepFitConfig {
        tol: ep.tol,
        max_iters: ep.max_iters,
        lambda_ridge: opts.lambda_ridge,
        sparse_xhat: opts.xhat == XhatSource::Sparse,
    }
}

/// Builds a dataset from `y` (length `n`), `x` (`n x p`) and `z` (`n x q`).
///
/// # Safety
/// The arrays must hold the stated number of values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivep_dataset_new(
    y: *const f64,
    x: *const f64,
    z: *const f64,
    n: usize,
    p: usize,
    q: usize,
    out: *mut *mut IvepDataset,
) -> IvepStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let y = DVector::from_column_slice(slice(y, n, "y")?);
        let x = DMatrix::from_row_slice(n, p, slice(x, n * p, "x")?);
        let z = DMatrix::from_row_slice(n, q, slice(z, n * q, "z")?);
        let data = Dataset::new(y, x, z)?;
        *out = Box::into_raw(Box::new(IvepDataset(data)));
        Ok(())
    })
}

/// Simulates a dataset under a preset's truth. `n = 0` picks the preset's
/// sample size.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivep_dataset_simulate(
    preset: IvepPreset,
    n: usize,
    seed: u64,
    out: *mut *mut IvepDataset,
) -> IvepStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let preset = match preset {
            IvepPreset::Full => Preset::Full,
            IvepPreset::Scaled => Preset::Scaled,
            IvepPreset::Small => Preset::Small,
        };
        let n = if n == 0 { preset.dims().0 } else { n };
        let data = gen_dataset(n, &preset.truth(), seed, NoiseScale::Variance)?;
        *out = Box::into_raw(Box::new(IvepDataset(data)));
        Ok(())
    })
}

/// # Safety
/// `data` must be a live dataset handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivep_dataset_dims(
    data: *const IvepDataset,
    n: *mut usize,
    p: *mut usize,
    q: *mut usize,
) -> IvepStatus {
    guard(|| {
        let d = &handle(data, "data")?.0;
        *out_ptr(n, "n")? = d.n();
        *out_ptr(p, "p")? = d.p();
        *out_ptr(q, "q")? = d.q();
        Ok(())
    })
}

/// Copies `y`, `x` and `z` (row-major) into caller buffers. Any of the
/// buffers may be null with length 0 to skip it.
///
/// # Safety
/// Each non-null buffer must hold its stated length.
#[no_mangle]
pub unsafe extern "C" fn ivep_dataset_copy(
    data: *const IvepDataset,
    y: *mut f64,
    y_len: usize,
    x: *mut f64,
    x_len: usize,
    z: *mut f64,
    z_len: usize,
) -> IvepStatus {
    guard(|| {
        let d = &handle(data, "data")?.0;
        if !y.is_null() {
            slice_mut(y, y_len, d.n(), "y")?.copy_from_slice(d.y.as_slice());
        }
        if !x.is_null() {
            slice_mut(x, x_len, d.x.len(), "x")?.copy_from_slice(&vec_row_major(&d.x));
        }
        if !z.is_null() {
            slice_mut(z, z_len, d.z.len(), "z")?.copy_from_slice(&vec_row_major(&d.z));
        }
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ivep_dataset_free(data: *mut IvepDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Strategy I hyperparameters from a two-stage LASSO fit.
///
/// # Safety
/// `data` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivep_strategy1(data: *const IvepDataset, out: *mut IvepHyperParams) -> IvepStatus {
    guard(|| {
        let d = &handle(data, "data")?.0;
        let out = out_ptr(out, "out")?;
        let report = strategy1(d, &Strategy1Options::default())?;
        *out = from_hyper(&report.hyper);
        Ok(())
    })
}

/// Runs both stages, sparsification and post-estimation. `config` may be
/// null for the defaults.
///
/// # Safety
/// `data` and `hyper` must be valid; `config` null or valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ivep_fit(
    data: *const IvepDataset,
    hyper: *const IvepHyperParams,
    config: *const IvepFitConfig,
    out: *mut *mut IvepFit,
) -> IvepStatus {
    guard(|| {
        let d = &handle(data, "data")?.0;
        let hyper = to_hyper(handle(hyper, "hyper")?)?;
        let out = out_ptr(out, "out")?;
        let c = config.as_ref().copied().unwrap_or_else(|| ivep_fit_config_default());
        let ep = EpConfig {
            tol: c.tol,
            max_iters: c.max_iters,
            ..EpConfig::default()
        };
        ep.validate().map_err(|e| ivep::Error::Config(e.to_string()))?;
        if !(c.lambda_ridge >= 0.0 && c.lambda_ridge.is_finite()) {
            return Err(ivep::Error::Config(format!("lambda_ridge must be non-negative, got {}", c.lambda_ridge)).into());
        }
        let opts = FitOptions {
            lambda_ridge: c.lambda_ridge,
            xhat: if c.sparse_xhat { XhatSource::Sparse } else { XhatSource::Dense },
        };
        let f = fit(d, &hyper, &ep, &opts)?;
        *out = Box::into_raw(Box::new(IvepFit {
            fit: f,
            p: d.p(),
            q: d.q(),
        }));
        Ok(())
    })
}

/// # Safety
/// `fit` must be a live fit handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivep_fit_dims(fit: *const IvepFit, p: *mut usize, q: *mut usize) -> IvepStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        *out_ptr(p, "p")? = f.p;
        *out_ptr(q, "q")? = f.q;
        Ok(())
    })
}

/// Copies the `p` second-stage coefficients into `out`.
///
/// # Safety
/// `fit` must be a live fit handle; `out` must hold `len >= p` values.
#[no_mangle]
pub unsafe extern "C" fn ivep_fit_beta(
    fit: *const IvepFit,
    which: IvepEstimate,
    out: *mut f64,
    len: usize,
) -> IvepStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        let src = match which {
            IvepEstimate::Dense => &f.fit.beta_hat,
            IvepEstimate::Post => &f.fit.beta_post,
            IvepEstimate::LogOdds => &f.fit.beta_u,
        };
        slice_mut(out, len, f.p, "out")?.copy_from_slice(src.as_slice());
        Ok(())
    })
}

/// Copies the `q x p` first-stage coefficients, row-major, into `out`.
///
/// # Safety
/// `fit` must be a live fit handle; `out` must hold `len >= q * p` values.
#[no_mangle]
pub unsafe extern "C" fn ivep_fit_gamma(
    fit: *const IvepFit,
    which: IvepEstimate,
    out: *mut f64,
    len: usize,
) -> IvepStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        let src = match which {
            IvepEstimate::Dense => &f.fit.gamma_hat,
            IvepEstimate::Post => &f.fit.gamma_post,
            IvepEstimate::LogOdds => &f.fit.gamma_u,
        };
        slice_mut(out, len, f.p * f.q, "out")?.copy_from_slice(&vec_row_major(src));
        Ok(())
    })
}

/// Writes 1 for each selected second-stage coefficient and 0 otherwise.
///
/// # Safety
/// `fit` must be a live fit handle; `out` must hold `len >= p` bytes.
#[no_mangle]
pub unsafe extern "C" fn ivep_fit_beta_support(fit: *const IvepFit, out: *mut u8, len: usize) -> IvepStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        let dst = slice_mut(out, len, f.p, "out")?;
        for (d, s) in dst.iter_mut().zip(&f.fit.beta_support) {
            *d = u8::from(*s);
        }
        Ok(())
    })
}

/// Number of Stage I columns that converged and whether Stage II did.
///
/// # Safety
/// `fit` must be a live fit handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivep_fit_converged(
    fit: *const IvepFit,
    stage1: *mut usize,
    stage2: *mut bool,
) -> IvepStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        *out_ptr(stage1, "stage1")? = f.fit.stage1_converged.iter().filter(|c| **c).count();
        *out_ptr(stage2, "stage2")? = f.fit.stage2_converged;
        Ok(())
    })
}

/// Predicts the response for `m` new rows of instruments `z` (`m x q`).
///
/// # Safety
/// `fit` must be a live fit handle; `z` must hold `m * q` values and `out`
/// `len >= m` values.
#[no_mangle]
pub unsafe extern "C" fn ivep_fit_predict(
    fit: *const IvepFit,
    z: *const f64,
    m: usize,
    use_post: bool,
    out: *mut f64,
    len: usize,
) -> IvepStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        let z = DMatrix::from_row_slice(m, f.q, slice(z, m * f.q, "z")?);
        let pred = predict_response(&z, &f.fit, use_post)?;
        slice_mut(out, len, m, "out")?.copy_from_slice(pred.as_slice());
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ivep_fit_free(fit: *mut IvepFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
