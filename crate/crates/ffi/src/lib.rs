//! C ABI over `tactile-zsl`.
//!
//! Objects cross the boundary as opaque heap handles released by the matching
//! `*_free` function. Every fallible call returns a [`TzStatus`]; on failure
//! the message is kept per thread and read back with [`tz_last_error`].
//! Matrices are row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tactile_zsl::config::RunConfig;
use tactile_zsl::data::{gen_synthetic, Dataset, SyntheticConfig, TouchedPart};
use tactile_zsl::format::{load_dataset, load_model, save_dataset, save_model};
use tactile_zsl::metrics::harmonic_mean;
use tactile_zsl::networks::{FeatureDims, VaeGanModel};
use tactile_zsl::nn::Matrix;
use tactile_zsl::pipeline::{run_zsl, train_model};
use tactile_zsl::trainer::train;
use tactile_zsl::zsl::{fit_gaussian, GaussianGate};
use tactile_zsl::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TzStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    Io = 4,
    Data = 5,
    Numerical = 6,
    Untrained = 7,
    Panic = 8,
}

impl From<&Error> for TzStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidArgument(_) | Error::Usage(_) => {
                TzStatus::InvalidArgument
            }
            Error::Format { .. } | Error::Json(_) => TzStatus::Format,
            Error::Io { .. } => TzStatus::Io,
            Error::Dimension { .. } | Error::Data(_) => TzStatus::Data,
            Error::Numerical(_) => TzStatus::Numerical,
            Error::Untrained => TzStatus::Untrained,
        }
    }
}

/// Opaque dataset handle.
pub struct TzDataset(Dataset);

/// Opaque model handle.
pub struct TzModel(VaeGanModel);

/// Opaque Gaussian gate handle.
pub struct TzGate(GaussianGate);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(TzStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(TzStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TzStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(TzStatus::InvalidArgument, msg.into())
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> TzStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TzStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TzStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn matrix_arg(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Matrix, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid(format!("{what} size overflows")))?;
    Ok(Matrix::from_vec(rows, cols, std::slice::from_raw_parts(p, n).to_vec())?)
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the next
/// call on the same thread.
#[no_mangle]
pub extern "C" fn tz_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `2 a b / (a + b)`, or 0 when either input is not positive.
#[no_mangle]
pub extern "C" fn tz_harmonic_mean(acc_t: f64, acc_u: f64) -> f64 {
    harmonic_mean(acc_t, acc_u)
}

/// Shape of a synthetic dataset.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TzSyntheticConfig {
    pub touched: usize,
    pub validation: usize,
    pub untouched: usize,
    pub d_v: usize,
    pub d_s: usize,
    pub d_x: usize,
    pub samples_per_class: usize,
    pub noise: f64,
    pub seed: u64,
}

/// The default desk-scale dataset shape.
#[no_mangle]
pub extern "C" fn tz_synthetic_config_default() -> TzSyntheticConfig {
    let d = SyntheticConfig::default();
    TzSyntheticConfig {
        touched: d.touched,
        validation: d.validation,
        untouched: d.untouched,
        d_v: d.dims.d_v,
        d_s: d.dims.d_s,
        d_x: d.dims.d_x,
        samples_per_class: d.samples_per_class,
        noise: d.noise,
        seed: d.seed,
    }
}

/// # Safety
/// `cfg` must point to a valid config and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn tz_dataset_generate(
    cfg: *const TzSyntheticConfig,
    out: *mut *mut TzDataset,
) -> TzStatus {
    guard(|| {
        let c = handle(cfg, "cfg")?;
        let ds = gen_synthetic(&SyntheticConfig {
            touched: c.touched,
            validation: c.validation,
            untouched: c.untouched,
            dims: FeatureDims {
                d_v: c.d_v,
                d_s: c.d_s,
                d_x: c.d_x,
            },
            samples_per_class: c.samples_per_class,
            noise: c.noise,
            seed: c.seed,
            ..SyntheticConfig::default()
        })?;
        store(out, TzDataset(ds))
    })
}

/// Loads a dataset from a directory or manifest path.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tz_dataset_load(path: *const c_char, out: *mut *mut TzDataset) -> TzStatus {
    guard(|| {
        let p = path_arg(path)?;
        store(out, TzDataset(load_dataset(&p)?))
    })
}

/// Writes the dataset files and manifest into `dir`.
///
/// # Safety
/// `ds` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tz_dataset_save(ds: *const TzDataset, dir: *const c_char) -> TzStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        save_dataset(&ds.0, &path_arg(dir)?)?;
        Ok(())
    })
}

/// Feature widths and row count of a dataset.
///
/// # Safety
/// `ds` must be a live handle; output pointers may be null to skip a value.
#[no_mangle]
pub unsafe extern "C" fn tz_dataset_shape(
    ds: *const TzDataset,
    d_v: *mut usize,
    d_s: *mut usize,
    d_x: *mut usize,
    rows: *mut usize,
) -> TzStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let dims = ds.meta.dims;
        for (p, v) in [(d_v, dims.d_v), (d_s, dims.d_s), (d_x, dims.d_x), (rows, ds.labels.len())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tz_dataset_free(ds: *mut TzDataset) {
    free(ds);
}

/// Builds and trains a model on the touched training rows with the default
/// desk configuration. `iterations` overrides the configured count.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tz_model_train(
    ds: *const TzDataset,
    iterations: usize,
    seed: u64,
    out: *mut *mut TzModel,
) -> TzStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.0;
        let mut cfg = RunConfig::default().with_seed(seed);
        cfg.train.iterations = iterations;
        let (model, _) = train_model(ds, &cfg)?;
        store(out, TzModel(model))
    })
}

/// Runs `iterations` more training iterations on an existing model.
///
/// # Safety
/// `model` and `ds` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn tz_model_continue(
    model: *mut TzModel,
    ds: *const TzDataset,
    iterations: usize,
    seed: u64,
) -> TzStatus {
    guard(|| {
        let model = &mut handle_mut(model, "model")?.0;
        let ds = &handle(ds, "dataset")?.0;
        let mut cfg = RunConfig::default().with_seed(seed);
        cfg.train.iterations = iterations;
        let set = ds.touched(TouchedPart::Train {
            stride: cfg.holdout_stride,
        })?;
        train(model, &set, &cfg.train)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tz_model_load(path: *const c_char, out: *mut *mut TzModel) -> TzStatus {
    guard(|| {
        let (model, _) = load_model(&path_arg(path)?)?;
        store(out, TzModel(model))
    })
}

/// Saves the model, with `gate` embedded when it is not null.
///
/// # Safety
/// `model` must be a live handle, `gate` null or live, `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tz_model_save(
    model: *const TzModel,
    gate: *const TzGate,
    path: *const c_char,
) -> TzStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let gate = gate.as_ref().map(|g| &g.0);
        save_model(&path_arg(path)?, model, gate)?;
        Ok(())
    })
}

/// Iterations the model has been trained for.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tz_model_iterations(model: *const TzModel, out: *mut u64) -> TzStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        *handle_mut(out, "out")? = model.iterations_trained;
        Ok(())
    })
}

/// Generates one tactile row per conditioning row. `visual` is `rows x d_v`,
/// `semantic` is `rows x d_s`, and `out` holds `rows x d_x` values.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn tz_model_generate(
    model: *const TzModel,
    visual: *const f64,
    semantic: *const f64,
    rows: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> TzStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        if model.iterations_trained == 0 {
            return Err(Error::Untrained.into());
        }
        let dims = model.dims();
        let v = matrix_arg(visual, rows, dims.d_v, "visual")?;
        let s = matrix_arg(semantic, rows, dims.d_s, "semantic")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len != rows * dims.d_x {
            return Err(invalid(format!("out_len {out_len}, need {}", rows * dims.d_x)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = model.sample(&v, &s, 1.0, &mut rng)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(x.data());
        Ok(())
    })
}

/// Conventional zero-shot average accuracy on the untouched rows of `ds`.
///
/// # Safety
/// `model` and `ds` must be live handles and `accuracy` writable.
#[no_mangle]
pub unsafe extern "C" fn tz_eval_zsl(
    model: *const TzModel,
    ds: *const TzDataset,
    seed: u64,
    accuracy: *mut f64,
) -> TzStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let ds = &handle(ds, "dataset")?.0;
        let out = run_zsl(model, ds, &RunConfig::default().with_seed(seed))?;
        *handle_mut(accuracy, "accuracy")? = out.report.average_accuracy;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tz_model_free(model: *mut TzModel) {
    free(model);
}

/// Fits a diagonal Gaussian to `rows x cols` features; the threshold is unset.
///
/// # Safety
/// `x` must hold `rows * cols` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn tz_gate_fit(
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut *mut TzGate,
) -> TzStatus {
    guard(|| {
        let m = matrix_arg(x, rows, cols, "x")?;
        store(out, TzGate(fit_gaussian(&m)?))
    })
}

/// Loads the gate stored in a model container.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tz_gate_load(path: *const c_char, out: *mut *mut TzGate) -> TzStatus {
    guard(|| {
        let p = path_arg(path)?;
        let (_, gate) = load_model(&p)?;
        let gate = gate.ok_or_else(|| Fail(TzStatus::Format, format!("{} has no gate", p.display())))?;
        store(out, TzGate(gate))
    })
}

/// # Safety
/// `gate` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tz_gate_set_threshold(gate: *mut TzGate, beta: f64) -> TzStatus {
    guard(|| {
        if beta.is_nan() {
            return Err(invalid("threshold is NaN"));
        }
        let g = handle_mut(gate, "gate")?;
        g.0 = g.0.clone().with_threshold(beta);
        Ok(())
    })
}

/// # Safety
/// `gate` must be a live handle, `x` hold `len` values, `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn tz_gate_log_density(
    gate: *const TzGate,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> TzStatus {
    guard(|| {
        let g = &handle(gate, "gate")?.0;
        if x.is_null() {
            return Err(null("x"));
        }
        let v = g.log_density(std::slice::from_raw_parts(x, len))?;
        *handle_mut(out, "out")? = v;
        Ok(())
    })
}

/// Writes 1 when `x` routes to the touched classifier, 0 otherwise.
///
/// # Safety
/// `gate` must be a live handle, `x` hold `len` values, `touched` be writable.
#[no_mangle]
pub unsafe extern "C" fn tz_gate_route(
    gate: *const TzGate,
    x: *const f64,
    len: usize,
    touched: *mut i32,
) -> TzStatus {
    guard(|| {
        let g = &handle(gate, "gate")?.0;
        let m = matrix_arg(x, 1, len, "x")?;
        let r = g.route(&m)?;
        *handle_mut(touched, "touched")? = i32::from(r[0]);
        Ok(())
    })
}

/// # Safety
/// `gate` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tz_gate_free(gate: *mut TzGate) {
    free(gate);
}
