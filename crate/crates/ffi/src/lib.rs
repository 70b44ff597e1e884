//! C interface.
//!
//! Models and filters are opaque heap handles created by `psun_*_new`
//! functions and released with the matching `psun_*_free`. Every fallible
//! function returns a [`PsunStatus`]; the message of the last error on the
//! calling thread is available from [`psun_last_error`]. Panics never cross
//! the boundary and are reported as `PSUN_STATUS_PANIC`.

use probit_sun::cli::config::parse_config;
use probit_sun::filter::{ExactFilter, FilterConfig};
use probit_sun::gauss::{CdfConfig, TmvnConfig};
use probit_sun::smoother::marginal_likelihood;
use probit_sun::{BinarySeries, Error, ModelSpec};
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsunStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Matrix = 4,
    Numeric = 5,
    Identifiability = 6,
    Io = 7,
    Panic = 99,
}

/// Opaque model handle.
pub struct PsunModel {
    spec: ModelSpec,
}

/// Opaque exact-filter handle.
pub struct PsunFilter {
    inner: ExactFilter,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PsunStatus {
    match e {
        Error::Validation(_) | Error::Dimension(_) | Error::Config { .. } | Error::UnknownFunctional(_) => {
            PsunStatus::Validation
        }
        Error::NotPositiveDefinite { .. } | Error::Matrix(_) => PsunStatus::Matrix,
        Error::Identifiability(_) => PsunStatus::Identifiability,
        Error::Numerical(_) | Error::Infeasible { .. } | Error::Degenerate { .. } | Error::Approximation { .. } => {
            PsunStatus::Numeric
        }
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => PsunStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> PsunStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PsunStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PsunStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            PsunStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PsunStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn binary_rows(y: &[u8], n: usize, m: usize) -> Result<BinarySeries, Fail> {
    if y.len() != n * m {
        return Err(Fail::Arg(format!("expected {} responses, got {}", n * m, y.len())));
    }
    Ok(BinarySeries::new(y.chunks(m).map(<[u8]>::to_vec).collect())?)
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn psun_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let k = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), k);
            *buf.add(k) = 0;
        }
        msg.len()
    })
}

/// Scalar model `y_t = 1(f θ_t + ε_t > 0)`, `θ_t = g θ_{t-1} + η_t`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn psun_model_scalar(
    n: usize,
    a0: f64,
    p0: f64,
    w: f64,
    f: f64,
    g: f64,
    v: f64,
    out: *mut *mut PsunModel,
) -> PsunStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let spec = ModelSpec::scalar(n, a0, p0, w, f, g, v);
        spec.check()?;
        *out = Box::into_raw(Box::new(PsunModel { spec }));
        Ok(())
    })
}

/// Model from a JSON configuration string (same schema as the command-line
/// `--config` file; `n` is required and the fixed design is assumed).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn psun_model_from_json(json: *const c_char, out: *mut *mut PsunModel) -> PsunStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        if json.is_null() {
            return Err(Fail::Null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| Fail::Arg("configuration is not valid UTF-8".into()))?;
        let spec = parse_config(text)?.model(None)?;
        *out = Box::into_raw(Box::new(PsunModel { spec }));
        Ok(())
    })
}

/// Horizon, state and response dimensions.
///
/// # Safety
/// `model` must come from a `psun_model_*` constructor; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn psun_model_dims(model: *const PsunModel, n: *mut usize, p: *mut usize, m: *mut usize) -> PsunStatus {
    guard(|| {
        let s = &deref(model, "model")?.spec;
        for (ptr, v) in [(n, s.n), (p, s.p), (m, s.m)] {
            if let Some(r) = ptr.as_mut() {
                *r = v;
            }
        }
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psun_model_free(model: *mut PsunModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// `p(y_{1:n})` for `n·m` responses given row by row.
///
/// # Safety
/// `y` must hold `n·m` bytes; outputs must be valid (`std_error` may be null).
#[no_mangle]
pub unsafe extern "C" fn psun_marginal_likelihood(
    model: *const PsunModel,
    y: *const u8,
    len: usize,
    seed: u64,
    value: *mut f64,
    std_error: *mut f64,
) -> PsunStatus {
    guard(|| {
        let spec = &deref(model, "model")?.spec;
        let ys = binary_rows(slice(y, len, "y")?, spec.n, spec.m)?;
        let value = deref_mut(value, "value")?;
        let e = marginal_likelihood(spec, &ys, &CdfConfig::default(), seed)?;
        *value = e.value;
        if let Some(s) = std_error.as_mut() {
            *s = e.std_error;
        }
        Ok(())
    })
}

/// Online exact filter over `model`; the model handle may be freed afterwards.
///
/// # Safety
/// `model` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn psun_filter_new(model: *const PsunModel, seed: u64, out: *mut *mut PsunFilter) -> PsunStatus {
    guard(|| {
        let spec = deref(model, "model")?.spec.clone();
        let out = deref_mut(out, "out")?;
        let inner = ExactFilter::new(spec, FilterConfig::default(), seed)?;
        *out = Box::into_raw(Box::new(PsunFilter { inner }));
        Ok(())
    })
}

/// Releases a filter; null is ignored.
///
/// # Safety
/// `filter` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psun_filter_free(filter: *mut PsunFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

/// Number of observations absorbed so far.
///
/// # Safety
/// `filter` must be valid or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn psun_filter_time(filter: *const PsunFilter) -> usize {
    filter.as_ref().map_or(0, |f| f.inner.t())
}

/// Latent dimension of the current filtering distribution.
///
/// # Safety
/// `filter` must be valid or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn psun_filter_latent_dim(filter: *const PsunFilter) -> usize {
    filter.as_ref().map_or(0, |f| f.inner.params().h())
}

/// Absorbs `y_{t+1}` (`m` bytes in {0, 1}); writes `P(y_{t+1} | y_{1:t})`
/// to `prob` unless it is null.
///
/// # Safety
/// `y` must hold `m` bytes.
#[no_mangle]
pub unsafe extern "C" fn psun_filter_step(filter: *mut PsunFilter, y: *const u8, m: usize, prob: *mut f64) -> PsunStatus {
    guard(|| {
        let f = &mut deref_mut(filter, "filter")?.inner;
        if f.t() >= f.spec().n {
            return Err(Fail::Arg(format!("filter already absorbed all {} observations", f.spec().n)));
        }
        if m != f.spec().m {
            return Err(Fail::Arg(format!("expected {} responses, got {m}", f.spec().m)));
        }
        let ys = slice(y, m, "y")?;
        let p = f.step(ys, !prob.is_null())?;
        if let (Some(out), Some(p)) = (prob.as_mut(), p) {
            *out = p.prob;
        }
        Ok(())
    })
}

/// `P(y_{l,t+1} = 1 | y_{1:t})` for each of the `m` components.
///
/// # Safety
/// `out` must be writable for `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn psun_filter_predict(filter: *mut PsunFilter, out: *mut f64, m: usize) -> PsunStatus {
    guard(|| {
        let f = &mut deref_mut(filter, "filter")?.inner;
        if f.t() >= f.spec().n {
            return Err(Fail::Arg("no further time step in the model horizon".into()));
        }
        if m != f.spec().m {
            return Err(Fail::Arg(format!("expected room for {} probabilities, got {m}", f.spec().m)));
        }
        let out = slice_mut(out, m, "out")?;
        for (o, p) in out.iter_mut().zip(f.component_probabilities()?) {
            *o = p.prob;
        }
        Ok(())
    })
}

/// `r` i.i.d. draws of the current filtering distribution, row-major `r × p`.
///
/// # Safety
/// `out` must be writable for `len = r·p` doubles.
#[no_mangle]
pub unsafe extern "C" fn psun_filter_sample(filter: *const PsunFilter, r: usize, seed: u64, out: *mut f64, len: usize) -> PsunStatus {
    guard(|| {
        let f = &deref(filter, "filter")?.inner;
        let p = f.spec().p;
        if r == 0 || len != r * p {
            return Err(Fail::Arg(format!("output holds {len} values, need r·p = {}", r * p)));
        }
        let out = slice_mut(out, len, "out")?;
        let s = f.params().sample(r, seed, &TmvnConfig::default())?;
        for i in 0..r {
            for j in 0..p {
                out[i * p + j] = s.values[(i, j)];
            }
        }
        Ok(())
    })
}
