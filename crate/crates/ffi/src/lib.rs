//! C ABI over the `ofo-recsys` simulator.
//!
//! Objects are opaque heap handles created by `*_new` and released by the
//! matching `*_free`. Every fallible call returns an [`OfoStatus`]; on failure
//! a message for the calling thread is available from
//! [`ofo_last_error_message`]. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use nalgebra::{DMatrix, DVector};
use ofo_recsys::filter::SensitivityFilter;
use ofo_recsys::harness::{self, write_results, ExperimentConfig};
use ofo_recsys::platform::{ClickBehaviour, ClickModel, FjParams, Platform};
use ofo_recsys::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    Config = 5,
    Io = 6,
    Panic = 7,
}

/// Clicking behaviour of a single user.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfoClickBehaviour {
    /// Engaged by extreme content aligned with the opinion.
    Extremity = 0,
    /// Engaged by content close to the opinion.
    Proximity = 1,
}

impl From<OfoClickBehaviour> for ClickBehaviour {
    fn from(b: OfoClickBehaviour) -> Self {
        match b {
            OfoClickBehaviour::Extremity => ClickBehaviour::ExtremityBias,
            OfoClickBehaviour::Proximity => ClickBehaviour::ProximityBias,
        }
    }
}

/// Opinion dynamics with their clicking behaviours and current opinions.
pub struct OfoPlatform {
    platform: Platform,
    state: DVector<f64>,
}

/// Kalman filter over the entries of the steady-state sensitivity.
pub struct OfoFilter {
    filter: SensitivityFilter,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(OfoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension { .. } => OfoStatus::DimensionMismatch,
            Error::InvalidParameter(_) => OfoStatus::InvalidArgument,
            Error::Singular(_) | Error::Divergence { .. } | Error::ZeroNorm => OfoStatus::Numerical,
            Error::Config(_) | Error::Artifact(_) => OfoStatus::Config,
            Error::Io { .. } | Error::Csv { .. } | Error::Json { .. } => OfoStatus::Io,
            Error::EmptyWindow | Error::ShortTrajectory { .. } => OfoStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(OfoStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure for the calling thread and turns panics into
/// `OfoStatus::Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OfoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OfoStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            OfoStatus::Panic
        }
    }
}

unsafe fn input<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(data, len))
}

unsafe fn output<'a>(data: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(data, len))
}

fn expect_len(expected: usize, got: usize, what: &str) -> Result<(), Failure> {
    if expected == got {
        Ok(())
    } else {
        Err(Failure(
            OfoStatus::DimensionMismatch,
            format!("{what}: expected length {expected}, got {got}"),
        ))
    }
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(OfoStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes (excluding the terminator); 0 when no error has
/// been recorded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ofo_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ofo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Click probability of one user shown position `p` while holding opinion `x`.
///
/// # Safety
/// `out` must be null or point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn ofo_click_probability(
    behaviour: OfoClickBehaviour,
    p: f64,
    x: f64,
    out: *mut f64,
) -> OfoStatus {
    guard(|| {
        let out = output(out, 1, "out")?;
        out[0] = ClickBehaviour::from(behaviour).probability(p, x);
        Ok(())
    })
}

/// Builds a platform of `n` users. `adjacency` is `n * n` row-major; the
/// other arrays have length `n`. The parameters are validated (row sums at
/// most one, susceptibilities in range, stable dynamics).
///
/// # Safety
/// Array pointers must reference the stated number of `double`s (or
/// `behaviours` entries); `out` must point to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn ofo_platform_new(
    n: usize,
    adjacency: *const f64,
    gamma_p: *const f64,
    gamma_d: *const f64,
    influence: *const f64,
    behaviours: *const OfoClickBehaviour,
    x0: *const f64,
    out: *mut *mut OfoPlatform,
) -> OfoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if n == 0 {
            return Err(Failure(OfoStatus::InvalidArgument, "n must be positive".into()));
        }
        if behaviours.is_null() {
            return Err(null("behaviours"));
        }
        let a = DMatrix::from_row_slice(n, n, input(adjacency, n * n, "adjacency")?);
        let vec = |p, what| input(p, n, what).map(DVector::from_column_slice);
        let params = FjParams::new(
            a,
            vec(gamma_p, "gamma_p")?,
            vec(gamma_d, "gamma_d")?,
            vec(influence, "influence")?,
        )?;
        let clicks = ClickModel(slice::from_raw_parts(behaviours, n).iter().map(|&b| b.into()).collect());
        let x0 = vec(x0, "x0")?;
        let platform = Platform::new(params, clicks, x0.clone())?;
        *out = Box::into_raw(Box::new(OfoPlatform { platform, state: x0 }));
        Ok(())
    })
}

/// Releases a platform handle. Null is ignored.
///
/// # Safety
/// `handle` must be null or a pointer returned by `ofo_platform_new` that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ofo_platform_free(handle: *mut OfoPlatform) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of users, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live platform handle.
#[no_mangle]
pub unsafe extern "C" fn ofo_platform_users(handle: *const OfoPlatform) -> usize {
    handle.as_ref().map_or(0, |h| h.platform.n())
}

/// Advances the opinions one step under positions `p` (length `n`).
///
/// # Safety
/// `handle` must be a live platform handle and `p` must reference `len`
/// `double`s.
#[no_mangle]
pub unsafe extern "C" fn ofo_platform_step(
    handle: *mut OfoPlatform,
    p: *const f64,
    len: usize,
) -> OfoStatus {
    guard(|| {
        let h = handle.as_mut().ok_or_else(|| null("handle"))?;
        expect_len(h.platform.n(), len, "positions")?;
        let p = DVector::from_column_slice(input(p, len, "p")?);
        h.state = h.platform.step(&h.state, &p);
        Ok(())
    })
}

/// Copies the current opinions into `out` (length `n`).
///
/// # Safety
/// `handle` must be a live platform handle and `out` must reference `len`
/// writable `double`s.
#[no_mangle]
pub unsafe extern "C" fn ofo_platform_opinions(
    handle: *const OfoPlatform,
    out: *mut f64,
    len: usize,
) -> OfoStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        expect_len(h.platform.n(), len, "opinions")?;
        output(out, len, "out")?.copy_from_slice(h.state.as_slice());
        Ok(())
    })
}

/// Steady-state opinions reached under constant positions `p`.
///
/// # Safety
/// `p` and `out` must each reference `len` `double`s.
#[no_mangle]
pub unsafe extern "C" fn ofo_platform_steady_state(
    handle: *const OfoPlatform,
    p: *const f64,
    out: *mut f64,
    len: usize,
) -> OfoStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        expect_len(h.platform.n(), len, "positions")?;
        let p = DVector::from_column_slice(input(p, len, "p")?);
        let x = h.platform.params.steady_state_map()?.apply(&p);
        output(out, len, "out")?.copy_from_slice(x.as_slice());
        Ok(())
    })
}

/// Sensitivity of the steady state to the positions, `n * n` row-major.
///
/// # Safety
/// `out` must reference `len` writable `double`s.
#[no_mangle]
pub unsafe extern "C" fn ofo_platform_sensitivity(
    handle: *const OfoPlatform,
    out: *mut f64,
    len: usize,
) -> OfoStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let n = h.platform.n();
        expect_len(n * n, len, "sensitivity")?;
        let map = h.platform.params.steady_state_map()?;
        write_row_major(map.sensitivity(), output(out, len, "out")?);
        Ok(())
    })
}

fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    for (k, v) in out.iter_mut().enumerate() {
        *v = m[(k / m.ncols(), k % m.ncols())];
    }
}

/// Creates a sensitivity filter for `n` users with the given process-noise
/// divisor (10 is the usual choice).
///
/// # Safety
/// `out` must point to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn ofo_filter_new(n: usize, tuning_divisor: f64, out: *mut *mut OfoFilter) -> OfoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let filter = SensitivityFilter::new(n, tuning_divisor)?;
        *out = Box::into_raw(Box::new(OfoFilter { filter }));
        Ok(())
    })
}

/// Releases a filter handle. Null is ignored.
///
/// # Safety
/// `handle` must be null or a pointer returned by `ofo_filter_new` that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn ofo_filter_free(handle: *mut OfoFilter) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Feeds one pair of increments: opinion change `delta_x` and position
/// change `delta_p`, both of length `n`. Retunes the noise levels and runs a
/// measurement update.
///
/// # Safety
/// `handle` must be a live filter handle; both arrays must reference `len`
/// `double`s.
#[no_mangle]
pub unsafe extern "C" fn ofo_filter_observe(
    handle: *mut OfoFilter,
    delta_x: *const f64,
    delta_p: *const f64,
    len: usize,
) -> OfoStatus {
    guard(|| {
        let h = handle.as_mut().ok_or_else(|| null("handle"))?;
        expect_len(h.filter.n(), len, "increments")?;
        let dx = DVector::from_column_slice(input(delta_x, len, "delta_x")?);
        let dp = DVector::from_column_slice(input(delta_p, len, "delta_p")?);
        h.filter.observe(&dx, &dp)?;
        Ok(())
    })
}

/// Current sensitivity estimate, `n * n` row-major.
///
/// # Safety
/// `out` must reference `len` writable `double`s.
#[no_mangle]
pub unsafe extern "C" fn ofo_filter_sensitivity(handle: *const OfoFilter, out: *mut f64, len: usize) -> OfoStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let n = h.filter.n();
        expect_len(n * n, len, "sensitivity")?;
        write_row_major(&h.filter.sensitivity(), output(out, len, "out")?);
        Ok(())
    })
}

/// Current process and measurement noise levels.
///
/// # Safety
/// `sigma_q` and `sigma_r` must point to writable `double`s.
#[no_mangle]
pub unsafe extern "C" fn ofo_filter_noise(handle: *const OfoFilter, sigma_q: *mut f64, sigma_r: *mut f64) -> OfoStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        output(sigma_q, 1, "sigma_q")?[0] = h.filter.sigma_q();
        output(sigma_r, 1, "sigma_r")?[0] = h.filter.sigma_r();
        Ok(())
    })
}

/// Runs the configured method comparison from a TOML configuration string
/// (empty for defaults) and writes the result CSVs into `out_dir`.
///
/// # Safety
/// Both arguments must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ofo_run_compare(config_toml: *const c_char, out_dir: *const c_char) -> OfoStatus {
    guard(|| {
        let config = ExperimentConfig::from_toml_str(c_str(config_toml, "config_toml")?)?;
        let dir = Path::new(c_str(out_dir, "out_dir")?);
        let mc = harness::run_monte_carlo(&config, None)?;
        write_results(dir, &mc.results, &mc.aggregate)?;
        Ok(())
    })
}
