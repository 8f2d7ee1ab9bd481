//! C ABI over `modelrisk`.
//!
//! Every function returns an [`MrStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and can be read with
//! [`mr_last_error_message`]. Handles are opaque and must be released with
//! their `*_free` function. Functions never unwind across the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use modelrisk::calibrate::{calibrate_black_scholes, calibrate_dupire, DupireConfig, LocalVolSurface};
use modelrisk::experiments::summarize;
use modelrisk::heston::{heston_european_call, implied_vol, HestonParams, OptionSpec, QuoteSurface, StateAt};
use modelrisk::mc::{apply_rule_1d, apply_rule_2d, HestonSimulator, PayoffSampleSet};
use modelrisk::pde1d::{price_american_put_1d, ConstantVol, ExerciseBoundary1D, LocalVolFn, Solver1DConfig};
use modelrisk::pde2d::{price_american_put_heston, ExerciseBoundary2D, HestonGridConfig, MCSConfig};
use modelrisk::Error;

/// Return code of every `mr_*` function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    /// Singular system, failed quadrature, no convergence, bad vol.
    Numerical = 3,
    GridMismatch = 4,
    Io = 5,
    Panic = 6,
}

impl From<&Error> for MrStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Config(_) | Error::PriceOutOfBounds { .. } => MrStatus::InvalidInput,
            Error::GridMismatch(_) | Error::StencilRange { .. } => MrStatus::GridMismatch,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => MrStatus::Io,
            _ => MrStatus::Numerical,
        }
    }
}

/// Heston coefficients, same meaning as in the Rust API.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MrHestonParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma_v: f64,
    pub rho: f64,
    pub r: f64,
    pub s0: f64,
    pub v0: f64,
}

impl From<MrHestonParams> for HestonParams {
    fn from(p: MrHestonParams) -> Self {
        HestonParams { kappa: p.kappa, theta: p.theta, sigma_v: p.sigma_v, rho: p.rho, r: p.r, s0: p.s0, v0: p.v0 }
    }
}

impl From<HestonParams> for MrHestonParams {
    fn from(p: HestonParams) -> Self {
        MrHestonParams { kappa: p.kappa, theta: p.theta, sigma_v: p.sigma_v, rho: p.rho, r: p.r, s0: p.s0, v0: p.v0 }
    }
}

/// Summary of discounted payoffs from applying a rule to simulated paths.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MrPayoffStats {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Paths stopped before maturity.
    pub exercised: usize,
}

/// Call quotes on a strike x maturity lattice.
pub struct MrQuotes(QuoteSurface);

/// Calibrated local volatility plus the solver grid it lives on.
pub struct MrLocalVol {
    surface: LocalVolSurface,
    solver: Solver1DConfig,
}

/// Critical price per time node for a one-factor model.
pub struct MrBoundary1D(ExerciseBoundary1D);

/// Critical price per time node and variance level under Heston.
pub struct MrBoundary2D(ExerciseBoundary2D);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), MrStatus>>(f: F) -> MrStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MrStatus::Ok,
        Ok(Err(s)) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MrStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, MrStatus>;
}

impl<T> OrStatus<T> for modelrisk::Result<T> {
    fn or_status(self) -> Result<T, MrStatus> {
        self.map_err(|e| {
            set_error(e.to_string());
            MrStatus::from(&e)
        })
    }
}

fn null(what: &str) -> MrStatus {
    set_error(format!("{what} is null"));
    MrStatus::NullPointer
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, MrStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), MrStatus> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], MrStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn invalid(msg: &str) -> MrStatus {
    set_error(msg.to_string());
    MrStatus::InvalidInput
}

/// Copies the last error of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL,
/// or 0 when the last call succeeded. `buf` may be null to query the length.
#[no_mangle]
pub unsafe extern "C" fn mr_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Static version string.
#[no_mangle]
pub extern "C" fn mr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

#[no_mangle]
pub unsafe extern "C" fn mr_heston_base_case(out: *mut MrHestonParams) -> MrStatus {
    guard(|| write(out, HestonParams::base_case().into(), "out"))
}

/// European call at `t = 0` from `(s0, v0)`.
#[no_mangle]
pub unsafe extern "C" fn mr_heston_call_price(
    params: *const MrHestonParams,
    strike: f64,
    maturity: f64,
    out: *mut f64,
) -> MrStatus {
    guard(|| {
        let p: HestonParams = (*deref(params, "params")?).into();
        p.validate().or_status()?;
        let spec = OptionSpec::european_call(strike, maturity);
        let price = heston_european_call(&p, &spec, StateAt { t: 0.0, s: p.s0, v: p.v0 }).or_status()?;
        write(out, price, "out")
    })
}

/// Black-Scholes implied volatility of a European call.
#[no_mangle]
pub unsafe extern "C" fn mr_implied_vol(
    price: f64,
    r: f64,
    spot: f64,
    strike: f64,
    maturity: f64,
    out: *mut f64,
) -> MrStatus {
    guard(|| {
        let spec = OptionSpec::european_call(strike, maturity);
        let iv = implied_vol(price, r, spot, &spec).or_status()?;
        write(out, iv, "out")
    })
}

/// Heston call quotes on every `(strike, maturity)` pair.
#[no_mangle]
pub unsafe extern "C" fn mr_quotes_from_heston(
    params: *const MrHestonParams,
    strikes: *const f64,
    n_strikes: usize,
    maturities: *const f64,
    n_maturities: usize,
    out: *mut *mut MrQuotes,
) -> MrStatus {
    guard(|| {
        let p: HestonParams = (*deref(params, "params")?).into();
        let k = slice(strikes, n_strikes, "strikes")?;
        let m = slice(maturities, n_maturities, "maturities")?;
        if k.is_empty() || m.is_empty() {
            return Err(invalid("need at least one strike and one maturity"));
        }
        let q = QuoteSurface::from_heston(&p, k, m).or_status()?;
        write(out, Box::into_raw(Box::new(MrQuotes(q))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_quotes_len(quotes: *const MrQuotes, out: *mut usize) -> MrStatus {
    guard(|| {
        let q = deref(quotes, "quotes")?;
        write(out, q.0.quotes.len(), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_quotes_get(
    quotes: *const MrQuotes,
    index: usize,
    strike: *mut f64,
    maturity: *mut f64,
    price: *mut f64,
) -> MrStatus {
    guard(|| {
        let q = deref(quotes, "quotes")?;
        let Some(x) = q.0.quotes.get(index) else {
            return Err(invalid(&format!("quote index {index} out of range")));
        };
        write(strike, x.strike, "strike")?;
        write(maturity, x.maturity, "maturity")?;
        write(price, x.price, "price")
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_quotes_free(quotes: *mut MrQuotes) {
    if !quotes.is_null() {
        drop(Box::from_raw(quotes));
    }
}

/// Implied volatility of the quote at `(ref_strike, ref_maturity)`.
#[no_mangle]
pub unsafe extern "C" fn mr_calibrate_bs(
    quotes: *const MrQuotes,
    ref_strike: f64,
    ref_maturity: f64,
    out: *mut f64,
) -> MrStatus {
    guard(|| {
        let q = deref(quotes, "quotes")?;
        let sigma = calibrate_black_scholes(&q.0, ref_strike, ref_maturity).or_status()?;
        write(out, sigma, "out")
    })
}

/// Local volatility fitted to the quotes on the default solver grid with
/// `n_time_steps` steps up to the last quoted maturity. `mean_rel_error`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn mr_calibrate_dupire(
    quotes: *const MrQuotes,
    n_time_steps: usize,
    out: *mut *mut MrLocalVol,
    mean_rel_error: *mut f64,
) -> MrStatus {
    guard(|| {
        let q = deref(quotes, "quotes")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let solver = Solver1DConfig { n1: n_time_steps, ..Solver1DConfig::default() };
        let cfg = DupireConfig { solver, ..DupireConfig::default() };
        let (surface, report) = calibrate_dupire(&q.0, &cfg).or_status()?;
        if !mean_rel_error.is_null() {
            *mean_rel_error = report.mean_rel_error;
        }
        write(out, Box::into_raw(Box::new(MrLocalVol { surface, solver })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_local_vol_eval(lv: *const MrLocalVol, t: f64, s: f64, out: *mut f64) -> MrStatus {
    guard(|| {
        let lv = deref(lv, "local vol")?;
        if !(s > 0.0) || !t.is_finite() {
            return Err(invalid("need finite t and S > 0"));
        }
        write(out, lv.surface.sigma(t, s), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_local_vol_free(lv: *mut MrLocalVol) {
    if !lv.is_null() {
        drop(Box::from_raw(lv));
    }
}

/// American put boundary under constant volatility.
#[no_mangle]
pub unsafe extern "C" fn mr_boundary_bs(
    sigma: f64,
    r: f64,
    strike: f64,
    maturity: f64,
    n_time_steps: usize,
    out: *mut *mut MrBoundary1D,
) -> MrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let solver = Solver1DConfig { n1: n_time_steps, ..Solver1DConfig::default() };
        let (_, b) = price_american_put_1d(&ConstantVol(sigma), &solver, strike, maturity, r).or_status()?;
        write(out, Box::into_raw(Box::new(MrBoundary1D(b))), "out")
    })
}

/// American put boundary under a calibrated local volatility, on the grid
/// the surface was fitted on.
#[no_mangle]
pub unsafe extern "C" fn mr_boundary_dupire(
    lv: *const MrLocalVol,
    r: f64,
    strike: f64,
    maturity: f64,
    out: *mut *mut MrBoundary1D,
) -> MrStatus {
    guard(|| {
        let lv = deref(lv, "local vol")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (_, b) = price_american_put_1d(&lv.surface, &lv.solver, strike, maturity, r).or_status()?;
        write(out, Box::into_raw(Box::new(MrBoundary1D(b))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_boundary_1d_eval(b: *const MrBoundary1D, t: f64, out: *mut f64) -> MrStatus {
    guard(|| {
        let b = deref(b, "boundary")?;
        write(out, b.0.eval(t), "out")
    })
}

/// Number of time nodes (time steps + 1).
#[no_mangle]
pub unsafe extern "C" fn mr_boundary_1d_len(b: *const MrBoundary1D, out: *mut usize) -> MrStatus {
    guard(|| {
        let b = deref(b, "boundary")?;
        write(out, b.0.t.len(), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_boundary_1d_free(b: *mut MrBoundary1D) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// American put boundary under Heston on an `m1 x m2` grid with `m3`
/// time steps; the remaining grid settings are the defaults.
#[no_mangle]
pub unsafe extern "C" fn mr_boundary_heston(
    params: *const MrHestonParams,
    strike: f64,
    maturity: f64,
    m1: usize,
    m2: usize,
    m3: usize,
    out: *mut *mut MrBoundary2D,
) -> MrStatus {
    guard(|| {
        let p: HestonParams = (*deref(params, "params")?).into();
        if out.is_null() {
            return Err(null("out"));
        }
        let gcfg = HestonGridConfig { m1, m2, ..HestonGridConfig::default() };
        let mcs = MCSConfig { m3, ..MCSConfig::default() };
        let (_, b) = price_american_put_heston(&p, &gcfg, &mcs, strike, maturity).or_status()?;
        write(out, Box::into_raw(Box::new(MrBoundary2D(b))), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_boundary_2d_eval(b: *const MrBoundary2D, t: f64, v: f64, out: *mut f64) -> MrStatus {
    guard(|| {
        let b = deref(b, "boundary")?;
        let n = b.0.time_index(t);
        write(out, b.0.eval_at_step(n, v), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_boundary_2d_len(b: *const MrBoundary2D, out: *mut usize) -> MrStatus {
    guard(|| {
        let b = deref(b, "boundary")?;
        write(out, b.0.t.len(), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn mr_boundary_2d_free(b: *mut MrBoundary2D) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

fn simulator(p: &HestonParams, t: &[f64], n_paths: usize, seed: u64) -> Result<HestonSimulator, MrStatus> {
    let (Some(&t0), Some(&tn)) = (t.first(), t.last()) else {
        return Err(invalid("boundary has no time nodes"));
    };
    HestonSimulator::new(*p, n_paths, t.len() - 1, tn - t0, seed).or_status()
}

fn stats(set: &PayoffSampleSet) -> Result<MrPayoffStats, MrStatus> {
    let s = summarize(&set.payoff).or_status()?;
    let exercised = set.stop_step.iter().filter(|x| x.is_some()).count();
    Ok(MrPayoffStats { n: s.n, mean: s.mean, se: s.se, median: s.median, q3: s.q3, max: s.max, exercised })
}

/// Applies a one-factor rule to Heston paths simulated on the boundary's
/// time grid.
#[no_mangle]
pub unsafe extern "C" fn mr_apply_boundary_1d(
    params: *const MrHestonParams,
    b: *const MrBoundary1D,
    n_paths: usize,
    seed: u64,
    out: *mut MrPayoffStats,
) -> MrStatus {
    guard(|| {
        let p: HestonParams = (*deref(params, "params")?).into();
        let b = deref(b, "boundary")?;
        let sim = simulator(&p, &b.0.t, n_paths, seed)?;
        let set = apply_rule_1d(&sim, &b.0, b.0.strike, p.r).or_status()?;
        write(out, stats(&set)?, "out")
    })
}

/// Applies a Heston rule to Heston paths simulated on the boundary's time
/// grid.
#[no_mangle]
pub unsafe extern "C" fn mr_apply_boundary_2d(
    params: *const MrHestonParams,
    b: *const MrBoundary2D,
    n_paths: usize,
    seed: u64,
    out: *mut MrPayoffStats,
) -> MrStatus {
    guard(|| {
        let p: HestonParams = (*deref(params, "params")?).into();
        let b = deref(b, "boundary")?;
        let sim = simulator(&p, &b.0.t, n_paths, seed)?;
        let set = apply_rule_2d(&sim, &b.0, b.0.strike, p.r).or_status()?;
        write(out, stats(&set)?, "out")
    })
}
