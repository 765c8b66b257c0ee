//! C interface to the `akdv` library.
//!
//! Every function returns an [`AkdvStatus`]; on failure the message is
//! available from [`akdv_last_error`] on the same thread until the next
//! call. Simulations are opaque handles created by
//! [`akdv_simulation_from_config`] or [`akdv_simulation_new`] and released
//! with [`akdv_simulation_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use akdv::commands::build_simulation;
use akdv::config::Scenario;
use akdv::pde::Simulation;
use akdv::soliton::{q_c, solve_c_infinity, ModelConstants};
use akdv::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AkdvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfTheory = 3,
    Config = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

/// Conserved and monitored quantities of the current field.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AkdvInvariants {
    pub t: f64,
    /// `½∫u²`
    pub mass: f64,
    /// `½∫a^{1/m}u²`
    pub mass_hat: f64,
    /// `E_a[u]`
    pub energy: f64,
    /// `∫u`
    pub l1: f64,
    /// `∫u²/a`
    pub mass_back: f64,
}

/// Opaque simulation handle.
pub struct AkdvSimulation {
    sim: Simulation,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AkdvStatus {
    match e {
        Error::InvalidParameter(_) | Error::GridTooCoarse(_) => AkdvStatus::InvalidArgument,
        Error::OutOfTheory(_) => AkdvStatus::OutOfTheory,
        Error::Config(_) => AkdvStatus::Config,
        Error::Io(_) | Error::Format(_) => AkdvStatus::Io,
        _ => AkdvStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (AkdvStatus, String)>) -> AkdvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AkdvStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AkdvStatus::Panic
        }
    }
}

fn lib<T>(r: akdv::Result<T>) -> Result<T, (AkdvStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (AkdvStatus, String) {
    (AkdvStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn akdv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn akdv_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Limit scaling `c_∞(λ)` for exponent `m`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn akdv_c_infinity(m: u32, lambda: f64, out: *mut f64) -> AkdvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let k = lib(ModelConstants::new(m, lambda))?;
        let c = lib(solve_c_infinity(&k))?;
        *out = c;
        Ok(())
    })
}

/// `Q_c(x)` at `n` points.
///
/// # Safety
/// `x` must be valid for `n` reads and `out` for `n` writes.
#[no_mangle]
pub unsafe extern "C" fn akdv_eval_q(m: u32, c: f64, x: *const f64, n: usize, out: *mut f64) -> AkdvStatus {
    guard(|| {
        if n > 0 && (x.is_null() || out.is_null()) {
            return Err(null("x or out"));
        }
        lib(ModelConstants::new(m, 0.0))?;
        if !(c.is_finite() && c > 0.0) {
            return Err((AkdvStatus::InvalidArgument, format!("c must be positive, got {c}")));
        }
        if n == 0 {
            return Ok(());
        }
        let xs = std::slice::from_raw_parts(x, n);
        let ys = std::slice::from_raw_parts_mut(out, n);
        for (y, &xv) in ys.iter_mut().zip(xs) {
            *y = q_c(m, c, xv);
        }
        Ok(())
    })
}

fn into_handle(scn: &Scenario, allow: bool, out: *mut *mut AkdvSimulation) -> Result<(), (AkdvStatus, String)> {
    let sim = lib(build_simulation(scn, allow))?;
    // SAFETY: checked non-null by the callers.
    unsafe { *out = Box::into_raw(Box::new(AkdvSimulation { sim })) };
    Ok(())
}

/// Simulation from the text of a scenario file, positioned at `-T_ε`.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn akdv_simulation_from_config(
    config: *const c_char,
    allow_out_of_theory: c_int,
    out: *mut *mut AkdvSimulation,
) -> AkdvStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            return Err(null("config or out"));
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(config)
            .to_str()
            .map_err(|_| (AkdvStatus::InvalidArgument, "config is not UTF-8".to_string()))?;
        let allow = allow_out_of_theory != 0;
        let scn = lib(Scenario::parse(text, allow))?;
        into_handle(&scn, allow, out)
    })
}

/// Default scenario with the given model parameters and run horizon (in
/// units of `T_ε`).
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn akdv_simulation_new(
    m: u32,
    lambda: f64,
    epsilon: f64,
    horizon: f64,
    out: *mut *mut AkdvSimulation,
) -> AkdvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let mut scn = Scenario::default();
        scn.model.m = m;
        scn.model.lambda = lambda;
        scn.model.epsilon = epsilon;
        scn.time.horizon = horizon;
        let scn = lib(scn.resolve(false))?;
        into_handle(&scn, false, out)
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `sim` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn akdv_simulation_free(sim: *mut AkdvSimulation) {
    if !sim.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(sim))));
    }
}

/// Number of grid nodes.
///
/// # Safety
/// `sim` must be a live handle and `n` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn akdv_simulation_len(sim: *const AkdvSimulation, n: *mut usize) -> AkdvStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        *n.as_mut().ok_or_else(|| null("n"))? = s.sim.grid().n;
        Ok(())
    })
}

/// Grid bounds `[x_min, x_max)`.
///
/// # Safety
/// `sim` must be a live handle; `x_min` and `x_max` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn akdv_simulation_bounds(
    sim: *const AkdvSimulation,
    x_min: *mut f64,
    x_max: *mut f64,
) -> AkdvStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        let g = s.sim.grid();
        *x_min.as_mut().ok_or_else(|| null("x_min"))? = g.x_min;
        *x_max.as_mut().ok_or_else(|| null("x_max"))? = g.x_max;
        Ok(())
    })
}

/// Current time and the time at which the run ends.
///
/// # Safety
/// `sim` must be a live handle; `t` and `t_end` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn akdv_simulation_time(
    sim: *const AkdvSimulation,
    t: *mut f64,
    t_end: *mut f64,
) -> AkdvStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        *t.as_mut().ok_or_else(|| null("t"))? = s.sim.t();
        *t_end.as_mut().ok_or_else(|| null("t_end"))? = s.sim.config().t_end;
        Ok(())
    })
}

/// Steps until `target` (or the end of the run).
///
/// # Safety
/// `sim` must be a live handle not shared with another thread.
#[no_mangle]
pub unsafe extern "C" fn akdv_simulation_advance(sim: *mut AkdvSimulation, target: f64) -> AkdvStatus {
    guard(|| {
        let s = sim.as_mut().ok_or_else(|| null("sim"))?;
        if target.is_nan() {
            return Err((AkdvStatus::InvalidArgument, "target time is NaN".into()));
        }
        lib(s.sim.advance_to(target))
    })
}

/// Copies the field into `out`, which must hold exactly `n` values.
///
/// # Safety
/// `sim` must be a live handle and `out` valid for `n` writes.
#[no_mangle]
pub unsafe extern "C" fn akdv_simulation_field(sim: *const AkdvSimulation, out: *mut f64, n: usize) -> AkdvStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let u = s.sim.field();
        if n != u.len() {
            return Err((AkdvStatus::InvalidArgument, format!("buffer holds {n} values, grid has {}", u.len())));
        }
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&u);
        Ok(())
    })
}

/// Invariants of the current field.
///
/// # Safety
/// `sim` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn akdv_simulation_invariants(sim: *const AkdvSimulation, out: *mut AkdvInvariants) -> AkdvStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        let r = s.sim.record();
        *out.as_mut().ok_or_else(|| null("out"))? = AkdvInvariants {
            t: r.t,
            mass: r.mass,
            mass_hat: r.mass_hat,
            energy: r.energy,
            l1: r.l1,
            mass_back: r.mass_back,
        };
        Ok(())
    })
}
