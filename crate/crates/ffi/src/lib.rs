//! C ABI over `hydro-core`.
//!
//! A simulation is an opaque `HydroSim` handle created from configuration
//! text (`key = value` lines). Every fallible call returns a `HydroStatus`
//! code; the message of the most recent failure on the calling thread is
//! available through `hydro_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hydro_core::app::{build_problem, current_shock_radius, Problem, RunConfig};
use hydro_core::diagnostics::conservation_report;
use hydro_core::integrator::Stepper;
use hydro_core::HydroError;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HydroStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad configuration text, key or value.
    Config = 2,
    /// Failure while stepping (tangling, rejections, solver).
    Runtime = 3,
    /// Caller buffer too small.
    BufferTooSmall = 4,
    /// Input that is not valid UTF-8.
    Utf8 = 5,
    /// Rust panic caught at the boundary.
    Panic = 6,
}

/// Opaque simulation handle.
pub struct HydroSim {
    problem: Problem,
    stepper: Stepper,
    t_final: f64,
}

/// Energy and momentum totals, see `hydro_sim_report`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct HydroReport {
    pub kinetic_energy: f64,
    pub internal_energy: f64,
    pub total_energy: f64,
    pub momentum: [f64; 3],
    pub boundary_violation: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut b = e.borrow_mut();
        b.clear();
        b.extend(msg.bytes().filter(|&c| c != 0));
        b.push(0);
    });
}

fn fail(status: HydroStatus, msg: &str) -> HydroStatus {
    set_error(msg);
    status
}

fn from_error(e: &HydroError) -> HydroStatus {
    let status = match e {
        HydroError::Config(_) | HydroError::InvalidInput(_) => HydroStatus::Config,
        _ => HydroStatus::Runtime,
    };
    fail(status, &e.to_string())
}

/// Run `f`, turning panics into `HydroStatus::Panic`.
fn guard(f: impl FnOnce() -> HydroStatus) -> HydroStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        fail(HydroStatus::Panic, &msg)
    })
}

/// Create a simulation from configuration text. On success `*out` owns a
/// handle that must be released with `hydro_sim_free`.
///
/// # Safety
/// `config` must be null or a NUL-terminated string; `out` must be null or
/// point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hydro_sim_new(config: *const c_char, out: *mut *mut HydroSim) -> HydroStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            return fail(HydroStatus::NullPointer, "null argument to hydro_sim_new");
        }
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(config).to_str() else {
            return fail(HydroStatus::Utf8, "configuration is not valid UTF-8");
        };
        let mut cfg = RunConfig::default();
        let built = cfg.apply_text(text).and_then(|_| {
            let problem = build_problem(&cfg)?;
            let stepper = Stepper::new(&problem.disc, cfg.step_controls())?;
            Ok(HydroSim {
                problem,
                stepper,
                t_final: cfg.t_final,
            })
        });
        match built {
            Ok(sim) => {
                *out = Box::into_raw(Box::new(sim));
                HydroStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `sim` must be null or a handle from `hydro_sim_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hydro_sim_free(sim: *mut HydroSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Take one time step. Returns `Ok` without stepping once the final time is
/// reached. `dt_out` may be null.
///
/// # Safety
/// `sim` must be a live handle; `dt_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn hydro_sim_step(sim: *mut HydroSim, dt_out: *mut f64) -> HydroStatus {
    guard(|| {
        let Some(sim) = sim.as_mut() else {
            return fail(HydroStatus::NullPointer, "null simulation handle");
        };
        let mut dt = 0.0;
        if sim.problem.state.t < sim.t_final {
            match sim.stepper.step(&sim.problem.disc, &mut sim.problem.state) {
                Ok(info) => dt = info.dt,
                Err(e) => return from_error(&e),
            }
        }
        if !dt_out.is_null() {
            *dt_out = dt;
        }
        HydroStatus::Ok
    })
}

/// Step until the final time from the configuration.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hydro_sim_run(sim: *mut HydroSim) -> HydroStatus {
    guard(|| {
        let Some(sim) = sim.as_mut() else {
            return fail(HydroStatus::NullPointer, "null simulation handle");
        };
        while sim.problem.state.t < sim.t_final {
            if let Err(e) = sim.stepper.step(&sim.problem.disc, &mut sim.problem.state) {
                return from_error(&e);
            }
        }
        HydroStatus::Ok
    })
}

/// Current time, or NaN for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hydro_sim_time(sim: *const HydroSim) -> f64 {
    sim.as_ref().map_or(f64::NAN, |s| s.problem.state.t)
}

/// Accepted steps so far, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hydro_sim_step_count(sim: *const HydroSim) -> usize {
    sim.as_ref().map_or(0, |s| s.problem.state.step_count)
}

/// Spatial dimension, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hydro_sim_dim(sim: *const HydroSim) -> usize {
    sim.as_ref().map_or(0, |s| s.problem.disc.dim())
}

/// Number of kinematic nodes, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hydro_sim_node_count(sim: *const HydroSim) -> usize {
    sim.as_ref().map_or(0, |s| s.problem.disc.mesh.node_count())
}

/// Fill `*out` with the current conservation totals.
///
/// # Safety
/// `sim` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hydro_sim_report(sim: *const HydroSim, out: *mut HydroReport) -> HydroStatus {
    guard(|| {
        let (Some(sim), false) = (sim.as_ref(), out.is_null()) else {
            return fail(HydroStatus::NullPointer, "null argument to hydro_sim_report");
        };
        match conservation_report(&sim.problem.disc, &sim.problem.state) {
            Ok(r) => {
                *out = HydroReport {
                    kinetic_energy: r.kinetic_energy,
                    internal_energy: r.internal_energy,
                    total_energy: r.total_energy,
                    momentum: r.momentum,
                    boundary_violation: r.boundary_violation,
                };
                HydroStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Shock-front radius of the current state (2D problems), NaN if none.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hydro_sim_shock_radius(sim: *const HydroSim) -> f64 {
    sim.as_ref()
        .and_then(|s| catch_unwind(AssertUnwindSafe(|| current_shock_radius(&s.problem))).ok().flatten())
        .unwrap_or(f64::NAN)
}

unsafe fn copy_field(src: &[f64], buf: *mut f64, len: usize) -> HydroStatus {
    if buf.is_null() {
        return fail(HydroStatus::NullPointer, "null output buffer");
    }
    if len < src.len() {
        return fail(
            HydroStatus::BufferTooSmall,
            &format!("buffer holds {len} values, {} needed", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    HydroStatus::Ok
}

/// Copy node positions (interleaved, `dim * node_count` values) into `buf`.
///
/// # Safety
/// `sim` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hydro_sim_positions(sim: *const HydroSim, buf: *mut f64, len: usize) -> HydroStatus {
    match sim.as_ref() {
        Some(s) => copy_field(&s.problem.state.x, buf, len),
        None => fail(HydroStatus::NullPointer, "null simulation handle"),
    }
}

/// Copy node velocities (interleaved) into `buf`.
///
/// # Safety
/// As for `hydro_sim_positions`.
#[no_mangle]
pub unsafe extern "C" fn hydro_sim_velocities(sim: *const HydroSim, buf: *mut f64, len: usize) -> HydroStatus {
    match sim.as_ref() {
        Some(s) => copy_field(&s.problem.state.v, buf, len),
        None => fail(HydroStatus::NullPointer, "null simulation handle"),
    }
}

/// Message of the last failure on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hydro_last_error() -> *const c_char {
    LAST_ERROR.with(|e| {
        let mut b = e.borrow_mut();
        if b.is_empty() {
            b.push(0);
        }
        b.as_ptr() as *const c_char
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(hydro_last_error()) }.to_string_lossy().into_owned()
    }

    fn new_sim(text: &str) -> (HydroStatus, *mut HydroSim) {
        let c = CString::new(text).unwrap();
        let mut sim = ptr::null_mut();
        let st = unsafe { hydro_sim_new(c.as_ptr(), &mut sim) };
        (st, sim)
    }

    #[test]
    fn run_and_query() {
        let (st, sim) = new_sim("problem = sedov_square\nres = 3\nt_final = 0.02\n");
        assert_eq!(st, HydroStatus::Ok);
        unsafe {
            assert_eq!(hydro_sim_dim(sim), 2);
            let n = hydro_sim_node_count(sim);
            assert_eq!(n, 49);
            let mut r0 = HydroReport::default();
            assert_eq!(hydro_sim_report(sim, &mut r0), HydroStatus::Ok);
            let mut dt = 0.0;
            assert_eq!(hydro_sim_step(sim, &mut dt), HydroStatus::Ok);
            assert!(dt > 0.0);
            assert_eq!(hydro_sim_run(sim), HydroStatus::Ok);
            assert_eq!(hydro_sim_time(sim), 0.02);
            let steps = hydro_sim_step_count(sim);
            assert_eq!(hydro_sim_step(sim, &mut dt), HydroStatus::Ok);
            assert_eq!((dt, hydro_sim_step_count(sim)), (0.0, steps));
            let mut r1 = HydroReport::default();
            hydro_sim_report(sim, &mut r1);
            assert!((r1.total_energy - r0.total_energy).abs() < 1e-12);
            assert!(r1.kinetic_energy > 0.0);

            let mut x = vec![0.0; 2 * n];
            assert_eq!(hydro_sim_positions(sim, x.as_mut_ptr(), x.len()), HydroStatus::Ok);
            assert!(x.iter().all(|c| (-1e-9..=1.1).contains(c)));
            assert_eq!(hydro_sim_velocities(sim, x.as_mut_ptr(), n), HydroStatus::BufferTooSmall);
            assert!(last_error().contains("needed"));
            assert!(hydro_sim_shock_radius(sim).is_finite() || hydro_sim_shock_radius(sim).is_nan());
            hydro_sim_free(sim);
        }
    }

    #[test]
    fn errors_are_reported() {
        let (st, sim) = new_sim("res = 3\nbogus = 1\n");
        assert_eq!(st, HydroStatus::Config);
        assert!(sim.is_null());
        assert!(last_error().contains("bogus"));

        let (st, _) = new_sim("order = 0\n");
        assert_eq!(st, HydroStatus::Config);

        unsafe {
            assert_eq!(hydro_sim_new(ptr::null(), ptr::null_mut()), HydroStatus::NullPointer);
            assert_eq!(hydro_sim_step(ptr::null_mut(), ptr::null_mut()), HydroStatus::NullPointer);
            assert_eq!(hydro_sim_report(ptr::null(), ptr::null_mut()), HydroStatus::NullPointer);
            assert!(hydro_sim_time(ptr::null()).is_nan());
            assert_eq!(hydro_sim_node_count(ptr::null()), 0);
            hydro_sim_free(ptr::null_mut());
        }

        let bad = [0xffu8, 0xfe, 0];
        let mut sim = ptr::null_mut();
        let st = unsafe { hydro_sim_new(bad.as_ptr() as *const c_char, &mut sim) };
        assert_eq!(st, HydroStatus::Utf8);
    }

    #[test]
    fn runtime_failure_maps_to_runtime() {
        // A huge CFL number shrunk by 1% per rejection runs out of retries.
        let (st, sim) = new_sim("res = 3\nt_final = 0.5\ncfl = 50\ngrowth = 1000\nshrink = 0.99\n");
        assert_eq!(st, HydroStatus::Ok);
        let st = unsafe { hydro_sim_run(sim) };
        unsafe { hydro_sim_free(sim) };
        assert_eq!(st, HydroStatus::Runtime);
        assert!(last_error().contains("rejected"), "{}", last_error());
    }
}
