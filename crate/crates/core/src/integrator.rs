//! Energy-conserving RK2-average time stepping with step rejection.

use log::{debug, warn};

use crate::error::{HydroError, Result};
use crate::operators::{Discretization, ForceResult};

#[derive(Clone, Debug, PartialEq)]
pub struct HydroState {
    /// Node positions, interleaved.
    pub x: Vec<f64>,
    /// Node velocities, interleaved.
    pub v: Vec<f64>,
    /// Specific internal energy dofs.
    pub e: Vec<f64>,
    pub t: f64,
    /// Last accepted step (0 before the first step).
    pub dt: f64,
    pub step_count: usize,
}

impl HydroState {
    /// Mesh at rest in its initial configuration with zero energy.
    pub fn at_rest(disc: &Discretization) -> Self {
        Self {
            x: disc.mesh.node_coords.clone(),
            v: vec![0.0; disc.kin.vector_len()],
            e: vec![0.0; disc.thermo.n_dofs],
            t: 0.0,
            dt: 0.0,
            step_count: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControls {
    pub cfl: f64,
    /// Upper bound for the first step.
    pub dt_init: f64,
    pub dt_max: f64,
    /// A run whose step size falls below this is stuck; fail instead.
    pub dt_min: f64,
    pub growth: f64,
    pub shrink: f64,
    pub t_final: f64,
    pub max_rejections: usize,
    /// Reject a step when an element-average energy falls below `-energy_floor`.
    pub energy_floor: f64,
}

impl Default for StepControls {
    fn default() -> Self {
        Self {
            cfl: 0.5,
            dt_init: 1.0,
            dt_max: 1.0,
            dt_min: 1e-10,
            growth: 1.02,
            shrink: 0.5,
            t_final: 0.8,
            max_rejections: 20,
            energy_floor: 1e-12,
        }
    }
}

impl StepControls {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HydroError::InvalidInput(m.to_string()));
        if !(self.cfl > 0.0) || !self.cfl.is_finite() {
            return bad("cfl must be positive");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink factor must lie in (0, 1)");
        }
        if !(self.growth > 1.0) || !self.growth.is_finite() {
            return bad("growth factor must exceed 1");
        }
        if !(self.dt_max > 0.0) || !(self.dt_init > 0.0) {
            return bad("dt_max and dt_init must be positive");
        }
        if !(self.dt_min >= 0.0) || !(self.dt_min < self.dt_max) {
            return bad("dt_min must be nonnegative and below dt_max");
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return bad("t_final must be finite and >= 0");
        }
        Ok(())
    }
}

/// Stable step size suggested by a force evaluation.
///
/// `dt_prev` is the previous accepted step, `None` before the first step.
pub fn estimate_dt(force: &ForceResult, controls: &StepControls, dt_prev: Option<f64>) -> Result<f64> {
    let mut dt = if force.dt_est.is_finite() {
        controls.cfl * force.dt_est
    } else {
        controls.dt_max
    };
    dt = dt.min(controls.dt_max);
    match dt_prev {
        Some(p) if p > 0.0 => dt = dt.min(controls.growth * p),
        _ => dt = dt.min(controls.dt_init),
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(HydroError::Numerical(format!("nonpositive time step estimate {dt:e}")));
    }
    Ok(dt)
}

/// Intermediate stage of an RK2-average step.
#[derive(Clone, Debug)]
pub struct MidStage {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub e: Vec<f64>,
    pub force: ForceResult,
}

/// Result of one accepted step.
#[derive(Clone, Debug)]
pub struct StepInfo {
    pub dt: f64,
    pub rejections: usize,
    pub mid: MidStage,
    /// State before the step.
    pub v_prev: Vec<f64>,
}

#[derive(Debug)]
enum Attempt {
    Accepted(HydroState, MidStage),
    Rejected { reason: String, dt_hint: Option<f64> },
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

/// One RK2-average step of size `dt` from `state` with `force_n` evaluated
/// at `state`. Tangling and non-physical energies produce a rejection.
fn attempt_step(
    disc: &Discretization,
    state: &HydroState,
    force_n: &ForceResult,
    dt: f64,
    controls: &StepControls,
    colsums: &[f64],
    check_stability: bool,
) -> Result<Attempt> {
    let half = 0.5 * dt;
    let acc_n = disc.solve_mass_kinematic(&force_n.momentum_rhs)?;
    let mut v_half = axpy(&state.v, half, &acc_n);
    disc.apply_constraints(&mut v_half);
    let de_n = disc.solve_mass_thermo(&disc.apply_force_transpose(force_n, &v_half));
    let e_half = axpy(&state.e, half, &de_n);
    let x_half = axpy(&state.x, half, &v_half);

    let force_half = match disc.evaluate_force(&x_half, &v_half, &e_half) {
        Ok(f) => f,
        Err(err) if err.is_recoverable() => {
            return Ok(Attempt::Rejected {
                reason: format!("midpoint: {err}"),
                dt_hint: None,
            })
        }
        Err(err) => return Err(err),
    };
    if check_stability && controls.cfl * force_half.dt_est < dt {
        return Ok(Attempt::Rejected {
            reason: format!("midpoint stability limit {:e} below dt {:e}", force_half.dt_est, dt),
            dt_hint: Some(controls.cfl * force_half.dt_est),
        });
    }

    let acc_half = disc.solve_mass_kinematic(&force_half.momentum_rhs)?;
    let mut v_new = axpy(&state.v, dt, &acc_half);
    disc.apply_constraints(&mut v_new);
    let v_bar: Vec<f64> = v_new.iter().zip(&state.v).map(|(a, b)| 0.5 * (a + b)).collect();
    let de_half = disc.solve_mass_thermo(&disc.apply_force_transpose(&force_half, &v_bar));
    let e_new = axpy(&state.e, dt, &de_half);
    let x_new = axpy(&state.x, dt, &v_bar);

    if let Err(err) = disc.check_untangled(&x_new) {
        if err.is_recoverable() {
            return Ok(Attempt::Rejected {
                reason: format!("end of step: {err}"),
                dt_hint: None,
            });
        }
        return Err(err);
    }
    let nt = disc.thermo.n_local;
    for (el, (ee, cs)) in e_new.chunks(nt).zip(colsums.chunks(nt)).enumerate() {
        let mass: f64 = cs.iter().sum();
        let avg = ee.iter().zip(cs).map(|(a, b)| a * b).sum::<f64>() / mass;
        if avg < -controls.energy_floor {
            return Ok(Attempt::Rejected {
                reason: format!("negative mean energy {avg:e} in element {el}"),
                dt_hint: None,
            });
        }
    }
    if !v_new.iter().chain(&e_new).chain(&x_new).all(|v| v.is_finite()) {
        return Err(HydroError::NonFinite("state after step".into()));
    }
    let new_state = HydroState {
        x: x_new,
        v: v_new,
        e: e_new,
        t: state.t + dt,
        dt,
        step_count: state.step_count + 1,
    };
    Ok(Attempt::Accepted(
        new_state,
        MidStage {
            x: x_half,
            v: v_half,
            e: e_half,
            force: force_half,
        },
    ))
}

/// Advance by one RK2-average step of exactly `dt`, without step control.
/// Returns the new state and the midpoint stage, or the rejection reason
/// when the mesh tangles.
pub fn rk2_average_step(
    disc: &Discretization,
    state: &HydroState,
    dt: f64,
) -> Result<std::result::Result<(HydroState, MidStage), String>> {
    let force_n = disc.evaluate_force(&state.x, &state.v, &state.e)?;
    let controls = StepControls {
        energy_floor: f64::INFINITY,
        ..StepControls::default()
    };
    let colsums = disc.mass_e.column_sums();
    Ok(match attempt_step(disc, state, &force_n, dt, &controls, &colsums, false)? {
        Attempt::Accepted(s, m) => Ok((s, m)),
        Attempt::Rejected { reason, .. } => Err(reason),
    })
}

/// Time-step controller state carried between steps.
#[derive(Clone, Debug)]
pub struct Stepper {
    pub controls: StepControls,
    colsums: Vec<f64>,
}

impl Stepper {
    pub fn new(disc: &Discretization, controls: StepControls) -> Result<Self> {
        controls.validate()?;
        Ok(Self {
            controls,
            colsums: disc.mass_e.column_sums(),
        })
    }

    /// Take one controlled step, ending exactly at `t_final` when close to it.
    /// On rejection the state is left untouched and the step retried with a
    /// smaller `dt`.
    pub fn step(&mut self, disc: &Discretization, state: &mut HydroState) -> Result<StepInfo> {
        let force_n = disc.evaluate_force(&state.x, &state.v, &state.e)?;
        let prev = (state.step_count > 0).then_some(state.dt);
        let mut dt = estimate_dt(&force_n, &self.controls, prev)?;
        let remaining = self.controls.t_final - state.t;
        if !(remaining > 0.0) {
            return Err(HydroError::InvalidInput("already at the final time".into()));
        }
        let mut rejections = 0;
        loop {
            let last = dt >= remaining * (1.0 - 1e-12);
            if !last && dt < self.controls.dt_min {
                return Err(HydroError::Numerical(format!(
                    "time step {dt:e} fell below dt_min = {:e} at t = {:e}",
                    self.controls.dt_min, state.t
                )));
            }
            let step_dt = if last { remaining } else { dt };
            match attempt_step(disc, state, &force_n, step_dt, &self.controls, &self.colsums, true)? {
                Attempt::Accepted(mut new_state, mid) => {
                    if last {
                        new_state.t = self.controls.t_final;
                    }
                    let v_prev = std::mem::replace(state, new_state).v;
                    return Ok(StepInfo {
                        dt: step_dt,
                        rejections,
                        mid,
                        v_prev,
                    });
                }
                Attempt::Rejected { reason, dt_hint } => {
                    rejections += 1;
                    warn!("step {} rejected at t = {:e}: {reason}", state.step_count + 1, state.t);
                    if rejections > self.controls.max_rejections {
                        return Err(HydroError::TooManyRejections(rejections));
                    }
                    dt = self.controls.shrink * step_dt;
                    if let Some(h) = dt_hint {
                        dt = dt.min(h);
                    }
                    debug!("retrying with dt = {dt:e}");
                }
            }
        }
    }
}

/// Advance `state` to `controls.t_final`, calling `hook` after every step.
pub fn run<H>(disc: &Discretization, state: &mut HydroState, controls: StepControls, mut hook: H) -> Result<usize>
where
    H: FnMut(&HydroState, &StepInfo) -> Result<()>,
{
    let mut stepper = Stepper::new(disc, controls)?;
    let mut steps = 0;
    while state.t < controls.t_final {
        let info = stepper.step(disc, state)?;
        steps += 1;
        hook(state, &info)?;
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::conservation_report;
    use crate::mesh;
    use crate::operators::DiscretizationOptions;

    fn square(n: usize, k: usize, visc: bool) -> Discretization {
        let m = mesh::make_cartesian(n, n, [0.0, 0.0], [1.0, 1.0], k).unwrap();
        let mut opts = DiscretizationOptions::new(k, 2);
        opts.visc.enabled = visc;
        Discretization::new(m, opts, &|_| 1.0).unwrap()
    }

    /// Hot corner cell in an otherwise cold gas.
    fn hot_state(disc: &Discretization) -> HydroState {
        let mut s = HydroState::at_rest(disc);
        for e in &mut s.e[disc.thermo.dofs(0)] {
            *e = 10.0;
        }
        s
    }

    /// Uniform gas with a smooth velocity field tangent to the walls.
    fn smooth_state(disc: &Discretization) -> HydroState {
        let mut s = HydroState::at_rest(disc);
        s.e.iter_mut().for_each(|e| *e = 1.0);
        for a in 0..disc.mesh.node_count() {
            let p = disc.mesh.node(a);
            let (sx, sy) = ((std::f64::consts::PI * p[0]).sin(), (std::f64::consts::PI * p[1]).sin());
            s.v[2 * a] = 0.1 * sx * p[1] * (1.0 - p[1]);
            s.v[2 * a + 1] = 0.1 * sy * p[0];
        }
        s
    }

    fn total_energy(disc: &Discretization, s: &HydroState) -> f64 {
        conservation_report(disc, s).unwrap().total_energy
    }

    #[test]
    fn cold_gas_at_rest_stays_put() {
        let disc = square(3, 2, true);
        let s0 = HydroState::at_rest(&disc);
        let (s1, _) = rk2_average_step(&disc, &s0, 0.1).unwrap().unwrap();
        assert_eq!(s1.x, s0.x);
        assert!(s1.v.iter().all(|&v| v == 0.0));
        assert!(s1.e.iter().all(|&e| e == 0.0));
        assert_eq!(s1.t, 0.1);
        assert_eq!(s1.step_count, 1);
    }

    #[test]
    fn cold_rotation_is_free_motion() {
        // e = 0 makes pressure, sound speed and the wall term vanish; a rigid
        // rotation has no strain rate, so the force is zero.
        let m = mesh::make_disc(2, 8, 1.0, 2).unwrap();
        let disc = Discretization::new(m, DiscretizationOptions::new(2, 2), &|_| 1.0).unwrap();
        let mut s0 = HydroState::at_rest(&disc);
        for a in 0..disc.mesh.node_count() {
            let p = disc.mesh.node(a);
            s0.v[2 * a] = -p[1];
            s0.v[2 * a + 1] = p[0];
        }
        let dt = 0.01;
        let (s1, _) = rk2_average_step(&disc, &s0, dt).unwrap().unwrap();
        for i in 0..s0.v.len() {
            assert!((s1.v[i] - s0.v[i]).abs() < 1e-12);
            assert!((s1.x[i] - (s0.x[i] + dt * s0.v[i])).abs() < 1e-13);
        }
        assert!(s1.e.iter().all(|&e| e.abs() < 1e-14));
    }

    #[test]
    fn single_step_conserves_energy() {
        for k in 1..=3 {
            let disc = square(4, k, true);
            for s0 in [hot_state(&disc), smooth_state(&disc)] {
                let e0 = total_energy(&disc, &s0);
                let f = disc.evaluate_force(&s0.x, &s0.v, &s0.e).unwrap();
                let dt = 0.25 * estimate_dt(&f, &StepControls::default(), None).unwrap();
                let (s1, _) = rk2_average_step(&disc, &s0, dt).unwrap().unwrap();
                let e1 = total_energy(&disc, &s1);
                assert!((e1 - e0).abs() <= 1e-10 * e0, "k = {k}: {e0} -> {e1}");
                assert!(s1.v.iter().any(|&v| v != 0.0));
            }
        }
    }

    #[test]
    fn dt_estimate_scaling() {
        let controls = StepControls {
            dt_max: 1e3,
            dt_init: 1e3,
            ..StepControls::default()
        };
        let warm = |n: usize| {
            let disc = square(n, 2, true);
            let mut s = HydroState::at_rest(&disc);
            s.e.iter_mut().for_each(|e| *e = 1.0);
            let f = disc.evaluate_force(&s.x, &s.v, &s.e).unwrap();
            estimate_dt(&f, &controls, None).unwrap()
        };
        let (a, b) = (warm(4), warm(8));
        assert!((b / a - 0.5).abs() < 1e-12, "{a} {b}");
        // h / k / c_s with c_s = sqrt(0.56).
        assert!((a - 0.5 * 0.125 / 0.56f64.sqrt()).abs() < 1e-12);

        let disc = square(4, 2, true);
        let s = HydroState::at_rest(&disc);
        let f = disc.evaluate_force(&s.x, &s.v, &s.e).unwrap();
        assert_eq!(f.dt_est, f64::INFINITY);
        assert_eq!(estimate_dt(&f, &StepControls::default(), Some(0.9)).unwrap(), 0.918);
        assert_eq!(estimate_dt(&f, &StepControls::default(), Some(5.0)).unwrap(), 1.0);

        let s = hot_state(&disc);
        let f = disc.evaluate_force(&s.x, &s.v, &s.e).unwrap();
        let c1 = estimate_dt(&f, &controls, None).unwrap();
        let c2 = estimate_dt(&f, &StepControls { cfl: 1.0, ..controls }, None).unwrap();
        assert!((c2 / c1 - 2.0).abs() < 1e-14);
        // Growth limit against the previous step.
        assert_eq!(estimate_dt(&f, &controls, Some(1e-6)).unwrap(), 1.02e-6);
    }

    fn run_fixed(disc: &Discretization, s0: &HydroState, t: f64, n: usize) -> HydroState {
        let mut s = s0.clone();
        for _ in 0..n {
            s = rk2_average_step(disc, &s, t / n as f64).unwrap().unwrap().0;
        }
        s
    }

    #[test]
    fn second_order_in_time() {
        let disc = square(3, 2, false);
        let s0 = smooth_state(&disc);
        let t = 0.2;
        let reference = run_fixed(&disc, &s0, t, 128);
        let err = |n: usize| {
            let s = run_fixed(&disc, &s0, t, n);
            s.x.iter().zip(&reference.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(4), err(8), err(16));
        for r in [e1 / e2, e2 / e3] {
            assert!(r > 3.5 && r < 4.5, "ratios {} {}", e1 / e2, e2 / e3);
        }
    }

    #[test]
    fn run_hits_final_time_exactly() {
        let disc = square(3, 2, true);
        let mut s = hot_state(&disc);
        let controls = StepControls {
            t_final: 0.05,
            ..StepControls::default()
        };
        let mut times = vec![0.0];
        let steps = run(&disc, &mut s, controls, |st, info| {
            assert!(info.dt > 0.0);
            times.push(st.t);
            Ok(())
        })
        .unwrap();
        assert_eq!(steps, times.len() - 1);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(s.t, 0.05);

        let before = s.clone();
        assert_eq!(run(&disc, &mut s, controls, |_, _| Ok(())).unwrap(), 0);
        assert_eq!(s, before);
        assert!(Stepper::new(&disc, controls).unwrap().step(&disc, &mut s).is_err());
    }

    #[test]
    fn rejection_leaves_state_untouched() {
        let disc = square(3, 2, true);
        let s0 = hot_state(&disc);
        // A huge CFL number forces at least one rejected attempt.
        let controls = StepControls {
            cfl: 40.0,
            t_final: 1.0,
            ..StepControls::default()
        };
        let mut s = s0.clone();
        let info = Stepper::new(&disc, controls).unwrap().step(&disc, &mut s).unwrap();
        assert!(info.rejections > 0);
        assert_eq!(info.v_prev, s0.v);
        let (direct, _) = rk2_average_step(&disc, &s0, info.dt).unwrap().unwrap();
        assert_eq!(s, direct);
    }

    #[test]
    fn too_many_rejections_is_fatal() {
        let disc = square(3, 2, true);
        let mut s = hot_state(&disc);
        let controls = StepControls {
            cfl: 1e6,
            shrink: 0.99,
            max_rejections: 3,
            t_final: 1.0,
            ..StepControls::default()
        };
        let err = Stepper::new(&disc, controls).unwrap().step(&disc, &mut s).unwrap_err();
        assert!(matches!(err, HydroError::TooManyRejections(4)));
        assert_eq!(s, hot_state(&disc));
    }

    #[test]
    fn stalled_step_is_fatal() {
        let disc = square(3, 2, true);
        let mut s = hot_state(&disc);
        let controls = StepControls {
            cfl: 1e-14,
            t_final: 1.0,
            ..StepControls::default()
        };
        let err = Stepper::new(&disc, controls).unwrap().step(&disc, &mut s).unwrap_err();
        assert!(matches!(err, HydroError::Numerical(_)), "{err}");
        assert_eq!(s, hot_state(&disc));
        // A short final step below dt_min is fine.
        let mut s = hot_state(&disc);
        let controls = StepControls {
            t_final: 1e-12,
            ..StepControls::default()
        };
        Stepper::new(&disc, controls).unwrap().step(&disc, &mut s).unwrap();
        assert_eq!(s.t, 1e-12);
    }

    #[test]
    fn bitwise_deterministic_across_thread_counts() {
        let disc = square(4, 2, true);
        let go = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut s = hot_state(&disc);
                let controls = StepControls {
                    t_final: 0.02,
                    ..StepControls::default()
                };
                run(&disc, &mut s, controls, |_, _| Ok(())).unwrap();
                s
            })
        };
        let a = go(1);
        assert_eq!(a, go(1));
        assert_eq!(a, go(4));
    }

    #[test]
    fn controls_validation() {
        assert!(StepControls::default().validate().is_ok());
        for c in [
            StepControls { cfl: 0.0, ..StepControls::default() },
            StepControls { shrink: 1.0, ..StepControls::default() },
            StepControls { growth: 1.0, ..StepControls::default() },
            StepControls { dt_max: -1.0, ..StepControls::default() },
            StepControls { t_final: f64::NAN, ..StepControls::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
