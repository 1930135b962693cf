//! High-accuracy trajectory propagation with event detection.
//!
//! The integrated phase vector carries the rotating-frame state plus the
//! unwrapped polar angle about P1 as a fifth component, so turn counting
//! never relies on angle differencing across steps. Events are located by
//! bracketed root refinement; interior states are evaluated by re-stepping
//! the integrator inside the accepted step, which keeps the event state
//! accurate to the integration tolerance rather than to an interpolant.

use std::sync::Arc;

use crate::dynamics::{
    hamiltonian, jacobian_unchecked, omega_gradient_unchecked, RotatingState, SystemParams,
};
use crate::error::{Error, Result};
use crate::integrator::{OdeSystem, Rkf78, Tolerances};

/// Threshold an event function must clear before sign changes are tracked.
/// Keeps trajectories that start exactly on a section from re-triggering it
/// at t = 0.
const ARM_THRESHOLD: f64 = 1e-9;

/// Target on |g| at a refined event.
const EVENT_G_TOL: f64 = 1e-10;

/// Scalar event functions monitored along a trajectory.
#[derive(Clone)]
pub enum EventKind {
    /// Crossing of the half-line at polar angle `theta0` about P1
    /// (perpendicular offset as event function, gated on the correct side).
    AngleCrossing { theta0: f64 },
    /// Distance to P1 passing the given radius.
    RadiusThreshold { radius: f64 },
    /// Crossing of the vertical plane x = plane.
    XPlane { plane: f64 },
    /// Crossing of the x-axis.
    YAxisCrossing,
    /// Unwrapped polar angle about P1 passing the given level.
    ThetaLevel { level: f64 },
    /// Arbitrary scalar function of (t, state, unwrapped theta).
    Custom(Arc<dyn Fn(f64, &RotatingState, f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for EventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EventKind::AngleCrossing { theta0 } => write!(f, "AngleCrossing({theta0})"),
            EventKind::RadiusThreshold { radius } => write!(f, "RadiusThreshold({radius})"),
            EventKind::XPlane { plane } => write!(f, "XPlane({plane})"),
            EventKind::YAxisCrossing => write!(f, "YAxisCrossing"),
            EventKind::ThetaLevel { level } => write!(f, "ThetaLevel({level})"),
            EventKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Crossing direction, in physical time regardless of integration direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventDirection {
    Rising,
    Falling,
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventAction {
    Record,
    Terminate,
}

#[derive(Debug, Clone)]
pub struct EventSpec {
    pub kind: EventKind,
    pub direction: EventDirection,
    pub action: EventAction,
}

impl EventSpec {
    pub fn new(kind: EventKind, direction: EventDirection, action: EventAction) -> Self {
        Self {
            kind,
            direction,
            action,
        }
    }

    /// Recorded positive-rate crossing of the section half-line at `theta0`.
    pub fn section_return(theta0: f64) -> Self {
        Self::new(
            EventKind::AngleCrossing { theta0 },
            EventDirection::Rising,
            EventAction::Record,
        )
    }

    /// Recorded crossing of the section half-line in either direction.
    pub fn section_crossing(theta0: f64) -> Self {
        Self::new(
            EventKind::AngleCrossing { theta0 },
            EventDirection::Any,
            EventAction::Record,
        )
    }

    fn eval(&self, t: f64, s: &RotatingState, theta: f64, params: &SystemParams) -> f64 {
        match &self.kind {
            EventKind::AngleCrossing { theta0 } => {
                let dx = s.x - params.mu;
                let (sin_t, cos_t) = theta0.sin_cos();
                -dx * sin_t + s.y * cos_t
            }
            EventKind::RadiusThreshold { radius } => s.r1(params) - radius,
            EventKind::XPlane { plane } => s.x - plane,
            EventKind::YAxisCrossing => s.y,
            EventKind::ThetaLevel { level } => theta - level,
            EventKind::Custom(f) => f(t, s, theta),
        }
    }

    /// Side gate applied at the refined root; `AngleCrossing` only counts the
    /// half-line on the `theta0` side, not its opposite ray.
    fn gate(&self, s: &RotatingState, params: &SystemParams) -> bool {
        match &self.kind {
            EventKind::AngleCrossing { theta0 } => {
                let dx = s.x - params.mu;
                let (sin_t, cos_t) = theta0.sin_cos();
                dx * cos_t + s.y * sin_t > 0.0
            }
            _ => true,
        }
    }

    fn crossed(&self, g_prev: f64, g_new: f64, forward: bool) -> bool {
        let dir = if forward {
            self.direction
        } else {
            match self.direction {
                EventDirection::Rising => EventDirection::Falling,
                EventDirection::Falling => EventDirection::Rising,
                EventDirection::Any => EventDirection::Any,
            }
        };
        match dir {
            EventDirection::Rising => g_prev < 0.0 && g_new >= 0.0,
            EventDirection::Falling => g_prev > 0.0 && g_new <= 0.0,
            EventDirection::Any => {
                (g_prev < 0.0 && g_new >= 0.0) || (g_prev > 0.0 && g_new <= 0.0)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EventRecord {
    /// Index into the event list handed to `propagate`.
    pub event: usize,
    pub t: f64,
    pub state: RotatingState,
    /// Unwrapped angle about P1 at the event.
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    /// The requested time span was exhausted.
    TimeExhausted,
    /// A terminal event fired (index into the event list).
    Event { event: usize },
    /// The collision guard around a primary was crossed.
    Collision { t: f64, primary: u8 },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<RotatingState>,
    /// Unwrapped polar angle about P1 at each sample.
    pub theta: Vec<f64>,
    pub events: Vec<EventRecord>,
    pub termination: Termination,
    pub initial_energy: f64,
    pub max_energy_drift: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> RotatingState {
        *self.states.last().expect("trajectory has samples")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has samples")
    }

    pub fn theta_initial(&self) -> f64 {
        self.theta[0]
    }

    pub fn theta_final(&self) -> f64 {
        *self.theta.last().expect("trajectory has samples")
    }

    /// Accumulated turns about P1, as a fraction.
    pub fn revolutions(&self) -> f64 {
        (self.theta_final() - self.theta_initial()).abs() / std::f64::consts::TAU
    }

    /// Whether the energy drift stayed within `budget` scaled per 50
    /// revolutions.
    pub fn drift_ok(&self, budget: f64) -> bool {
        self.max_energy_drift <= budget * (self.revolutions() / 50.0).max(1.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PropagationOptions {
    pub tol: Tolerances,
    pub h_initial: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: u64,
    /// When set, exceed-and-error budget on |H(t) - H(0)|, scaled per 50
    /// revolutions; when unset the drift is only recorded.
    pub max_energy_drift: Option<f64>,
    /// Record every accepted step (otherwise only endpoints and events).
    pub dense: bool,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            h_initial: 1e-3,
            h_min: 1e-14,
            h_max: 0.5,
            max_steps: 20_000_000,
            max_energy_drift: None,
            dense: true,
        }
    }
}

/// Rotating-frame equations of motion plus the unwrapped angle about P1.
/// Layout: [x, y, vx, vy, theta].
pub struct PlanarEom<'a> {
    pub params: &'a SystemParams,
}

impl OdeSystem<5> for PlanarEom<'_> {
    fn rhs(&self, _t: f64, y: &[f64; 5], dydt: &mut [f64; 5]) {
        let mu = self.params.mu;
        let g = omega_gradient_unchecked(y[0], y[1], self.params);
        let dx = y[0] - mu;
        let r1_sq = dx * dx + y[1] * y[1];
        dydt[0] = y[2];
        dydt[1] = y[3];
        dydt[2] = 2.0 * y[3] + g[0];
        dydt[3] = -2.0 * y[2] + g[1];
        dydt[4] = (dx * y[3] - y[1] * y[2]) / r1_sq;
    }
}

/// Equations of motion coupled with the 4x4 state-transition sensitivity.
/// Layout: [x, y, vx, vy, theta, phi(16, row-major)].
pub struct VariationalEom<'a> {
    pub params: &'a SystemParams,
}

impl OdeSystem<21> for VariationalEom<'_> {
    fn rhs(&self, _t: f64, y: &[f64; 21], dydt: &mut [f64; 21]) {
        let mu = self.params.mu;
        let s = RotatingState::new(y[0], y[1], y[2], y[3]);
        let g = omega_gradient_unchecked(y[0], y[1], self.params);
        let dx = y[0] - mu;
        let r1_sq = dx * dx + y[1] * y[1];
        dydt[0] = y[2];
        dydt[1] = y[3];
        dydt[2] = 2.0 * y[3] + g[0];
        dydt[3] = -2.0 * y[2] + g[1];
        dydt[4] = (dx * y[3] - y[1] * y[2]) / r1_sq;
        let j = jacobian_unchecked(&s, self.params);
        for row in 0..4 {
            for col in 0..4 {
                let mut sum = 0.0;
                for l in 0..4 {
                    sum += j[row][l] * y[5 + 4 * l + col];
                }
                dydt[5 + 4 * row + col] = sum;
            }
        }
    }
}

pub(crate) trait PhasedSystem<const N: usize>: OdeSystem<N> {
    fn pack(s: &RotatingState, theta: f64) -> [f64; N];
    fn state(y: &[f64; N]) -> RotatingState;
    fn theta(y: &[f64; N]) -> f64;
}

impl PhasedSystem<5> for PlanarEom<'_> {
    fn pack(s: &RotatingState, theta: f64) -> [f64; 5] {
        [s.x, s.y, s.vx, s.vy, theta]
    }

    fn state(y: &[f64; 5]) -> RotatingState {
        RotatingState::new(y[0], y[1], y[2], y[3])
    }

    fn theta(y: &[f64; 5]) -> f64 {
        y[4]
    }
}

impl PhasedSystem<21> for VariationalEom<'_> {
    fn pack(s: &RotatingState, theta: f64) -> [f64; 21] {
        let mut y = [0.0; 21];
        y[0] = s.x;
        y[1] = s.y;
        y[2] = s.vx;
        y[3] = s.vy;
        y[4] = theta;
        for i in 0..4 {
            y[5 + 4 * i + i] = 1.0;
        }
        y
    }

    fn state(y: &[f64; 21]) -> RotatingState {
        RotatingState::new(y[0], y[1], y[2], y[3])
    }

    fn theta(y: &[f64; 21]) -> f64 {
        y[4]
    }
}

pub(crate) fn stm_from_vector(y: &[f64; 21]) -> [[f64; 4]; 4] {
    let mut phi = [[0.0; 4]; 4];
    for row in 0..4 {
        for col in 0..4 {
            phi[row][col] = y[5 + 4 * row + col];
        }
    }
    phi
}

struct EventTracker {
    armed: bool,
    g_prev: f64,
}

#[derive(Debug, Clone, Copy)]
enum Candidate {
    User { index: usize },
    Collision { primary: u8 },
}

struct CoreOutcome<const N: usize> {
    trajectory: Trajectory,
    final_vector: [f64; N],
}

fn integrate_core<const N: usize, S: PhasedSystem<N>>(
    sys: &S,
    s0: &RotatingState,
    t_span: f64,
    events: &[EventSpec],
    params: &SystemParams,
    opts: &PropagationOptions,
) -> Result<CoreOutcome<N>> {
    let r1 = s0.r1(params);
    let r2 = s0.r2(params);
    if r1 <= params.r_min {
        return Err(Error::Collision {
            t: 0.0,
            primary: 1,
            distance: r1,
        });
    }
    if r2 <= params.r_min {
        return Err(Error::Collision {
            t: 0.0,
            primary: 2,
            distance: r2,
        });
    }

    let theta0 = s0.angle_about_p1(params);
    let mut y = S::pack(s0, theta0);
    let mut t = 0.0;
    let h0 = hamiltonian(s0, params);

    let mut trajectory = Trajectory {
        times: vec![0.0],
        states: vec![*s0],
        theta: vec![theta0],
        events: Vec::new(),
        termination: Termination::TimeExhausted,
        initial_energy: h0,
        max_energy_drift: 0.0,
    };

    if t_span == 0.0 {
        return Ok(CoreOutcome {
            trajectory,
            final_vector: y,
        });
    }

    let dir = t_span.signum();
    let forward = dir > 0.0;
    let mut solver = Rkf78::<N>::new(opts.tol);
    solver.h_min = opts.h_min;
    solver.h_max = opts.h_max;

    let mut trackers: Vec<EventTracker> = events
        .iter()
        .map(|e| {
            let g = e.eval(0.0, s0, theta0, params);
            EventTracker {
                armed: g.abs() > ARM_THRESHOLD,
                g_prev: g,
            }
        })
        .collect();

    let mut h = opts.h_initial.abs().clamp(opts.h_min, opts.h_max) * dir;
    let mut steps: u64 = 0;

    while (t_span - t) * dir > 1e-14 {
        if (t + h - t_span) * dir > 0.0 {
            h = t_span - t;
        }
        let out = solver.step(sys, t, &y, h);
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepFailure(format!(
                "step budget {} exhausted at t = {t:.6}",
                opts.max_steps
            )));
        }
        if !out.accepted {
            if out.h_next <= opts.h_min {
                return Err(Error::StepFailure(format!(
                    "step size underflow at t = {t:.6}"
                )));
            }
            h = out.h_next * dir;
            continue;
        }
        if !out.y.iter().all(|v| v.is_finite()) {
            return Err(Error::StepFailure(format!(
                "non-finite state at t = {:.6}",
                out.t
            )));
        }

        let t_new = out.t;
        let y_new = out.y;
        let s_new = S::state(&y_new);
        let theta_new = S::theta(&y_new);
        let step_h = t_new - t;

        // Collect event candidates over this step.
        let mut candidates: Vec<(f64, Candidate)> = Vec::new();
        for (idx, ev) in events.iter().enumerate() {
            let g_new = ev.eval(t_new, &s_new, theta_new, params);
            let tracker = &mut trackers[idx];
            if !tracker.armed {
                if g_new.abs() > ARM_THRESHOLD {
                    tracker.armed = true;
                    tracker.g_prev = g_new;
                }
                continue;
            }
            if ev.crossed(tracker.g_prev, g_new, forward) {
                candidates.push((f64::NAN, Candidate::User { index: idx }));
            }
            tracker.g_prev = g_new;
        }
        let r1_new = s_new.r1(params);
        let r2_new = s_new.r2(params);
        if r1_new <= params.r_min {
            candidates.push((f64::NAN, Candidate::Collision { primary: 1 }));
        }
        if r2_new <= params.r_min {
            candidates.push((f64::NAN, Candidate::Collision { primary: 2 }));
        }

        // Localize each candidate inside the step.
        let mut localized: Vec<(f64, [f64; N], Candidate)> = Vec::new();
        for (_, cand) in &candidates {
            let g_of = |solver: &mut Rkf78<N>, tau: f64| -> (f64, [f64; N]) {
                let yv = solver.substate(sys, t, &y, tau);
                let sv = S::state(&yv);
                let g = match cand {
                    Candidate::User { index } => {
                        events[*index].eval(t + tau, &sv, S::theta(&yv), params)
                    }
                    Candidate::Collision { primary } => {
                        let r = if *primary == 1 {
                            sv.r1(params)
                        } else {
                            sv.r2(params)
                        };
                        r - params.r_min
                    }
                };
                (g, yv)
            };
            let s_start = S::state(&y);
            let g_a = match cand {
                Candidate::User { index } => {
                    events[*index].eval(t, &s_start, S::theta(&y), params)
                }
                Candidate::Collision { primary } => {
                    let r = if *primary == 1 {
                        s_start.r1(params)
                    } else {
                        s_start.r2(params)
                    };
                    r - params.r_min
                }
            };
            let (tau_root, y_root) = refine_root(&mut solver, g_a, step_h, g_of)?;
            localized.push((tau_root, y_root, *cand));
        }

        // Progress order, ties by registration order (user events first in
        // registration sequence, collisions after).
        localized.sort_by(|a, b| {
            let pa = a.0 * dir;
            let pb = b.0 * dir;
            pa.partial_cmp(&pb).expect("finite event times").then_with(|| {
                let rank = |c: &Candidate| match c {
                    Candidate::User { index } => *index,
                    Candidate::Collision { .. } => usize::MAX,
                };
                rank(&a.2).cmp(&rank(&b.2))
            })
        });

        for (tau, y_evt, cand) in localized {
            let s_evt = S::state(&y_evt);
            let theta_evt = S::theta(&y_evt);
            let t_evt = t + tau;
            match cand {
                Candidate::User { index } => {
                    if !events[index].gate(&s_evt, params) {
                        continue;
                    }
                    trajectory.events.push(EventRecord {
                        event: index,
                        t: t_evt,
                        state: s_evt,
                        theta: theta_evt,
                    });
                    if events[index].action == EventAction::Terminate {
                        trajectory.times.push(t_evt);
                        trajectory.states.push(s_evt);
                        trajectory.theta.push(theta_evt);
                        trajectory.termination = Termination::Event { event: index };
                        let drift = (hamiltonian(&s_evt, params) - h0).abs();
                        trajectory.max_energy_drift = trajectory.max_energy_drift.max(drift);
                        return Ok(CoreOutcome {
                            trajectory,
                            final_vector: y_evt,
                        });
                    }
                }
                Candidate::Collision { primary } => {
                    trajectory.times.push(t_evt);
                    trajectory.states.push(s_evt);
                    trajectory.theta.push(theta_evt);
                    trajectory.termination = Termination::Collision { t: t_evt, primary };
                    return Ok(CoreOutcome {
                        trajectory,
                        final_vector: y_evt,
                    });
                }
            }
        }

        // Accept the step.
        t = t_new;
        y = y_new;
        let drift = (hamiltonian(&s_new, params) - h0).abs();
        trajectory.max_energy_drift = trajectory.max_energy_drift.max(drift);
        if let Some(budget) = opts.max_energy_drift {
            let revs = (theta_new - theta0).abs() / std::f64::consts::TAU;
            let allowed = budget * (revs / 50.0).max(1.0);
            if drift > allowed {
                return Err(Error::EnergyDriftExceeded {
                    t,
                    drift,
                    budget: allowed,
                });
            }
        }
        if opts.dense {
            trajectory.times.push(t);
            trajectory.states.push(s_new);
            trajectory.theta.push(theta_new);
        }
        h = out.h_next * dir;
    }

    if !opts.dense {
        trajectory.times.push(t);
        trajectory.states.push(S::state(&y));
        trajectory.theta.push(S::theta(&y));
    }
    Ok(CoreOutcome {
        trajectory,
        final_vector: y,
    })
}

/// Illinois-damped false position on the event function over one accepted
/// step. `g_of` evaluates g at a signed offset into the step by re-stepping
/// the integrator from the step start.
fn refine_root<const N: usize>(
    solver: &mut Rkf78<N>,
    g_start: f64,
    step_h: f64,
    mut g_of: impl FnMut(&mut Rkf78<N>, f64) -> (f64, [f64; N]),
) -> Result<(f64, [f64; N])> {
    let t_tol = 1e-13;
    let mut a = 0.0;
    let mut fa = g_start;
    let mut b = step_h;
    let (mut fb, yb) = g_of(solver, b);
    let mut best = (b, yb, fb.abs());
    let mut side = 0i8;
    for _ in 0..120 {
        if (b - a).abs() < t_tol && best.2 <= EVENT_G_TOL {
            break;
        }
        let denom = fb - fa;
        let mut c = if denom != 0.0 {
            b - fb * (b - a) / denom
        } else {
            0.5 * (a + b)
        };
        let lo = a.min(b);
        let hi = a.max(b);
        let margin = 1e-3 * (hi - lo);
        if !(c > lo + margin && c < hi - margin) {
            c = 0.5 * (a + b);
        }
        let (fc, yc) = g_of(solver, c);
        if fc.abs() < best.2 {
            best = (c, yc, fc.abs());
        }
        if fc == 0.0 {
            break;
        }
        if fa * fc < 0.0 {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    let (tau, y_root, g_abs) = best;
    if g_abs > 1e-6 {
        return Err(Error::StepFailure(format!(
            "event refinement stalled (|g| = {g_abs:.3e})"
        )));
    }
    Ok((tau, y_root))
}

/// Propagate a state for `t_span` (negative for backward time) with event
/// monitoring. Collision, step underflow, and (when budgeted) energy drift
/// surface as errors; use [`propagate_lenient`] to receive the partial
/// trajectory with a collision termination instead.
pub fn propagate(
    s0: &RotatingState,
    t_span: f64,
    events: &[EventSpec],
    params: &SystemParams,
    opts: &PropagationOptions,
) -> Result<Trajectory> {
    let trajectory = propagate_lenient(s0, t_span, events, params, opts)?;
    if let Termination::Collision { t, primary } = trajectory.termination {
        return Err(Error::Collision {
            t,
            primary,
            distance: params.r_min,
        });
    }
    Ok(trajectory)
}

/// As [`propagate`], but a collision-guard crossing ends the trajectory with
/// [`Termination::Collision`] rather than an error.
pub fn propagate_lenient(
    s0: &RotatingState,
    t_span: f64,
    events: &[EventSpec],
    params: &SystemParams,
    opts: &PropagationOptions,
) -> Result<Trajectory> {
    let sys = PlanarEom { params };
    Ok(integrate_core(&sys, s0, t_span, events, params, opts)?.trajectory)
}

/// Propagate with the 4x4 state-transition sensitivity, initialized to the
/// identity, returning the sensitivity at the final sample (the terminal
/// event point when a terminal event fires).
pub fn propagate_with_stm(
    s0: &RotatingState,
    t_span: f64,
    events: &[EventSpec],
    params: &SystemParams,
    opts: &PropagationOptions,
) -> Result<(Trajectory, [[f64; 4]; 4])> {
    let sys = VariationalEom { params };
    let out = integrate_core(&sys, s0, t_span, events, params, opts)?;
    if let Termination::Collision { t, primary } = out.trajectory.termination {
        return Err(Error::Collision {
            t,
            primary,
            distance: params.r_min,
        });
    }
    Ok((out.trajectory, stm_from_vector(&out.final_vector)))
}
