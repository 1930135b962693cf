//! The planar Lyapunov orbit family about L1: linear-center initial guesses,
//! perpendicular-crossing differential correction, and energy targeting by
//! amplitude continuation.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    hamiltonian, omega_hessian, vector_field_unchecked, RotatingState, SystemParams,
};
use crate::equilibria::{l1_spectrum, lagrange_points, L1Spectrum, LagrangePointSet};
use crate::error::{Error, Result};
use crate::propagation::{
    propagate_with_stm, EventAction, EventDirection, EventKind, EventSpec, PropagationOptions,
    Termination,
};

/// Validated energy interval (open) for the orbit family and everything
/// downstream of it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyBand {
    /// Lower end: the L1 energy.
    pub h_low: f64,
    /// Upper end: the configured H*.
    pub h_high: f64,
}

impl EnergyBand {
    pub fn contains(&self, h: f64) -> bool {
        h > self.h_low && h < self.h_high
    }

    pub fn width(&self) -> f64 {
        self.h_high - self.h_low
    }
}

/// A corrected planar Lyapunov orbit, anchored at its perpendicular crossing
/// of the x-axis on the far side of L1 from P1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovOrbit {
    pub initial: RotatingState,
    pub period: f64,
    pub energy: f64,
    /// |x0 - x_L1|.
    pub amplitude: f64,
    /// Monodromy matrix over one period, row-major.
    pub monodromy: [[f64; 4]; 4],
    /// Monodromy eigenvalues as (re, im) pairs, by descending magnitude.
    pub eigenvalues: [[f64; 2]; 4],
    /// Dominant real multiplier, > 1 for a hyperbolic orbit.
    pub lambda_max: f64,
}

impl LyapunovOrbit {
    /// Residual of the periodicity condition |phi_T(s0) - s0|.
    pub fn periodicity_residual(&self, params: &SystemParams) -> Result<f64> {
        let (traj, _) = propagate_with_stm(
            &self.initial,
            self.period,
            &[],
            params,
            &PropagationOptions::default(),
        )?;
        Ok(traj.final_state().max_abs_diff(&self.initial))
    }

    pub fn monodromy_determinant(&self) -> f64 {
        Matrix4::from_fn(|i, j| self.monodromy[i][j]).determinant()
    }
}

/// Linear-center guess for a Lyapunov orbit of the given x-amplitude.
#[derive(Debug, Clone, Copy)]
pub struct OrbitGuess {
    pub x0: f64,
    pub vy0: f64,
    pub period: f64,
}

pub fn initial_guess(amplitude: f64, params: &SystemParams) -> Result<OrbitGuess> {
    let points = lagrange_points(params)?;
    let spec = l1_spectrum(params)?;
    Ok(guess_from_linearization(amplitude, &points, &spec, params))
}

fn guess_from_linearization(
    amplitude: f64,
    points: &LagrangePointSet,
    spec: &L1Spectrum,
    params: &SystemParams,
) -> OrbitGuess {
    let [oxx, _, _] = omega_hessian(points.l1[0], points.l1[1], params);
    let nu = spec.nu;
    // In-plane center mode: xi = A cos(nu t), eta = A kappa sin(nu t).
    let kappa = -(nu * nu + oxx) / (2.0 * nu);
    let a = -amplitude;
    OrbitGuess {
        x0: points.l1[0] + a,
        vy0: a * kappa * nu,
        period: std::f64::consts::TAU / nu,
    }
}

/// Differential correction by single shooting on the perpendicular-crossing
/// condition: from (x0, 0, 0, vy0), the next x-axis crossing must have
/// vx = 0. Only vy0 is adjusted; x0 parameterizes the family.
pub fn differential_correct(guess: &OrbitGuess, params: &SystemParams) -> Result<LyapunovOrbit> {
    const MAX_ITER: usize = 30;
    const VX_TOL: f64 = 1e-12;

    let opts = PropagationOptions::default();
    let crossing_event = [EventSpec::new(
        EventKind::YAxisCrossing,
        EventDirection::Any,
        EventAction::Terminate,
    )];

    let mut vy0 = guess.vy0;
    let mut half_period = 0.0;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    for iter in 0..MAX_ITER {
        let s0 = RotatingState::new(guess.x0, 0.0, 0.0, vy0);
        let (traj, phi) =
            propagate_with_stm(&s0, 2.5 * guess.period, &crossing_event, params, &opts)?;
        if !matches!(traj.termination, Termination::Event { .. }) {
            return Err(Error::NoConvergence {
                iterations: iter,
                residual: f64::INFINITY,
            });
        }
        let sc = traj.final_state();
        half_period = traj.final_time();
        residual = sc.vx.abs();
        if residual < VX_TOL {
            converged = true;
            break;
        }
        let f = vector_field_unchecked(&sc, params);
        let ax = f[2];
        if sc.vy.abs() < 1e-12 {
            return Err(Error::SingularCorrection { denominator: sc.vy });
        }
        let denom = phi[2][3] - ax * phi[1][3] / sc.vy;
        if denom.abs() < 1e-10 {
            return Err(Error::SingularCorrection { denominator: denom });
        }
        vy0 -= sc.vx / denom;
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: MAX_ITER,
            residual,
        });
    }

    let initial = RotatingState::new(guess.x0, 0.0, 0.0, vy0);
    let period = 2.0 * half_period;
    let (traj, monodromy) = propagate_with_stm(&initial, period, &[], params, &opts)?;
    let closure = traj.final_state().max_abs_diff(&initial);
    if closure > 1e-9 {
        return Err(Error::NoConvergence {
            iterations: MAX_ITER,
            residual: closure,
        });
    }

    let m = Matrix4::from_fn(|i, j| monodromy[i][j]);
    let eig = m.complex_eigenvalues();
    let mut pairs: Vec<[f64; 2]> = eig.iter().map(|c| [c.re, c.im]).collect();
    pairs.sort_by(|a, b| {
        let na = a[0].hypot(a[1]);
        let nb = b[0].hypot(b[1]);
        nb.partial_cmp(&na).expect("finite eigenvalues")
    });
    let eigenvalues = [pairs[0], pairs[1], pairs[2], pairs[3]];

    // The spectrum is {lambda, 1/lambda, 1, 1}; the dominant multiplier
    // follows from the trace without contamination from the unit pair.
    let s = m.trace() - 2.0;
    let lambda_max = if s > 2.0 {
        0.5 * (s + (s * s - 4.0).sqrt())
    } else {
        pairs[0][0].hypot(pairs[0][1])
    };

    let points = lagrange_points(params)?;
    Ok(LyapunovOrbit {
        initial,
        period,
        energy: hamiltonian(&initial, params),
        amplitude: (initial.x - points.l1[0]).abs(),
        monodromy,
        eigenvalues,
        lambda_max,
    })
}

/// Continuation cache for the family, supporting energy targeting with warm
/// starts from the nearest previously corrected orbit.
pub struct LyapunovFamily {
    params: SystemParams,
    points: LagrangePointSet,
    spec: L1Spectrum,
    /// Corrected orbits sorted by amplitude.
    cache: Vec<LyapunovOrbit>,
}

impl LyapunovFamily {
    pub fn new(params: &SystemParams) -> Result<Self> {
        let points = lagrange_points(params)?;
        let spec = l1_spectrum(params)?;
        Ok(Self {
            params: *params,
            points,
            spec,
            cache: Vec::new(),
        })
    }

    pub fn h_l1(&self) -> f64 {
        self.points.h_l1()
    }

    pub fn spectrum(&self) -> L1Spectrum {
        self.spec
    }

    fn insert(&mut self, orbit: LyapunovOrbit) -> LyapunovOrbit {
        let pos = self
            .cache
            .binary_search_by(|o| {
                o.amplitude
                    .partial_cmp(&orbit.amplitude)
                    .expect("finite amplitude")
            })
            .unwrap_or_else(|e| e);
        self.cache.insert(pos, orbit.clone());
        orbit
    }

    /// Correct an orbit of the given amplitude, warm-starting vy0 from the
    /// cached family when possible and walking the amplitude in bounded
    /// steps when the target is far from anything known.
    pub fn orbit_at_amplitude(&mut self, amplitude: f64) -> Result<LyapunovOrbit> {
        if !(amplitude > 0.0 && amplitude < 0.9 * self.points.x_plus) {
            return Err(Error::InvalidParams(format!(
                "amplitude {amplitude} outside (0, 0.9 x_plus)"
            )));
        }
        if let Some(hit) = self
            .cache
            .iter()
            .find(|o| (o.amplitude - amplitude).abs() < 1e-14)
        {
            return Ok(hit.clone());
        }

        let mut current = match self.nearest_cached(amplitude) {
            Some(o) => o,
            None => {
                let a0 = (0.02 * self.points.x_plus).min(amplitude);
                let guess = guess_from_linearization(a0, &self.points, &self.spec, &self.params);
                let orbit = differential_correct(&guess, &self.params)?;
                self.insert(orbit.clone());
                orbit
            }
        };

        // Walk toward the requested amplitude, growing by at most 60% per
        // continuation step and halving on correction failure.
        let mut step_cap = 0.6;
        let mut failures = 0usize;
        while (current.amplitude - amplitude).abs() > 1e-14 {
            let remaining = amplitude - current.amplitude;
            let max_step = step_cap * current.amplitude.max(1e-4);
            let da = remaining.clamp(-max_step, max_step);
            let next_amplitude = current.amplitude + da;
            let guess = self.extrapolated_guess(next_amplitude);
            match differential_correct(&guess, &self.params) {
                Ok(orbit) => {
                    current = self.insert(orbit);
                    step_cap = (step_cap * 1.3).min(0.6);
                }
                Err(e) => {
                    failures += 1;
                    if failures > 40 {
                        return Err(e);
                    }
                    step_cap *= 0.5;
                    if step_cap < 1e-4 {
                        return Err(e);
                    }
                }
            }
        }
        Ok(current)
    }

    fn nearest_cached(&self, amplitude: f64) -> Option<LyapunovOrbit> {
        self.cache
            .iter()
            .min_by(|a, b| {
                let da = (a.amplitude - amplitude).abs();
                let db = (b.amplitude - amplitude).abs();
                da.partial_cmp(&db).expect("finite amplitude")
            })
            .cloned()
    }

    /// Predict (x0, vy0, period) at a new amplitude from the two nearest
    /// cached orbits, falling back to the linear-center model.
    fn extrapolated_guess(&self, amplitude: f64) -> OrbitGuess {
        let x0 = self.points.l1[0] - amplitude;
        let mut by_distance: Vec<&LyapunovOrbit> = self.cache.iter().collect();
        by_distance.sort_by(|a, b| {
            let da = (a.amplitude - amplitude).abs();
            let db = (b.amplitude - amplitude).abs();
            da.partial_cmp(&db).expect("finite amplitude")
        });
        match by_distance.len() {
            0 => guess_from_linearization(amplitude, &self.points, &self.spec, &self.params),
            1 => {
                let o = by_distance[0];
                let lin_here =
                    guess_from_linearization(amplitude, &self.points, &self.spec, &self.params);
                let lin_there =
                    guess_from_linearization(o.amplitude, &self.points, &self.spec, &self.params);
                OrbitGuess {
                    x0,
                    vy0: o.initial.vy + (lin_here.vy0 - lin_there.vy0),
                    period: o.period,
                }
            }
            _ => {
                let o1 = by_distance[0];
                let o2 = by_distance[1];
                let da = o2.amplitude - o1.amplitude;
                let t = if da.abs() > 1e-300 {
                    (amplitude - o1.amplitude) / da
                } else {
                    0.0
                };
                OrbitGuess {
                    x0,
                    vy0: o1.initial.vy + t * (o2.initial.vy - o1.initial.vy),
                    period: o1.period + t * (o2.period - o1.period),
                }
            }
        }
    }

    /// Member of the family at the prescribed energy, to |H - target| < 1e-11,
    /// by secant iteration on the amplitude-energy map.
    pub fn orbit_at_energy(&mut self, h_target: f64, band: &EnergyBand) -> Result<LyapunovOrbit> {
        const H_TOL: f64 = 1e-11;
        if !band.contains(h_target) {
            return Err(Error::OutOfRange {
                requested: h_target,
                low: band.h_low,
                high: band.h_high,
            });
        }

        // Reference orbit for the quadratic energy-amplitude model.
        let reference = match self.nearest_cached(0.0) {
            Some(o) => o,
            None => {
                let a0 = 0.02 * self.points.x_plus;
                let guess = guess_from_linearization(a0, &self.points, &self.spec, &self.params);
                let orbit = differential_correct(&guess, &self.params)?;
                self.insert(orbit.clone());
                orbit
            }
        };
        let dh_ref = reference.energy - self.points.h_l1();
        if !(dh_ref > 0.0) {
            return Err(Error::SpectrumMismatch(format!(
                "reference orbit energy offset {dh_ref} not positive"
            )));
        }

        let dh_target = h_target - self.points.h_l1();
        let mut a_curr = (reference.amplitude * (dh_target / dh_ref).sqrt())
            .clamp(1e-6, 0.8 * self.points.x_plus);
        let mut orbit_curr = self.orbit_at_amplitude(a_curr)?;
        if (orbit_curr.energy - h_target).abs() < H_TOL {
            return Ok(orbit_curr);
        }
        let mut a_prev = a_curr * 1.02;
        let mut orbit_prev = self.orbit_at_amplitude(a_prev)?;

        for _ in 0..60 {
            let f_curr = orbit_curr.energy - h_target;
            if f_curr.abs() < H_TOL {
                return Ok(orbit_curr);
            }
            let f_prev = orbit_prev.energy - h_target;
            let df = f_curr - f_prev;
            if df.abs() < 1e-17 {
                return Err(Error::NoConvergence {
                    iterations: 60,
                    residual: f_curr.abs(),
                });
            }
            let mut a_next = a_curr - f_curr * (a_curr - a_prev) / df;
            if !a_next.is_finite() || a_next <= 0.0 {
                a_next = 0.5 * a_curr;
            }
            a_next = a_next.clamp(0.3 * a_curr, 3.0 * a_curr);
            a_prev = a_curr;
            orbit_prev = orbit_curr;
            a_curr = a_next;
            orbit_curr = self.orbit_at_amplitude(a_curr)?;
        }
        let residual = (orbit_curr.energy - h_target).abs();
        if residual < H_TOL {
            Ok(orbit_curr)
        } else {
            Err(Error::NoConvergence {
                iterations: 60,
                residual,
            })
        }
    }
}

/// One-shot energy targeting; builds a throwaway continuation cache.
pub fn orbit_at_energy(
    h_target: f64,
    band: &EnergyBand,
    params: &SystemParams,
) -> Result<LyapunovOrbit> {
    LyapunovFamily::new(params)?.orbit_at_energy(h_target, band)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn earth_moon() -> SystemParams {
        SystemParams::new(0.0121505856).unwrap()
    }

    #[test]
    fn guess_period_approaches_linear_limit() {
        let params = earth_moon();
        let spec = l1_spectrum(&params).unwrap();
        let linear_period = std::f64::consts::TAU / spec.nu;
        let o_small =
            differential_correct(&initial_guess(1e-4, &params).unwrap(), &params).unwrap();
        let o_large =
            differential_correct(&initial_guess(4e-4, &params).unwrap(), &params).unwrap();
        let d_small = (o_small.period - linear_period).abs();
        let d_large = (o_large.period - linear_period).abs();
        assert!(d_small < d_large, "{d_small} !< {d_large}");
        // Quadratic scaling in amplitude: 16x amplitude^2 ratio, allow slack.
        assert!(d_large / d_small > 4.0, "ratio {}", d_large / d_small);
        // Energy continuity toward H(L1).
        let h_l1 = lagrange_points(&params).unwrap().h_l1();
        assert!(o_small.energy > h_l1);
        assert!(o_small.energy - h_l1 < o_large.energy - h_l1);
    }

    #[test]
    fn correction_converges_quickly_for_small_amplitude() {
        let params = earth_moon();
        let guess = initial_guess(1e-3, &params).unwrap();
        let orbit = differential_correct(&guess, &params).unwrap();
        let residual = orbit.periodicity_residual(&params).unwrap();
        assert!(residual < 1e-10, "flow-map residual {residual}");
        assert!((orbit.monodromy_determinant() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn corrected_orbit_is_a_fixed_point_of_correction() {
        let params = earth_moon();
        let orbit = differential_correct(&initial_guess(2e-3, &params).unwrap(), &params).unwrap();
        let again = differential_correct(
            &OrbitGuess {
                x0: orbit.initial.x,
                vy0: orbit.initial.vy,
                period: orbit.period,
            },
            &params,
        )
        .unwrap();
        assert!((again.initial.vy - orbit.initial.vy).abs() < 1e-12);
        assert!((again.period - orbit.period).abs() < 1e-9);
    }

    #[test]
    fn monodromy_contains_unit_pair_and_hyperbolic_pair() {
        let params = earth_moon();
        let orbit = differential_correct(&initial_guess(5e-3, &params).unwrap(), &params).unwrap();
        // Two eigenvalues within 1e-6 of +1.
        let near_unit = orbit
            .eigenvalues
            .iter()
            .filter(|ev| (ev[0] - 1.0).hypot(ev[1]) < 1e-6)
            .count();
        assert!(near_unit >= 2, "eigenvalues {:?}", orbit.eigenvalues);
        assert!(orbit.lambda_max > 1.0 + 1e-3);
        // Reciprocal partner present.
        let target = 1.0 / orbit.lambda_max;
        let has_reciprocal = orbit
            .eigenvalues
            .iter()
            .any(|ev| (ev[0] - target).hypot(ev[1]) < 1e-6 * target.max(1e-3));
        assert!(has_reciprocal, "eigenvalues {:?}", orbit.eigenvalues);
    }

    #[test]
    fn energy_targeting_hits_tolerance() {
        let params = earth_moon();
        let points = lagrange_points(&params).unwrap();
        let band = EnergyBand {
            h_low: points.h_l1(),
            h_high: points.h_l1() + 0.5 * (points.h_l2() - points.h_l1()),
        };
        let mut family = LyapunovFamily::new(&params).unwrap();
        let h_target = points.h_l1() + 1e-4;
        let orbit = family.orbit_at_energy(h_target, &band).unwrap();
        assert!(
            (orbit.energy - h_target).abs() < 1e-11,
            "energy residual {}",
            (orbit.energy - h_target).abs()
        );
        assert!(orbit.amplitude > 0.0);
    }

    #[test]
    fn energy_below_band_rejected() {
        let params = earth_moon();
        let points = lagrange_points(&params).unwrap();
        let band = EnergyBand {
            h_low: points.h_l1(),
            h_high: points.h_l1() + 4e-3,
        };
        let err = orbit_at_energy(points.h_l1(), &band, &params).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { .. }), "{err}");
        let err = orbit_at_energy(points.h_l1() - 1e-3, &band, &params).unwrap_err();
        assert!(matches!(err, Error::OutOfRange { .. }), "{err}");
    }

    #[test]
    fn amplitude_increases_with_energy() {
        let params = earth_moon();
        let points = lagrange_points(&params).unwrap();
        let band = EnergyBand {
            h_low: points.h_l1(),
            h_high: points.h_l1() + 4e-3,
        };
        let mut family = LyapunovFamily::new(&params).unwrap();
        let mut last_amplitude = 0.0;
        for k in 1..=5 {
            let h = points.h_l1() + 7e-4 * k as f64;
            let orbit = family.orbit_at_energy(h, &band).unwrap();
            assert!(
                orbit.amplitude > last_amplitude,
                "amplitude not increasing at step {k}"
            );
            last_amplitude = orbit.amplitude;
        }
    }
}
