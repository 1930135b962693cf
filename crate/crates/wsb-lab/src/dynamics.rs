//! Rotating-frame dynamics of the planar circular restricted three-body
//! problem, together with the coordinate transformations between barycentric
//! rotating coordinates, polar coordinates about the heavier primary, and
//! osculating orbital elements.
//!
//! Conventions: the heavier primary P1 sits at `(mu, 0)`, the lighter P2 at
//! `(-1 + mu, 0)`. Polar coordinates `(r, theta)` are taken about P1 in the
//! rotating frame; `thetadot` stored in [`PolarState`] is the rotating-frame
//! rate. The osculating (two-body) angular rate about P1 equals
//! `thetadot + 1`, which is the rate appearing in the element relations.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// Distance floor below which potential evaluations are refused outright.
const MACHINE_SAFE_FLOOR: f64 = 1e-14;

/// Eccentricity below which the osculating conic is treated as circular and
/// the true anomaly is pinned to zero.
const CIRCULAR_FLOOR: f64 = 1e-12;

/// Mass ratio and collision-guard radius defining one problem instance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SystemParams {
    /// Mass ratio m2 / (m1 + m2), in (0, 1/2].
    pub mu: f64,
    /// Collision-guard radius about either primary (nondimensional).
    pub r_min: f64,
}

impl SystemParams {
    pub fn new(mu: f64) -> Result<Self> {
        Self::with_guard(mu, 1e-4)
    }

    pub fn with_guard(mu: f64, r_min: f64) -> Result<Self> {
        if !(mu > 0.0 && mu <= 0.5) {
            return Err(Error::InvalidParams(format!(
                "mass ratio mu = {mu} outside (0, 1/2]"
            )));
        }
        if !(r_min > 0.0) {
            return Err(Error::InvalidParams(format!(
                "collision guard r_min = {r_min} must be positive"
            )));
        }
        Ok(Self { mu, r_min })
    }

    /// Position of the heavier primary P1.
    pub fn p1(&self) -> [f64; 2] {
        [self.mu, 0.0]
    }

    /// Position of the lighter primary P2.
    pub fn p2(&self) -> [f64; 2] {
        [-1.0 + self.mu, 0.0]
    }

    /// Gravitational parameter of P1 (the two-body limit about P1).
    pub fn gm1(&self) -> f64 {
        1.0 - self.mu
    }
}

/// Position and velocity in the barycentric rotating frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatingState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl RotatingState {
    pub fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self { x, y, vx, vy }
    }

    /// Distance to the heavier primary P1.
    pub fn r1(&self, params: &SystemParams) -> f64 {
        let dx = self.x - params.mu;
        (dx * dx + self.y * self.y).sqrt()
    }

    /// Distance to the lighter primary P2.
    pub fn r2(&self, params: &SystemParams) -> f64 {
        let dx = self.x + 1.0 - params.mu;
        (dx * dx + self.y * self.y).sqrt()
    }

    pub fn speed_squared(&self) -> f64 {
        self.vx * self.vx + self.vy * self.vy
    }

    /// Mirror image under the reversibility symmetry (y, vx) -> (-y, -vx).
    pub fn mirrored(&self) -> Self {
        Self::new(self.x, -self.y, -self.vx, self.vy)
    }

    /// Rotating-frame polar angle about P1, principal value in (-pi, pi].
    pub fn angle_about_p1(&self, params: &SystemParams) -> f64 {
        self.y.atan2(self.x - params.mu)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.vx, self.vy]
    }

    pub fn from_array(a: &[f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.vx - other.vx).abs())
            .max((self.vy - other.vy).abs())
    }
}

/// Polar coordinates about P1 in the rotating frame. `thetadot` is the
/// rotating-frame rate; add 1 to obtain the osculating two-body rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarState {
    pub r: f64,
    pub rdot: f64,
    /// Angle about P1, normalized to [0, 2*pi).
    pub theta: f64,
    /// Rotating-frame angular rate d(theta)/dt.
    pub thetadot: f64,
}

/// Instantaneous two-body ellipse about P1 fitted to a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OsculatingElements {
    /// Semi-major axis.
    pub a: f64,
    /// Eccentricity in [0, 1).
    pub e: f64,
    /// Argument of periapsis in [0, 2*pi).
    pub phi: f64,
    /// True anomaly in [0, 2*pi).
    pub tau: f64,
}

impl OsculatingElements {
    /// Semi-latus rectum a(1 - e^2).
    pub fn semi_latus_rectum(&self) -> f64 {
        self.a * (1.0 - self.e * self.e)
    }

    /// Conic radius at the stored true anomaly.
    pub fn conic_radius(&self) -> f64 {
        self.semi_latus_rectum() / (1.0 + self.e * self.tau.cos())
    }
}

/// Normalize an angle to [0, 2*pi).
pub fn normalize_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w == TAU {
        0.0
    } else {
        w
    }
}

/// Effective potential of the rotating frame.
///
/// Returns an error when the evaluation point is numerically on top of a
/// primary; use [`omega_unchecked`] in inner loops that guarantee the guard.
pub fn effective_potential(x: f64, y: f64, params: &SystemParams) -> Result<f64> {
    let (r1, r2) = primary_distances(x, y, params);
    if r1 <= MACHINE_SAFE_FLOOR {
        return Err(Error::Singularity {
            primary: 1,
            distance: r1,
        });
    }
    if r2 <= MACHINE_SAFE_FLOOR {
        return Err(Error::Singularity {
            primary: 2,
            distance: r2,
        });
    }
    Ok(omega_unchecked(x, y, params))
}

#[inline]
pub fn omega_unchecked(x: f64, y: f64, params: &SystemParams) -> f64 {
    let mu = params.mu;
    let (r1, r2) = primary_distances(x, y, params);
    0.5 * (x * x + y * y) + (1.0 - mu) / r1 + mu / r2 + 0.5 * mu * (1.0 - mu)
}

#[inline]
fn primary_distances(x: f64, y: f64, params: &SystemParams) -> (f64, f64) {
    let dx1 = x - params.mu;
    let dx2 = x + 1.0 - params.mu;
    (
        (dx1 * dx1 + y * y).sqrt(),
        (dx2 * dx2 + y * y).sqrt(),
    )
}

/// Gradient of the effective potential.
pub fn omega_gradient(x: f64, y: f64, params: &SystemParams) -> Result<[f64; 2]> {
    let (r1, r2) = primary_distances(x, y, params);
    if r1 <= MACHINE_SAFE_FLOOR || r2 <= MACHINE_SAFE_FLOOR {
        return Err(Error::Singularity {
            primary: if r1 <= r2 { 1 } else { 2 },
            distance: r1.min(r2),
        });
    }
    Ok(omega_gradient_unchecked(x, y, params))
}

#[inline]
pub fn omega_gradient_unchecked(x: f64, y: f64, params: &SystemParams) -> [f64; 2] {
    let mu = params.mu;
    let dx1 = x - mu;
    let dx2 = x + 1.0 - mu;
    let r1_sq = dx1 * dx1 + y * y;
    let r2_sq = dx2 * dx2 + y * y;
    let r1_cubed = r1_sq * r1_sq.sqrt();
    let r2_cubed = r2_sq * r2_sq.sqrt();
    [
        x - (1.0 - mu) * dx1 / r1_cubed - mu * dx2 / r2_cubed,
        y - (1.0 - mu) * y / r1_cubed - mu * y / r2_cubed,
    ]
}

/// Rotating-frame vector field: d/dt (x, y, vx, vy).
pub fn vector_field(s: &RotatingState, params: &SystemParams) -> Result<[f64; 4]> {
    let r1 = s.r1(params);
    let r2 = s.r2(params);
    if r1 <= params.r_min || r2 <= params.r_min {
        return Err(Error::Singularity {
            primary: if r1 <= r2 { 1 } else { 2 },
            distance: r1.min(r2),
        });
    }
    Ok(vector_field_unchecked(s, params))
}

#[inline]
pub fn vector_field_unchecked(s: &RotatingState, params: &SystemParams) -> [f64; 4] {
    let g = omega_gradient_unchecked(s.x, s.y, params);
    [s.vx, s.vy, 2.0 * s.vy + g[0], -2.0 * s.vx + g[1]]
}

/// Hamiltonian energy H = (vx^2 + vy^2)/2 - omega(x, y).
pub fn hamiltonian(s: &RotatingState, params: &SystemParams) -> f64 {
    0.5 * s.speed_squared() - omega_unchecked(s.x, s.y, params)
}

/// Second derivatives of the effective potential, (omega_xx, omega_xy, omega_yy).
#[inline]
pub fn omega_hessian(x: f64, y: f64, params: &SystemParams) -> [f64; 3] {
    let mu = params.mu;
    let dx1 = x - mu;
    let dx2 = x + 1.0 - mu;
    let r1_sq = dx1 * dx1 + y * y;
    let r2_sq = dx2 * dx2 + y * y;
    let r1_3 = r1_sq * r1_sq.sqrt();
    let r2_3 = r2_sq * r2_sq.sqrt();
    let r1_5 = r1_3 * r1_sq;
    let r2_5 = r2_3 * r2_sq;
    let m1 = 1.0 - mu;
    let oxx = 1.0 - m1 / r1_3 + 3.0 * m1 * dx1 * dx1 / r1_5 - mu / r2_3 + 3.0 * mu * dx2 * dx2 / r2_5;
    let oxy = 3.0 * m1 * dx1 * y / r1_5 + 3.0 * mu * dx2 * y / r2_5;
    let oyy = 1.0 - m1 / r1_3 + 3.0 * m1 * y * y / r1_5 - mu / r2_3 + 3.0 * mu * y * y / r2_5;
    [oxx, oxy, oyy]
}

/// Jacobian of the vector field at a state, row-major 4x4.
pub fn jacobian(s: &RotatingState, params: &SystemParams) -> Result<[[f64; 4]; 4]> {
    let r1 = s.r1(params);
    let r2 = s.r2(params);
    if r1 <= params.r_min || r2 <= params.r_min {
        return Err(Error::Singularity {
            primary: if r1 <= r2 { 1 } else { 2 },
            distance: r1.min(r2),
        });
    }
    Ok(jacobian_unchecked(s, params))
}

#[inline]
pub fn jacobian_unchecked(s: &RotatingState, params: &SystemParams) -> [[f64; 4]; 4] {
    let [oxx, oxy, oyy] = omega_hessian(s.x, s.y, params);
    [
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [oxx, oxy, 0.0, 2.0],
        [oxy, oyy, -2.0, 0.0],
    ]
}

/// Time derivative of the pair (state, sensitivity): the sensitivity obeys
/// dPhi/dt = J(s) * Phi with J the Jacobian of the vector field.
pub fn variational_field(
    s: &RotatingState,
    phi: &[[f64; 4]; 4],
    params: &SystemParams,
) -> Result<([f64; 4], [[f64; 4]; 4])> {
    let ds = vector_field(s, params)?;
    let j = jacobian_unchecked(s, params);
    let mut dphi = [[0.0; 4]; 4];
    for i in 0..4 {
        for k in 0..4 {
            let mut sum = 0.0;
            for l in 0..4 {
                sum += j[i][l] * phi[l][k];
            }
            dphi[i][k] = sum;
        }
    }
    Ok((ds, dphi))
}

/// Polar coordinates about P1 from a rotating-frame state.
pub fn polar_from_cartesian(s: &RotatingState, params: &SystemParams) -> Result<PolarState> {
    let dx = s.x - params.mu;
    let r = (dx * dx + s.y * s.y).sqrt();
    if r <= MACHINE_SAFE_FLOOR {
        return Err(Error::UndefinedAngle);
    }
    let theta = normalize_angle(s.y.atan2(dx));
    let rdot = (dx * s.vx + s.y * s.vy) / r;
    let thetadot = (dx * s.vy - s.y * s.vx) / (r * r);
    Ok(PolarState {
        r,
        rdot,
        theta,
        thetadot,
    })
}

/// Rotating-frame state from polar coordinates about P1.
pub fn cartesian_from_polar(p: &PolarState, params: &SystemParams) -> Result<RotatingState> {
    if !(p.r > 0.0) {
        return Err(Error::UndefinedAngle);
    }
    let (sin_t, cos_t) = p.theta.sin_cos();
    Ok(RotatingState {
        x: params.mu + p.r * cos_t,
        y: p.r * sin_t,
        vx: p.rdot * cos_t - p.r * p.thetadot * sin_t,
        vy: p.rdot * sin_t + p.r * p.thetadot * cos_t,
    })
}

/// Osculating two-body elements about P1 fitted to a rotating-frame state.
///
/// The osculating velocity is the rotating-frame velocity plus the frame
/// rotation about P1; the fit uses the gravitational parameter 1 - mu.
pub fn elements_from_state(
    s: &RotatingState,
    params: &SystemParams,
) -> Result<OsculatingElements> {
    let gm = params.gm1();
    let dx = s.x - params.mu;
    let r = (dx * dx + s.y * s.y).sqrt();
    if r <= params.r_min {
        return Err(Error::Singularity {
            primary: 1,
            distance: r,
        });
    }
    // Velocity relative to P1 in the co-rotating axes, frame rotation included.
    let ux = s.vx - s.y;
    let uy = s.vy + dx;
    let ell = dx * uy - s.y * ux;
    let two_body_energy = 0.5 * (ux * ux + uy * uy) - gm / r;
    if two_body_energy >= 0.0 {
        return Err(Error::HyperbolicOsculation { e: f64::INFINITY });
    }
    let a = -gm / (2.0 * two_body_energy);
    let p = ell * ell / gm;
    let e = (1.0 - p / a).max(0.0).sqrt();
    if e >= 1.0 {
        return Err(Error::HyperbolicOsculation { e });
    }
    let theta = normalize_angle(s.y.atan2(dx));
    let (tau, phi) = if e < CIRCULAR_FLOOR {
        (0.0, theta)
    } else {
        let rdot = (dx * s.vx + s.y * s.vy) / r;
        let cos_tau = ((p / r - 1.0) / e).clamp(-1.0, 1.0);
        let sin_tau = rdot * ell / (gm * e);
        let tau = normalize_angle(sin_tau.atan2(cos_tau));
        (tau, normalize_angle(theta - tau))
    };
    Ok(OsculatingElements { a, e, phi, tau })
}

/// Which root of the semi-latus-rectum quadratic to take when two osculating
/// ellipses match the same `(r0, rdot0, e0)` data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EllipseRoot {
    /// Root with the smaller |true anomaly| (closer to periapsis). Default.
    NearPeriapsis,
    /// The other admissible root.
    FarFromPeriapsis,
    /// Refuse to choose: error out when both roots are admissible.
    Strict,
}

impl Default for EllipseRoot {
    fn default() -> Self {
        EllipseRoot::NearPeriapsis
    }
}

/// Build the full state on the section ray at angle `theta0` from the data
/// `(r0, rdot0, e0)` of the osculating ellipse, enforcing a positive
/// rotating-frame angular rate.
///
/// Solves the quadratic
/// `p^2/r0^2 + p (rdot0^2/(1-mu) - 2/r0) + (1 - e0^2) = 0`
/// for the semi-latus rectum p, reconstructs the rotating-frame state, and
/// returns it together with the energy and the elements.
pub fn state_from_wsb_coords(
    r0: f64,
    rdot0: f64,
    theta0: f64,
    e0: f64,
    root: EllipseRoot,
    params: &SystemParams,
) -> Result<(RotatingState, f64, OsculatingElements)> {
    if !(r0 > params.r_min) {
        return Err(Error::InvalidParams(format!(
            "r0 = {r0} must exceed the collision guard {}",
            params.r_min
        )));
    }
    if !(0.0..1.0).contains(&e0) {
        return Err(Error::InvalidParams(format!("e0 = {e0} outside [0, 1)")));
    }
    let gm = params.gm1();

    // p^2/r0^2 + p*(rdot0^2/gm - 2/r0) + (1 - e0^2) = 0
    let qa = 1.0 / (r0 * r0);
    let qb = rdot0 * rdot0 / gm - 2.0 / r0;
    let qc = 1.0 - e0 * e0;
    let disc = qb * qb - 4.0 * qa * qc;
    // Rounding floor for the discriminant; below it the roots coincide to
    // machine precision and the cancellation-free double root is exact.
    let disc_floor = 16.0 * f64::EPSILON * (qb * qb + (4.0 * qa * qc).abs());
    if disc < -disc_floor {
        return Err(Error::NoAdmissibleEllipse { r0, rdot0, e0 });
    }
    let mut roots: Vec<f64> = Vec::with_capacity(2);
    if disc <= disc_floor {
        let p_double = -qb / (2.0 * qa);
        if p_double > 0.0 {
            roots.push(p_double);
        }
    } else {
        let sqrt_disc = disc.sqrt();
        // Numerically stable quadratic roots.
        let q = if qb >= 0.0 {
            -0.5 * (qb + sqrt_disc)
        } else {
            -0.5 * (qb - sqrt_disc)
        };
        let p_first = q / qa;
        if p_first > 0.0 {
            roots.push(p_first);
        }
        if q != 0.0 {
            let p_second = qc / q;
            if p_second > 0.0 && (p_second - p_first).abs() > 1e-14 * p_first.abs().max(1.0) {
                roots.push(p_second);
            }
        }
    }
    if roots.is_empty() {
        return Err(Error::NoAdmissibleEllipse { r0, rdot0, e0 });
    }

    // Section condition: rotating-frame rate tau_dot - 1 must be positive.
    let rotating_rate = |p: f64| (gm * p).sqrt() / (r0 * r0) - 1.0;
    roots.retain(|&p| rotating_rate(p) > 0.0);
    if roots.is_empty() {
        return Err(Error::NonPositiveSectionRate { r0 });
    }
    roots.sort_by(|a, b| a.partial_cmp(b).expect("finite roots"));

    // Larger p gives larger cos(tau), hence smaller |tau|.
    let p = match (roots.len(), root) {
        (1, _) => roots[0],
        (_, EllipseRoot::NearPeriapsis) => roots[roots.len() - 1],
        (_, EllipseRoot::FarFromPeriapsis) => roots[0],
        (_, EllipseRoot::Strict) => {
            return Err(Error::AmbiguousEllipse {
                p_low: roots[0],
                p_high: roots[roots.len() - 1],
            })
        }
    };

    let thetadot = rotating_rate(p);
    let polar = PolarState {
        r: r0,
        rdot: rdot0,
        theta: normalize_angle(theta0),
        thetadot,
    };
    let state = cartesian_from_polar(&polar, params)?;
    let energy = hamiltonian(&state, params);

    let a = p / (1.0 - e0 * e0);
    let (tau, phi) = if e0 < CIRCULAR_FLOOR {
        (0.0, polar.theta)
    } else {
        let cos_tau = ((p / r0 - 1.0) / e0).clamp(-1.0, 1.0);
        let sin_tau = rdot0 * (p / gm).sqrt() / e0;
        let tau = normalize_angle(sin_tau.atan2(cos_tau));
        (tau, normalize_angle(polar.theta - tau))
    };
    Ok((state, energy, OsculatingElements { a, e: e0, phi, tau }))
}

/// Full state on the section ray `theta = theta0` from `(r, rdot)` and the
/// energy, taking the positive-rate branch for the angular velocity.
pub fn state_on_section(
    r: f64,
    rdot: f64,
    theta0: f64,
    energy: f64,
    params: &SystemParams,
) -> Result<RotatingState> {
    let (sin_t, cos_t) = theta0.sin_cos();
    let x = params.mu + r * cos_t;
    let y = r * sin_t;
    let omega = effective_potential(x, y, params)?;
    let vt2 = 2.0 * (energy + omega) - rdot * rdot;
    if vt2 <= 0.0 {
        return Err(Error::NotOnEnergySurface { vt2 });
    }
    let thetadot = vt2.sqrt() / r;
    cartesian_from_polar(
        &PolarState {
            r,
            rdot,
            theta: normalize_angle(theta0),
            thetadot,
        },
        params,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn earth_moon() -> SystemParams {
        SystemParams::new(0.0121505856).unwrap()
    }

    #[test]
    fn potential_two_body_limit() {
        // mu -> 0 with the test point on the unit circle: 1/2 + 1/1 = 3/2.
        let params = SystemParams {
            mu: 0.0,
            r_min: 1e-4,
        };
        let w = omega_unchecked(1.0, 0.0, &params);
        assert!((w - 1.5).abs() < 1e-15, "omega = {w}");
    }

    #[test]
    fn potential_symmetric_masses_at_origin() {
        let params = SystemParams::new(0.5).unwrap();
        let w = effective_potential(0.0, 0.0, &params).unwrap();
        assert!((w - 2.125).abs() < 1e-15, "omega = {w}");
    }

    #[test]
    fn potential_even_in_y() {
        let params = earth_moon();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x: f64 = rng.gen_range(-1.5..1.5);
            let y: f64 = rng.gen_range(0.05..1.5);
            let a = omega_unchecked(x, y, &params);
            let b = omega_unchecked(x, -y, &params);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn potential_singularity_rejected() {
        let params = earth_moon();
        assert!(matches!(
            effective_potential(params.mu, 0.0, &params),
            Err(Error::Singularity { primary: 1, .. })
        ));
    }

    #[test]
    fn vector_field_equilibrium_ring_at_zero_mu() {
        // In the mu = 0 limit a co-rotating circular orbit is a relative
        // equilibrium of the rotating frame.
        let params = SystemParams {
            mu: 0.0,
            r_min: 1e-4,
        };
        let s = RotatingState::new(1.0, 0.0, 0.0, 0.0);
        let f = vector_field(&s, &params).unwrap();
        for v in f {
            assert!(v.abs() < 1e-15, "f = {f:?}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let params = earth_moon();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for _ in 0..5 {
            let x: f64 = rng.gen_range(-1.4..1.4);
            let y: f64 = rng.gen_range(0.2..1.4);
            let g = omega_gradient(x, y, &params).unwrap();
            let fd_x =
                (omega_unchecked(x + h, y, &params) - omega_unchecked(x - h, y, &params)) / (2.0 * h);
            let fd_y =
                (omega_unchecked(x, y + h, &params) - omega_unchecked(x, y - h, &params)) / (2.0 * h);
            assert!((g[0] - fd_x).abs() < 1e-6, "dx: {} vs {}", g[0], fd_x);
            assert!((g[1] - fd_y).abs() < 1e-6, "dy: {} vs {}", g[1], fd_y);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_and_is_traceless() {
        let params = earth_moon();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-7;
        for _ in 0..5 {
            let s = RotatingState::new(
                rng.gen_range(-1.3..1.3),
                rng.gen_range(0.2..1.3),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let j = jacobian(&s, &params).unwrap();
            let trace: f64 = (0..4).map(|i| j[i][i]).sum();
            assert!(trace.abs() < 1e-14);

            let mut arr = s.to_array();
            for col in 0..4 {
                let keep = arr[col];
                arr[col] = keep + h;
                let fp = vector_field_unchecked(&RotatingState::from_array(&arr), &params);
                arr[col] = keep - h;
                let fm = vector_field_unchecked(&RotatingState::from_array(&arr), &params);
                arr[col] = keep;
                for row in 0..4 {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    assert!(
                        (j[row][col] - fd).abs() < 1e-6,
                        "J[{row}][{col}] = {} vs fd {}",
                        j[row][col],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn hamiltonian_zero_velocity_relation() {
        let params = earth_moon();
        let s = RotatingState::new(0.3, 0.4, 0.0, 0.0);
        let h = hamiltonian(&s, &params);
        let w = omega_unchecked(0.3, 0.4, &params);
        assert!((h + w).abs() < 1e-15);
    }

    #[test]
    fn polar_axis_aligned_case() {
        let params = earth_moon();
        let p = PolarState {
            r: 0.5,
            rdot: 0.0,
            theta: FRAC_PI_2,
            thetadot: 0.0,
        };
        let s = cartesian_from_polar(&p, &params).unwrap();
        assert!((s.x - params.mu).abs() < 1e-15);
        assert!((s.y - 0.5).abs() < 1e-15);
        assert!(s.vx.abs() < 1e-15 && s.vy.abs() < 1e-15);
    }

    #[test]
    fn polar_roundtrip_on_random_states() {
        let params = earth_moon();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let s = RotatingState::new(
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if s.r1(&params) < 0.05 {
                continue;
            }
            let p = polar_from_cartesian(&s, &params).unwrap();
            let back = cartesian_from_polar(&p, &params).unwrap();
            assert!(s.max_abs_diff(&back) < 1e-13, "{s:?} vs {back:?}");
        }
    }

    #[test]
    fn elements_circular_two_body_state() {
        // mu = 0; a circular inertial orbit of radius r has rotating-frame
        // tangential speed sqrt(1/r) - r.
        let params = SystemParams {
            mu: 0.0,
            r_min: 1e-4,
        };
        let r: f64 = 0.7;
        let v_rot = (1.0 / r).sqrt() - r;
        let s = RotatingState::new(r, 0.0, 0.0, v_rot);
        let el = elements_from_state(&s, &params).unwrap();
        assert!(el.e < 1e-12, "e = {}", el.e);
        assert!((el.a - r).abs() < 1e-12);
    }

    #[test]
    fn elements_angle_sum_identity() {
        let params = earth_moon();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        while checked < 50 {
            let s = RotatingState::new(
                params.mu + rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.9..0.9),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
            );
            if s.r1(&params) < 0.1 {
                continue;
            }
            let Ok(el) = elements_from_state(&s, &params) else {
                continue;
            };
            if el.e < 1e-9 {
                continue;
            }
            let theta = normalize_angle(s.angle_about_p1(&params));
            let sum = normalize_angle(el.phi + el.tau);
            let diff = (sum - theta + PI).rem_euclid(TAU) - PI;
            assert!(diff.abs() < 1e-10, "phi+tau = {sum}, theta = {theta}");
            checked += 1;
        }
    }

    #[test]
    fn wsb_coords_circular_special_case() {
        let params = earth_moon();
        let r0 = 0.6;
        let (state, _h, el) =
            state_from_wsb_coords(r0, 0.0, 0.3, 0.0, EllipseRoot::NearPeriapsis, &params).unwrap();
        assert!((el.a - r0).abs() < 1e-12);
        assert_eq!(el.tau, 0.0);
        let polar = polar_from_cartesian(&state, &params).unwrap();
        let expected_rate = (params.gm1() / (r0 * r0 * r0)).sqrt() - 1.0;
        assert!((polar.thetadot - expected_rate).abs() < 1e-12);
    }

    #[test]
    fn wsb_coords_roundtrip_through_elements() {
        let params = earth_moon();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut checked = 0;
        while checked < 100 {
            let r0: f64 = rng.gen_range(0.3..0.8);
            let rdot0: f64 = rng.gen_range(-0.2..0.2);
            let e0: f64 = rng.gen_range(0.0..0.9);
            let theta0: f64 = rng.gen_range(0.0..TAU);
            let Ok((state, _h, el)) = state_from_wsb_coords(
                r0,
                rdot0,
                theta0,
                e0,
                EllipseRoot::NearPeriapsis,
                &params,
            ) else {
                continue;
            };
            let back = elements_from_state(&state, &params).unwrap();
            assert!((back.e - e0).abs() < 1e-10, "e: {} vs {}", back.e, e0);
            assert!(
                (back.a - el.a).abs() < 1e-10 * el.a.max(1.0),
                "a: {} vs {}",
                back.a,
                el.a
            );
            let polar = polar_from_cartesian(&state, &params).unwrap();
            assert!((polar.r - r0).abs() < 1e-12);
            assert!((polar.rdot - rdot0).abs() < 1e-12);
            assert!(polar.thetadot > 0.0);
            checked += 1;
        }
    }

    #[test]
    fn wsb_coords_negative_discriminant_rejected() {
        let params = earth_moon();
        // Large radial velocity at e0 = 0 admits no osculating ellipse.
        let err = state_from_wsb_coords(0.5, 1.0, 0.0, 0.0, EllipseRoot::NearPeriapsis, &params)
            .unwrap_err();
        assert!(matches!(err, Error::NoAdmissibleEllipse { .. }), "{err}");
    }

    #[test]
    fn wsb_coords_strict_selector_surfaces_ambiguity() {
        let params = earth_moon();
        // Moderate eccentricity with rdot = 0 yields two admissible ellipses
        // (periapsis start and apoapsis start).
        let err =
            state_from_wsb_coords(0.5, 0.0, 0.0, 0.4, EllipseRoot::Strict, &params).unwrap_err();
        assert!(matches!(err, Error::AmbiguousEllipse { .. }), "{err}");
        let near =
            state_from_wsb_coords(0.5, 0.0, 0.0, 0.4, EllipseRoot::NearPeriapsis, &params).unwrap();
        let far = state_from_wsb_coords(0.5, 0.0, 0.0, 0.4, EllipseRoot::FarFromPeriapsis, &params)
            .unwrap();
        assert!(near.2.a > far.2.a);
    }

    #[test]
    fn section_state_matches_energy() {
        let params = earth_moon();
        let h_target = -1.58;
        let s = state_on_section(0.6, 0.05, 0.3, h_target, &params).unwrap();
        assert!((hamiltonian(&s, &params) - h_target).abs() < 1e-13);
        let polar = polar_from_cartesian(&s, &params).unwrap();
        assert!(polar.thetadot > 0.0);
    }
}
