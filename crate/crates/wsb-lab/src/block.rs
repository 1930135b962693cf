//! Isolating-block geometry around L1: Hill-region membership, boundary
//! classification into entry/exit/tangency sets, numerical validation of the
//! block conditions, transit classification, and the section-geometry
//! constants (D1, y_b, theta1) used by the weak-stability definition.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dynamics::{omega_gradient_unchecked, omega_unchecked, RotatingState, SystemParams};
use crate::equilibria::lagrange_points;
use crate::error::{Error, Result};
use crate::lyapunov::EnergyBand;
use crate::propagation::{
    propagate_lenient, EventAction, EventDirection, EventKind, EventSpec, PropagationOptions,
    Termination,
};

/// Slab `a <= x <= b` around L1 on an energy surface.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BlockSpec {
    pub a: f64,
    pub b: f64,
    /// Set by [`validate_block`]; geometry constants require it.
    pub validated: bool,
}

impl BlockSpec {
    pub fn new(a: f64, b: f64) -> Self {
        Self {
            a,
            b,
            validated: false,
        }
    }
}

/// Default slab: half-width 0.4 x_plus on both sides of L1. The validator,
/// not this formula, decides whether the slab is isolating.
pub fn default_block(params: &SystemParams) -> Result<BlockSpec> {
    let points = lagrange_points(params)?;
    let d = 0.4 * points.x_plus;
    Ok(BlockSpec::new(points.l1[0] - d, points.l1[0] + d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HillMembership {
    Inside,
    Outside,
    Boundary,
}

/// Membership of a configuration-space point in the Hill region of energy H:
/// inside iff the kinetic energy 2(H + omega) is positive.
pub fn hill_membership(x: f64, y: f64, h: f64, params: &SystemParams) -> HillMembership {
    let v2 = omega_unchecked(x, y, params) + h;
    if v2.abs() < 1e-12 {
        HillMembership::Boundary
    } else if v2 > 0.0 {
        HillMembership::Inside
    } else {
        HillMembership::Outside
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockSide {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryClass {
    Exit,
    Entry,
    Tangency,
}

const BOUNDARY_POSITION_TOL: f64 = 1e-10;
const TANGENCY_VELOCITY_TOL: f64 = 1e-10;

/// Classify a state on the block boundary by side and the sign of vx:
/// exit at x=a iff vx < 0, exit at x=b iff vx > 0, entry with the opposite
/// signs, tangency when vx vanishes.
pub fn classify_boundary_point(
    s: &RotatingState,
    spec: &BlockSpec,
) -> Result<(BlockSide, BoundaryClass)> {
    let side = if (s.x - spec.a).abs() < BOUNDARY_POSITION_TOL {
        BlockSide::A
    } else if (s.x - spec.b).abs() < BOUNDARY_POSITION_TOL {
        BlockSide::B
    } else {
        return Err(Error::NotOnBoundary {
            x: s.x,
            a: spec.a,
            b: spec.b,
        });
    };
    let class = if s.vx.abs() < TANGENCY_VELOCITY_TOL {
        BoundaryClass::Tangency
    } else {
        match side {
            BlockSide::A => {
                if s.vx < 0.0 {
                    BoundaryClass::Exit
                } else {
                    BoundaryClass::Entry
                }
            }
            BlockSide::B => {
                if s.vx > 0.0 {
                    BoundaryClass::Exit
                } else {
                    BoundaryClass::Entry
                }
            }
        }
    };
    Ok((side, class))
}

/// Half-height of the dynamical-channel slice on the vertical line
/// x = plane: the y >= 0 extent of the Hill-region component containing the
/// axis. The channel slice is what lifts to the block boundary sphere;
/// disconnected strips of the unbounded Hill component at large |y| are
/// unreachable from the channel and are ignored. Returns None when the axis
/// point itself is forbidden.
fn channel_half_height(plane: f64, h: f64, params: &SystemParams) -> Option<f64> {
    let v2 = |y: f64| omega_unchecked(plane, y, params) + h;
    if v2(0.0) <= 0.0 {
        return None;
    }
    let mut hi = 1e-4;
    while v2(hi) > 0.0 {
        hi *= 1.5;
        if hi > 2.0 {
            return None;
        }
    }
    Some(bisect(&v2, hi / 1.5, hi))
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || (hi - lo) < 1e-15 {
            return mid;
        }
        if (flo > 0.0) == (fm > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Validate the isolating-block conditions at energy `h` by sampling the
/// tangency set on both planes: every tangency state on x=a must accelerate
/// out of the slab (xddot < 0) and every one on x=b likewise (xddot > 0).
///
/// The kinetic term grows with `h`, so a spec validated at the top of an
/// energy band is isolating throughout the band.
pub fn validate_block(
    spec: &BlockSpec,
    h: f64,
    params: &SystemParams,
    n_samples: usize,
) -> Result<BlockSpec> {
    let points = lagrange_points(params)?;
    if !(spec.a < points.l1[0] && points.l1[0] < spec.b) {
        return Err(Error::InvalidParams(format!(
            "block [{}, {}] does not straddle x_L1 = {}",
            spec.a, spec.b, points.l1[0]
        )));
    }
    let n = n_samples.max(8);
    for (plane, want_negative) in [(spec.a, true), (spec.b, false)] {
        let Some(y_edge) = channel_half_height(plane, h, params) else {
            return Err(Error::NotIsolating {
                a: spec.a,
                b: spec.b,
                h,
                reason: format!("channel slice on x = {plane} is empty"),
            });
        };
        // Sample y >= 0 with both vy signs; the y < 0 half mirrors exactly.
        for k in 0..=n {
            let y = y_edge * k as f64 / n as f64;
            let v2 = 2.0 * (omega_unchecked(plane, y, params) + h).max(0.0);
            let gx = omega_gradient_unchecked(plane, y, params)[0];
            for vy in [v2.sqrt(), -v2.sqrt()] {
                let xddot = 2.0 * vy + gx;
                let ok = if want_negative {
                    xddot < 0.0
                } else {
                    xddot > 0.0
                };
                if !ok {
                    return Err(Error::NotIsolating {
                        a: spec.a,
                        b: spec.b,
                        h,
                        reason: format!(
                            "tangency sample (x, y, vy) = ({plane}, {y:.6}, {vy:.6}) has xddot = {xddot:.6}"
                        ),
                    });
                }
            }
        }
    }
    Ok(BlockSpec {
        a: spec.a,
        b: spec.b,
        validated: true,
    })
}

/// Section-geometry constants derived from a validated block and the energy
/// cap H*: the critical distance D1 = mu - a, the half-height y_b of the
/// Hill region on x = b at H*, and the blocked angular half-width theta1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SectionGeometry {
    pub block: BlockSpec,
    pub h_l1: f64,
    pub h_star: f64,
    pub d1: f64,
    pub y_b: f64,
    pub theta1: f64,
}

impl SectionGeometry {
    pub fn band(&self) -> EnergyBand {
        EnergyBand {
            h_low: self.h_l1,
            h_high: self.h_star,
        }
    }

    /// Whether a section angle avoids the blocked sector around pi, i.e.
    /// lies in (-pi + theta1, pi - theta1) after principal-value reduction.
    pub fn theta0_admissible(&self, theta0: f64) -> bool {
        let wrapped = (theta0 + PI).rem_euclid(2.0 * PI) - PI;
        wrapped.abs() < PI - self.theta1
    }
}

pub fn section_geometry(
    spec: &BlockSpec,
    h_star: f64,
    params: &SystemParams,
) -> Result<SectionGeometry> {
    if !spec.validated {
        return Err(Error::InvalidParams(
            "section geometry requires a validated block".into(),
        ));
    }
    let points = lagrange_points(params)?;
    if !(h_star > points.h_l1() && h_star < points.h_l2()) {
        return Err(Error::OutOfRange {
            requested: h_star,
            low: points.h_l1(),
            high: points.h_l2(),
        });
    }
    // Hill half-height on x = b at the top of the band; the Hill region
    // grows with H so the supremum over the band is attained at H*.
    let v2 = |y: f64| omega_unchecked(spec.b, y, params) + h_star;
    if v2(0.0) <= 0.0 {
        return Err(Error::NotIsolating {
            a: spec.a,
            b: spec.b,
            h: h_star,
            reason: "x = b lies outside the Hill region on the axis".into(),
        });
    }
    let mut hi = 1e-3;
    while v2(hi) > 0.0 && hi < 2.0 {
        hi *= 1.5;
    }
    if v2(hi) > 0.0 {
        return Err(Error::NotIsolating {
            a: spec.a,
            b: spec.b,
            h: h_star,
            reason: "Hill region on x = b does not close in y".into(),
        });
    }
    let y_b = bisect(&v2, hi / 1.5, hi);
    let d1 = params.mu - spec.a;
    let theta1 = (y_b / (params.mu - spec.b)).atan();
    Ok(SectionGeometry {
        block: *spec,
        h_l1: points.h_l1(),
        h_star,
        d1,
        y_b,
        theta1,
    })
}

/// Build the default configuration: default block, H* at the middle of
/// (H(L1), H(L2)), tightened geometrically whenever block validation fails
/// at the top of the band.
pub fn standard_configuration(
    params: &SystemParams,
    block_override: Option<(f64, f64)>,
    h_star_override: Option<f64>,
) -> Result<SectionGeometry> {
    let points = lagrange_points(params)?;
    let spec = match block_override {
        Some((a, b)) => BlockSpec::new(a, b),
        None => default_block(params)?,
    };
    if let Some(h_star) = h_star_override {
        let validated = validate_block(&spec, h_star, params, 200)?;
        return section_geometry(&validated, h_star, params);
    }
    let mut h_star = points.h_l1() + 0.5 * (points.h_l2() - points.h_l1());
    let mut last_err = None;
    for _ in 0..12 {
        match validate_block(&spec, h_star, params, 200) {
            Ok(validated) => return section_geometry(&validated, h_star, params),
            Err(e) => {
                last_err = Some(e);
                h_star = points.h_l1() + 0.8 * (h_star - points.h_l1());
            }
        }
    }
    Err(last_err.expect("tightening loop ran"))
}

#[derive(Debug, Clone)]
pub enum TransitOutcome {
    /// Entered at x=b, left through x=a into the P2 region.
    Transit {
        entry: RotatingState,
        exit_t: f64,
        exit: RotatingState,
    },
    /// Entered at x=b and came back out through x=b.
    Bounce {
        entry: RotatingState,
        exit_t: f64,
        exit: RotatingState,
    },
    /// Still inside when the time budget ran out.
    Dwell { entry: RotatingState },
}

/// Follow a state entering the block at x=b until it leaves through either
/// plane or the budget runs out.
pub fn block_transit(
    s_entry: &RotatingState,
    spec: &BlockSpec,
    params: &SystemParams,
    t_max: f64,
) -> Result<TransitOutcome> {
    let (side, class) = classify_boundary_point(s_entry, spec)?;
    if !(side == BlockSide::B && class == BoundaryClass::Entry) {
        return Err(Error::InvalidParams(format!(
            "block_transit requires an entry state on x = b, got {side:?}/{class:?}"
        )));
    }
    let events = [
        EventSpec::new(
            EventKind::XPlane { plane: spec.a },
            EventDirection::Any,
            EventAction::Terminate,
        ),
        EventSpec::new(
            EventKind::XPlane { plane: spec.b },
            EventDirection::Any,
            EventAction::Terminate,
        ),
    ];
    let traj = propagate_lenient(s_entry, t_max, &events, params, &PropagationOptions::default())?;
    match traj.termination {
        Termination::Event { event: 0 } => Ok(TransitOutcome::Transit {
            entry: *s_entry,
            exit_t: traj.final_time(),
            exit: traj.final_state(),
        }),
        Termination::Event { event: 1 } => Ok(TransitOutcome::Bounce {
            entry: *s_entry,
            exit_t: traj.final_time(),
            exit: traj.final_state(),
        }),
        Termination::Event { .. } => unreachable!("only two events registered"),
        Termination::TimeExhausted => Ok(TransitOutcome::Dwell { entry: *s_entry }),
        Termination::Collision { t, primary } => Err(Error::Collision {
            t,
            primary,
            distance: params.r_min,
        }),
    }
}

/// First-passage fate of a section state: does it transit the block into
/// the P2 region before completing one more prograde turn about P1?
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionFate {
    /// Crossed x = a (left the P1 region) before any further prograde turn.
    TransitFirst,
    /// Completed a prograde turn about P1 first.
    ReturnFirst,
    /// Neither within the time budget.
    Dwell,
}

pub fn section_fate(
    s0: &RotatingState,
    spec: &BlockSpec,
    params: &SystemParams,
    t_max: f64,
) -> Result<SectionFate> {
    let theta_init = s0.angle_about_p1(params);
    let events = [
        EventSpec::new(
            EventKind::ThetaLevel {
                level: theta_init + std::f64::consts::TAU,
            },
            EventDirection::Rising,
            EventAction::Terminate,
        ),
        EventSpec::new(
            EventKind::XPlane { plane: spec.a },
            EventDirection::Any,
            EventAction::Terminate,
        ),
    ];
    let traj = propagate_lenient(s0, t_max, &events, params, &PropagationOptions::default())?;
    Ok(match traj.termination {
        Termination::Event { event: 0 } => SectionFate::ReturnFirst,
        Termination::Event { event: 1 } => SectionFate::TransitFirst,
        Termination::Event { .. } => unreachable!("only two events registered"),
        _ => SectionFate::Dwell,
    })
}
