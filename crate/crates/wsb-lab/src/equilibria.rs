//! Lagrange points, Euler's quintic for the L1 gap, the energy ordering of
//! the equilibria, and the saddle-center spectrum at L1.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    hamiltonian, omega_gradient_unchecked, omega_hessian, RotatingState, SystemParams,
};
use crate::error::{Error, Result};

/// The five equilibria, their energies, and the positive quintic root.
///
/// Naming follows the collinear convention in which L1 sits between the
/// primaries (and hence between L2 and L3): L2 lies beyond the lighter
/// primary P2, L3 beyond the heavier primary P1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LagrangePointSet {
    pub l1: [f64; 2],
    pub l2: [f64; 2],
    pub l3: [f64; 2],
    pub l4: [f64; 2],
    pub l5: [f64; 2],
    /// Energies H(L1)..H(L5), in point order.
    pub energies: [f64; 5],
    /// Positive root of Euler's quintic: the distance from L1 to P2.
    pub x_plus: f64,
}

impl LagrangePointSet {
    pub fn positions(&self) -> [[f64; 2]; 5] {
        [self.l1, self.l2, self.l3, self.l4, self.l5]
    }

    pub fn h_l1(&self) -> f64 {
        self.energies[0]
    }

    pub fn h_l2(&self) -> f64 {
        self.energies[1]
    }
}

/// Linearization of the flow at L1: one real hyperbolic exponent pair
/// `{+lambda, -lambda}` and one center frequency pair `{+i nu, -i nu}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct L1Spectrum {
    pub lambda: f64,
    pub nu: f64,
}

/// Euler's quintic whose positive root is the L1-to-P2 distance.
#[inline]
pub fn euler_quintic(x: f64, mu: f64) -> f64 {
    ((((x - (3.0 - mu)) * x + (3.0 - 2.0 * mu)) * x - mu) * x + 2.0 * mu) * x - mu
}

#[inline]
fn euler_quintic_derivative(x: f64, mu: f64) -> f64 {
    (((5.0 * x - 4.0 * (3.0 - mu)) * x + 3.0 * (3.0 - 2.0 * mu)) * x - 2.0 * mu) * x + 2.0 * mu
}

/// Positive root of Euler's quintic by safeguarded Newton iteration with a
/// bisection bracket on (0, 1).
pub fn quintic_root(params: &SystemParams) -> f64 {
    let mu = params.mu;
    let mut lo = 0.0;
    let mut hi = 1.0;
    // f(0) = -mu < 0, f(1) = 1 - mu > 0 for mu in (0, 1/2].
    let mut x = (mu / 3.0).cbrt().clamp(1e-8, 0.9);
    for _ in 0..200 {
        let f = euler_quintic(x, mu);
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let df = euler_quintic_derivative(x, mu);
        let newton = if df != 0.0 { x - f / df } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= f64::EPSILON * x.abs() {
            x = next;
            break;
        }
        x = next;
    }
    x
}

/// Root of d(omega)/dx on the x-axis inside a sign-changing bracket.
fn collinear_root(params: &SystemParams, mut lo: f64, mut hi: f64) -> f64 {
    let g = |x: f64| omega_gradient_unchecked(x, 0.0, params)[0];
    let mut flo = g(lo);
    debug_assert!(flo * g(hi) < 0.0, "collinear bracket does not straddle root");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = g(mid);
        if fm == 0.0 || (hi - lo) < 1e-16 * mid.abs().max(1.0) {
            return mid;
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    0.5 * (lo + hi)
}

/// Locate all five equilibria and evaluate their energies.
pub fn lagrange_points(params: &SystemParams) -> Result<LagrangePointSet> {
    let mu = params.mu;
    let x_plus = quintic_root(params);

    // L1 between the primaries, at distance x_plus from P2.
    let l1 = [-1.0 + mu + x_plus, 0.0];

    // L2 beyond the lighter primary: gradient blows up positive at P2- and is
    // negative far out.
    let l2_x = collinear_root(params, -2.5, -1.0 + mu - 1e-9);
    // L3 beyond the heavier primary.
    let l3_x = collinear_root(params, mu + 1e-9, 2.5);
    let l2 = [l2_x, 0.0];
    let l3 = [l3_x, 0.0];

    let l4 = [mu - 0.5, 0.5 * 3.0_f64.sqrt()];
    let l5 = [mu - 0.5, -0.5 * 3.0_f64.sqrt()];

    let energy_at = |p: [f64; 2]| hamiltonian(&RotatingState::new(p[0], p[1], 0.0, 0.0), params);
    let energies = [
        energy_at(l1),
        energy_at(l2),
        energy_at(l3),
        energy_at(l4),
        energy_at(l5),
    ];

    if !(l1[0] > -1.0 + mu && l1[0] < mu) {
        return Err(Error::InvalidParams(format!(
            "L1 at x = {} not between the primaries",
            l1[0]
        )));
    }

    Ok(LagrangePointSet {
        l1,
        l2,
        l3,
        l4,
        l5,
        energies,
        x_plus,
    })
}

/// Saddle-center spectrum of the linearization at L1.
///
/// The characteristic polynomial of the 4x4 Jacobian on the axis is
/// `s^2 + (4 - oxx - oyy) s + oxx*oyy = 0` in `s = lambda^2`; the saddle
/// branch is the positive root, the center branch the negative one.
pub fn l1_spectrum(params: &SystemParams) -> Result<L1Spectrum> {
    let points = lagrange_points(params)?;
    let [oxx, _oxy, oyy] = omega_hessian(points.l1[0], points.l1[1], params);
    let p = 4.0 - oxx - oyy;
    let q = oxx * oyy;
    if q >= 0.0 {
        return Err(Error::SpectrumMismatch(format!(
            "omega_xx * omega_yy = {q} is not negative at L1"
        )));
    }
    let disc = (p * p - 4.0 * q).sqrt();
    let s_plus = 0.5 * (-p + disc);
    let s_minus = 0.5 * (-p - disc);
    if !(s_plus > 0.0 && s_minus < 0.0) {
        return Err(Error::SpectrumMismatch(format!(
            "lambda^2 roots {s_plus}, {s_minus} do not split into saddle and center"
        )));
    }
    Ok(L1Spectrum {
        lambda: s_plus.sqrt(),
        nu: (-s_minus).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::vector_field;

    fn earth_moon() -> SystemParams {
        SystemParams::new(0.0121505856).unwrap()
    }

    /// Independent oracle: plain bisection on the quintic, written against
    /// the displayed polynomial rather than the Horner form used by the
    /// implementation.
    fn bisection_oracle(mu: f64) -> f64 {
        let f = |x: f64| {
            x.powi(5) - (3.0 - mu) * x.powi(4) + (3.0 - 2.0 * mu) * x.powi(3) - mu * x * x
                + 2.0 * mu * x
                - mu
        };
        let (mut lo, mut hi) = (1e-6, 0.5_f64.max(0.99));
        // Widen the lower end if needed for very small mu.
        while f(lo) > 0.0 {
            lo *= 0.1;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quintic_root_symmetric_masses() {
        let params = SystemParams::new(0.5).unwrap();
        let x = quintic_root(&params);
        assert!((x - 0.5).abs() < 1e-14, "x_plus = {x}");
        assert!(euler_quintic(0.5, 0.5).abs() < 1e-16);
    }

    #[test]
    fn quintic_root_shrinks_with_mu() {
        let roots: Vec<f64> = [1e-9, 1e-6, 1e-3]
            .iter()
            .map(|&mu| quintic_root(&SystemParams { mu, r_min: 1e-4 }))
            .collect();
        assert!(roots[0] < roots[1] && roots[1] < roots[2], "{roots:?}");
    }

    #[test]
    fn quintic_root_matches_bisection_oracle() {
        let params = earth_moon();
        let x = quintic_root(&params);
        let oracle = bisection_oracle(params.mu);
        assert!((x - oracle).abs() < 1e-13, "{x} vs oracle {oracle}");
    }

    #[test]
    fn quintic_residual_across_mass_ratios() {
        for k in 0..50 {
            let mu = 10.0_f64.powf(-6.0 + 5.7 * (k as f64) / 49.0).min(0.5);
            let params = SystemParams { mu, r_min: 1e-4 };
            let x = quintic_root(&params);
            assert!(
                euler_quintic(x, mu).abs() < 1e-13,
                "mu = {mu}: residual {}",
                euler_quintic(x, mu)
            );
        }
    }

    #[test]
    fn equilateral_points_by_construction() {
        let params = earth_moon();
        let pts = lagrange_points(&params).unwrap();
        assert_eq!(pts.l4[0], params.mu - 0.5);
        assert_eq!(pts.l4[1], 0.5 * 3.0_f64.sqrt());
        assert_eq!(pts.l5[1], -pts.l4[1]);
    }

    #[test]
    fn vector_field_vanishes_at_all_points() {
        let params = earth_moon();
        let pts = lagrange_points(&params).unwrap();
        for p in pts.positions() {
            let f = vector_field(&RotatingState::new(p[0], p[1], 0.0, 0.0), &params).unwrap();
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < 1e-10, "residual {norm} at {p:?}");
        }
    }

    #[test]
    fn energy_ordering_chain() {
        for mu in [1e-3, 1e-2, 0.0121505856] {
            let params = SystemParams::new(mu).unwrap();
            let e = lagrange_points(&params).unwrap().energies;
            assert!((e[3] - e[4]).abs() < 1e-14, "H(L4) != H(L5) at mu = {mu}");
            assert!(
                e[3] > e[2] && e[2] > e[1] && e[1] > e[0],
                "ordering violated at mu = {mu}: {e:?}"
            );
        }
    }

    #[test]
    fn l1_between_primaries() {
        for mu in [1e-4, 1e-2, 0.3, 0.5] {
            let params = SystemParams::new(mu).unwrap();
            let pts = lagrange_points(&params).unwrap();
            assert!(pts.l1[0] > params.p2()[0] && pts.l1[0] < params.p1()[0]);
        }
    }

    #[test]
    fn spectrum_satisfies_characteristic_polynomial() {
        let params = earth_moon();
        let pts = lagrange_points(&params).unwrap();
        let [oxx, _oxy, oyy] = omega_hessian(pts.l1[0], pts.l1[1], &params);
        let spec = l1_spectrum(&params).unwrap();
        assert!(spec.lambda > 0.0 && spec.nu > 0.0);
        // chi(s) = s^4 + (4 - oxx - oyy) s^2 + oxx oyy at s = lambda and s = i nu.
        let chi_real = |s: f64| s.powi(4) + (4.0 - oxx - oyy) * s * s + oxx * oyy;
        // For s = i nu: s^2 = -nu^2, s^4 = nu^4.
        let chi_imag = spec.nu.powi(4) - (4.0 - oxx - oyy) * spec.nu * spec.nu + oxx * oyy;
        assert!(chi_real(spec.lambda).abs() < 1e-10);
        assert!(chi_real(-spec.lambda).abs() < 1e-10, "negation symmetry");
        assert!(chi_imag.abs() < 1e-10);
    }
}
