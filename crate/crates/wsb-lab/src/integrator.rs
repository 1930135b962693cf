//! Embedded Runge-Kutta-Fehlberg 7(8) stepper.
//!
//! A 13-stage pair with exact rational tableau entries, used with local
//! extrapolation (the 8th-order solution is propagated). The error estimate
//! is the classical `41/840 * h * (k0 + k10 - k11 - k12)` combination.
//!
//! Defaults are tuned for trajectory work at tolerances around 1e-12 where
//! the downstream bisection tolerances, not the integration error, dominate.

pub const STAGES: usize = 13;

const C: [f64; STAGES] = [
    0.0,
    2.0 / 27.0,
    1.0 / 9.0,
    1.0 / 6.0,
    5.0 / 12.0,
    1.0 / 2.0,
    5.0 / 6.0,
    1.0 / 6.0,
    2.0 / 3.0,
    1.0 / 3.0,
    1.0,
    0.0,
    1.0,
];

const A: [[f64; 12]; STAGES] = [
    [0.0; 12],
    [2.0 / 27.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 36.0, 1.0 / 12.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 24.0, 0.0, 1.0 / 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [5.0 / 12.0, 0.0, -25.0 / 16.0, 25.0 / 16.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 20.0, 0.0, 0.0, 1.0 / 4.0, 1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [
        -25.0 / 108.0,
        0.0,
        0.0,
        125.0 / 108.0,
        -65.0 / 27.0,
        125.0 / 54.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        31.0 / 300.0,
        0.0,
        0.0,
        0.0,
        61.0 / 225.0,
        -2.0 / 9.0,
        13.0 / 900.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        2.0,
        0.0,
        0.0,
        -53.0 / 6.0,
        704.0 / 45.0,
        -107.0 / 9.0,
        67.0 / 90.0,
        3.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        -91.0 / 108.0,
        0.0,
        0.0,
        23.0 / 108.0,
        -976.0 / 135.0,
        311.0 / 54.0,
        -19.0 / 60.0,
        17.0 / 6.0,
        -1.0 / 12.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        2383.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -301.0 / 82.0,
        2133.0 / 4100.0,
        45.0 / 82.0,
        45.0 / 164.0,
        18.0 / 41.0,
        0.0,
        0.0,
    ],
    [
        3.0 / 205.0,
        0.0,
        0.0,
        0.0,
        0.0,
        -6.0 / 41.0,
        -3.0 / 205.0,
        -3.0 / 41.0,
        3.0 / 41.0,
        6.0 / 41.0,
        0.0,
        0.0,
    ],
    [
        -1777.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -289.0 / 82.0,
        2193.0 / 4100.0,
        51.0 / 82.0,
        33.0 / 164.0,
        12.0 / 41.0,
        0.0,
        1.0,
    ],
];

/// Weights of the propagated 8th-order solution.
const B8: [f64; STAGES] = [
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    34.0 / 105.0,
    9.0 / 35.0,
    9.0 / 35.0,
    9.0 / 280.0,
    9.0 / 280.0,
    0.0,
    41.0 / 840.0,
    41.0 / 840.0,
];

/// Difference between the 8th- and 7th-order weights.
const B_ERR: [f64; STAGES] = [
    -41.0 / 840.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    -41.0 / 840.0,
    41.0 / 840.0,
    41.0 / 840.0,
];

/// Right-hand side of an autonomous-or-not ODE system of fixed dimension.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N], dydt: &mut [f64; N]);
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome<const N: usize> {
    pub y: [f64; N],
    pub t: f64,
    /// Scaled error estimate; the step is acceptable when <= 1.
    pub error: f64,
    /// Suggested magnitude for the next step.
    pub h_next: f64,
    pub accepted: bool,
}

/// Workspace-carrying RKF7(8) stepper.
#[derive(Debug, Clone)]
pub struct Rkf78<const N: usize> {
    pub tol: Tolerances,
    pub h_min: f64,
    pub h_max: f64,
    pub safety: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    k: [[f64; N]; STAGES],
}

impl<const N: usize> Rkf78<N> {
    pub fn new(tol: Tolerances) -> Self {
        Self {
            tol,
            h_min: 1e-14,
            h_max: 0.5,
            safety: 0.9,
            min_scale: 0.2,
            max_scale: 5.0,
            k: [[0.0; N]; STAGES],
        }
    }

    fn compute_stages<S: OdeSystem<N>>(&mut self, sys: &S, t: f64, y: &[f64; N], h: f64) {
        let mut y_stage = [0.0; N];
        sys.rhs(t, y, &mut self.k[0]);
        for i in 1..STAGES {
            for n in 0..N {
                let mut sum = 0.0;
                for j in 0..i {
                    sum += A[i][j] * self.k[j][n];
                }
                y_stage[n] = y[n] + h * sum;
            }
            sys.rhs(t + C[i] * h, &y_stage, &mut self.k[i]);
        }
    }

    fn solution(&self, y: &[f64; N], h: f64) -> [f64; N] {
        let mut out = *y;
        for n in 0..N {
            let mut sum = 0.0;
            for i in 0..STAGES {
                sum += B8[i] * self.k[i][n];
            }
            out[n] += h * sum;
        }
        out
    }

    fn scaled_error(&self, y_old: &[f64; N], y_new: &[f64; N], h: f64) -> f64 {
        let mut max_err: f64 = 0.0;
        for n in 0..N {
            let mut e = 0.0;
            for i in 0..STAGES {
                e += B_ERR[i] * self.k[i][n];
            }
            e *= h;
            let scale = self.tol.atol + self.tol.rtol * y_old[n].abs().max(y_new[n].abs());
            max_err = max_err.max((e / scale).abs());
        }
        max_err
    }

    /// One trial step of signed size `h`, with error estimate and step-size
    /// suggestion.
    pub fn step<S: OdeSystem<N>>(
        &mut self,
        sys: &S,
        t: f64,
        y: &[f64; N],
        h: f64,
    ) -> StepOutcome<N> {
        let h = h.signum() * h.abs().clamp(self.h_min, self.h_max);
        self.compute_stages(sys, t, y, h);
        let y_new = self.solution(y, h);
        let error = self.scaled_error(y, &y_new, h);
        let accepted = error <= 1.0 && y_new.iter().all(|v| v.is_finite());
        let factor = if error == 0.0 {
            self.max_scale
        } else {
            (self.safety * error.powf(-1.0 / 8.0)).clamp(self.min_scale, self.max_scale)
        };
        let h_next = (h.abs() * factor).clamp(self.h_min, self.h_max);
        StepOutcome {
            y: y_new,
            t: t + h,
            error,
            h_next,
            accepted,
        }
    }

    /// State at an interior offset `dt` of an accepted step starting at
    /// `(t0, y0)`: a single fixed substep of the same scheme, whose local
    /// error is bounded by the accepted step's error estimate.
    pub fn substate<S: OdeSystem<N>>(
        &mut self,
        sys: &S,
        t0: f64,
        y0: &[f64; N],
        dt: f64,
    ) -> [f64; N] {
        if dt == 0.0 {
            return *y0;
        }
        self.compute_stages(sys, t0, y0, dt);
        self.solution(y0, dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tableau_row_sums_match_nodes() {
        for i in 0..STAGES {
            let sum: f64 = A[i].iter().sum();
            assert!(
                (sum - C[i]).abs() < 1e-14,
                "row {i}: sum {sum} vs c {}",
                C[i]
            );
        }
        let w: f64 = B8.iter().sum();
        assert!((w - 1.0).abs() < 1e-15);
    }

    struct Harmonic;

    impl OdeSystem<2> for Harmonic {
        fn rhs(&self, _t: f64, y: &[f64; 2], dydt: &mut [f64; 2]) {
            dydt[0] = y[1];
            dydt[1] = -y[0];
        }
    }

    #[test]
    fn single_step_order_of_convergence() {
        // Local truncation error of the 8th-order solution is O(h^9); halving
        // the step should shrink the one-step error by roughly 2^9 = 512.
        let sys = Harmonic;
        let mut errors = Vec::new();
        for &h in &[0.8, 0.4, 0.2] {
            let mut solver = Rkf78::<2>::new(Tolerances {
                rtol: 1.0,
                atol: 1.0,
            });
            solver.h_max = 10.0;
            let out = solver.step(&sys, 0.0, &[1.0, 0.0], h);
            let exact = [h.cos(), -h.sin()];
            let err = (out.y[0] - exact[0]).abs().max((out.y[1] - exact[1]).abs());
            errors.push(err);
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                ratio > 120.0 && ratio < 1200.0,
                "order ratio {ratio} out of range (errors {errors:?})"
            );
        }
    }

    #[test]
    fn full_period_accuracy() {
        let sys = Harmonic;
        let mut solver = Rkf78::<2>::new(Tolerances::default());
        let mut t = 0.0;
        let mut y = [1.0, 0.0];
        let tf = std::f64::consts::TAU;
        let mut h = 0.1;
        while t < tf {
            if t + h > tf {
                h = tf - t;
            }
            let out = solver.step(&sys, t, &y, h);
            if out.accepted {
                t = out.t;
                y = out.y;
            }
            h = out.h_next;
        }
        assert!((y[0] - 1.0).abs() < 1e-11, "y = {y:?}");
        assert!(y[1].abs() < 1e-11, "y = {y:?}");
    }

    #[test]
    fn substate_consistency_with_full_step() {
        let sys = Harmonic;
        let mut solver = Rkf78::<2>::new(Tolerances::default());
        let y0 = [1.0, 0.0];
        let h = 0.01;
        let full = solver.step(&sys, 0.0, &y0, h);
        assert!(full.accepted, "error = {}", full.error);
        let sub = solver.substate(&sys, 0.0, &y0, h);
        assert!((sub[0] - full.y[0]).abs() < 1e-15);
        let mid = solver.substate(&sys, 0.0, &y0, 0.5 * h);
        assert!((mid[0] - (0.5 * h).cos()).abs() < 1e-12);
    }
}
