//! Dormand–Prince 5(4) integrator with embedded error control.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order weights equal the last row of A (FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const MAX_STEPS: usize = 5_000_000;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerances {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
}

/// Adaptive integrator for `y' = f(t, y)` over a fixed-dimension state.
pub(crate) struct Dopri5 {
    tol: Tolerances,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    y5: Vec<f64>,
    h: Option<f64>,
    pub steps: usize,
}

impl Dopri5 {
    pub fn new(dim: usize, tol: Tolerances) -> Self {
        Dopri5 {
            tol,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            stage: vec![0.0; dim],
            y5: vec![0.0; dim],
            h: None,
            steps: 0,
        }
    }

    /// Advances `y` from `t0` to `t1` (`t1 ≥ t0`). `post_step` may project the
    /// state after each accepted step. Step size carries over between calls.
    #[allow(clippy::needless_range_loop)]
    pub fn integrate<F, P>(
        &mut self,
        y: &mut [f64],
        t0: f64,
        t1: f64,
        mut rhs: F,
        mut post_step: P,
    ) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
        P: FnMut(&mut [f64]),
    {
        if t1 <= t0 {
            return Ok(());
        }
        let span = t1 - t0;
        let mut t = t0;
        let mut h = self
            .h
            .unwrap_or_else(|| (1e-3 * span).min(1e-2))
            .min(self.tol.max_step)
            .min(span);
        rhs(t, y, &mut self.k[0]);
        let mut local_steps = 0usize;

        while t < t1 {
            if local_steps > MAX_STEPS {
                return Err(Error::SolverFailure {
                    t_reached: t,
                    reason: format!("exceeded {MAX_STEPS} steps"),
                });
            }
            let last = t + h >= t1;
            let step = if last { t1 - t } else { h };
            if step <= f64::EPSILON * t.abs().max(1.0) {
                return Err(Error::SolverFailure {
                    t_reached: t,
                    reason: format!("step size underflow (h = {step:e})"),
                });
            }

            for s in 1..7 {
                for i in 0..y.len() {
                    let mut acc = 0.0;
                    for (j, a) in A[s].iter().enumerate().take(s) {
                        acc += a * self.k[j][i];
                    }
                    self.stage[i] = y[i] + step * acc;
                }
                rhs(t + C[s] * step, &self.stage, &mut self.k[s]);
            }

            let mut err_sq = 0.0;
            let mut finite = true;
            for i in 0..y.len() {
                let mut y5 = y[i];
                let mut e = 0.0;
                for s in 0..7 {
                    y5 += step * B5[s] * self.k[s][i];
                    e += step * (B5[s] - B4[s]) * self.k[s][i];
                }
                finite &= y5.is_finite();
                self.y5[i] = y5;
                let scale = self.tol.abs_tol + self.tol.rel_tol * y[i].abs().max(y5.abs());
                err_sq += (e / scale).powi(2);
            }
            let err = (err_sq / y.len() as f64).sqrt();
            local_steps += 1;

            if finite && err <= 1.0 {
                t = if last { t1 } else { t + step };
                y.copy_from_slice(&self.y5);
                post_step(y);
                self.steps += 1;
                // FSAL: the last stage is f at the new point unless post_step moved y.
                rhs(t, y, &mut self.k[0]);
                let factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
                };
                if !last {
                    h = (step * factor).min(self.tol.max_step);
                }
            } else {
                let factor = if finite {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
                } else {
                    MIN_FACTOR
                };
                h = step * factor;
            }
        }
        self.h = Some(h);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerances {
        Tolerances {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_step: 0.1,
        }
    }

    #[test]
    fn exponential_decay() {
        let mut solver = Dopri5::new(1, tol());
        let mut y = [1.0];
        solver
            .integrate(&mut y, 0.0, 3.0, |_, y, dy| dy[0] = -y[0], |_| {})
            .unwrap();
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_in_pieces() {
        let mut solver = Dopri5::new(2, tol());
        let mut y = [1.0, 0.0];
        let rhs = |_: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        solver.integrate(&mut y, 0.0, 1.0, rhs, |_| {}).unwrap();
        solver.integrate(&mut y, 1.0, 2.5, rhs, |_| {}).unwrap();
        assert!((y[0] - 2.5f64.cos()).abs() < 1e-10);
        assert!((y[1] + 2.5f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn blow_up_reports_failure() {
        let mut solver = Dopri5::new(1, tol());
        let mut y = [1.0];
        let err = solver
            .integrate(&mut y, 0.0, 2.0, |_, y, dy| dy[0] = y[0] * y[0], |_| {})
            .unwrap_err();
        match err {
            Error::SolverFailure { t_reached, .. } => assert!(t_reached < 1.0 + 1e-6),
            other => panic!("unexpected {other:?}"),
        }
    }
}
