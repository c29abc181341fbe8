//! Globally adaptive Gauss–Kronrod (7, 15) quadrature on a finite interval.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Absolute tolerance used for the coalescence CDF integrals over `s ∈ [0, 1]`.
pub const DEFAULT_ABS_TOL: f64 = 1e-9;
const DEFAULT_MAX_SUBDIVISIONS: usize = 500;

// Kronrod abscissae on [-1, 1] (non-negative half) and weights; the Gauss
// 7-point rule uses the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            abs_tol: DEFAULT_ABS_TOL,
            rel_tol: 0.0,
            max_subdivisions: DEFAULT_MAX_SUBDIVISIONS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_bound: f64,
    pub evaluations: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F>(f: &mut F, a: f64, b: f64) -> Result<Segment>
where
    F: FnMut(f64) -> Result<f64>,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center)?;
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx)? + f(center + dx)?;
        k += WGK[j] * pair;
        if j % 2 == 1 {
            g += WG[j / 2] * pair;
        }
    }
    let value = k * half;
    let error = ((k - g) * half).abs();
    if !value.is_finite() {
        return Err(Error::QuadratureNonConvergence {
            estimate: value,
            error_bound: f64::INFINITY,
        });
    }
    Ok(Segment { a, b, value, error })
}

/// Integrates `f` over `[a, b]`, bisecting the segment with the largest
/// error estimate until the summed error meets the tolerance.
pub fn integrate<F>(mut f: F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<QuadratureResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut heap = BinaryHeap::new();
    let first = kronrod(&mut f, a, b)?;
    let mut value = first.value;
    let mut error = first.error;
    let mut evaluations = 15;
    heap.push(first);

    while error > cfg.abs_tol.max(cfg.rel_tol * value.abs()) {
        if heap.len() >= cfg.max_subdivisions {
            return Err(Error::QuadratureNonConvergence {
                estimate: value,
                error_bound: error,
            });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        let left = kronrod(&mut f, worst.a, mid)?;
        let right = kronrod(&mut f, mid, worst.b)?;
        evaluations += 30;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // Re-sum to shed the drift of the running updates.
    let value = heap.iter().map(|s| s.value).sum();
    let error_bound = heap.iter().map(|s| s.error).sum();
    Ok(QuadratureResult {
        value,
        error_bound,
        evaluations,
    })
}
