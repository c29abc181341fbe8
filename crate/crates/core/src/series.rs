//! Truncated power series `Σ_{j≤K} c_j s^j` and the probability-generating
//! function wrapper built on it.

use serde::{Deserialize, Serialize};

/// Coefficients below this magnitude of negativity are read back as zero.
pub const NEGATIVE_CLAMP: f64 = 1e-12;

/// `a · b` truncated to `out.len()` coefficients.
pub(crate) fn mul_into(a: &[f64], b: &[f64], out: &mut [f64]) {
    let k = out.len();
    out.iter_mut().for_each(|c| *c = 0.0);
    for (i, &ai) in a.iter().enumerate().take(k) {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate().take(k - i) {
            out[i + j] += ai * bj;
        }
    }
}

pub(crate) fn mul(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    mul_into(a, b, &mut out);
    out
}

/// Evaluates the polynomial with coefficients `poly` at the series `p`, i.e.
/// the coefficients of `Σ_k poly[k] p(s)^k`, truncated to `p.len()` terms.
pub(crate) fn compose_into(poly: &[f64], p: &[f64], out: &mut [f64], scratch: &mut [f64]) {
    // Horner: acc ← acc · p + poly[k]
    out.iter_mut().for_each(|c| *c = 0.0);
    for &coef in poly.iter().rev() {
        mul_into(out, p, scratch);
        out.copy_from_slice(scratch);
        out[0] += coef;
    }
}

/// `p^x` truncated to `p.len()` terms by binary exponentiation.
pub(crate) fn pow(p: &[f64], mut x: u32) -> Vec<f64> {
    let len = p.len();
    let mut result = vec![0.0; len];
    if len == 0 {
        return result;
    }
    result[0] = 1.0;
    let mut base = p.to_vec();
    while x > 0 {
        if x & 1 == 1 {
            result = mul(&result, &base, len);
        }
        x >>= 1;
        if x > 0 {
            base = mul(&base, &base, len);
        }
    }
    result
}

/// Coefficients `c_0..c_K` of a generating function `Σ_j P(Z = j) s^j`
/// truncated at order `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedPgf {
    coeffs: Vec<f64>,
}

impl TruncatedPgf {
    /// Wraps raw coefficients. At least one coefficient is required.
    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a truncated series needs order ≥ 0");
        TruncatedPgf { coeffs }
    }

    /// The law of `Z = j` as a series of order `order`.
    pub fn point_mass(j: usize, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        if j <= order {
            coeffs[j] = 1.0;
        }
        TruncatedPgf { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficient `j` with tiny negative integration noise clamped to zero.
    pub fn coeff(&self, j: usize) -> f64 {
        self.coeffs.get(j).map_or(0.0, |&c| clamp_noise(c))
    }

    /// All coefficients, clamped as in [`TruncatedPgf::coeff`].
    pub fn coeffs(&self) -> Vec<f64> {
        self.coeffs.iter().map(|&c| clamp_noise(c)).collect()
    }

    pub fn raw_coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `1 − Σ c_j`: probability mass beyond the truncation order.
    pub fn truncation_mass(&self) -> f64 {
        1.0 - self.coeffs.iter().sum::<f64>()
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    pub fn eval_d1(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (j, &c)| acc * s + j as f64 * c)
    }

    /// Distribution from `x` independent copies: coefficients of `p(s)^x`.
    pub fn power(&self, x: u32) -> TruncatedPgf {
        TruncatedPgf {
            coeffs: pow(&self.coeffs, x),
        }
    }

    /// Size-biased weights `j · c_j` (the series `s · p′(s)`).
    pub fn size_biased(&self) -> Vec<f64> {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(j, &c)| j as f64 * c)
            .collect()
    }
}

/// Distribution of `Z_t` from `x` ancestors given the one-ancestor law.
pub fn pgf_power(p: &TruncatedPgf, x: u32) -> TruncatedPgf {
    p.power(x)
}

fn clamp_noise(c: f64) -> f64 {
    if (-NEGATIVE_CLAMP..0.0).contains(&c) {
        0.0
    } else {
        c
    }
}
