//! Reproduction measure and the branching mechanism it induces.
//!
//! Each individual lives an exponential time with rate `μ(ℕ)` and is then
//! replaced by `n` children with probability `μ(n) / μ(ℕ)`. The branching
//! mechanism is `Φ(s) = Σ_n (sⁿ − s) μ(n)`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Tolerance used by [`OffspringMeasure::classify`] for the sign of `Φ′(1)`.
pub const CRITICALITY_TOL: f64 = 1e-12;

const ETA_GRID: usize = 1000;
const ETA_TOL: f64 = 1e-12;

/// A finite reproduction measure `μ` on ℕ with `μ(1) = 0` and `μ(0) > 0`.
///
/// Weights are rates (units 1/time), not probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct OffspringMeasure {
    /// `(n, μ(n))` sorted by `n`, zero weights dropped.
    weights: Vec<(u32, f64)>,
    total_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

/// Criticality classification together with the Malthusian rate `Φ′(1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criticality {
    pub regime: Regime,
    pub growth_rate: f64,
}

impl OffspringMeasure {
    pub fn new<I>(weights: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, f64)>,
    {
        let mut map: BTreeMap<u32, f64> = BTreeMap::new();
        for (n, w) in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidMeasure(format!(
                    "weight for n = {n} must be a finite non-negative rate, got {w}"
                )));
            }
            if n == 1 && w != 0.0 {
                return Err(Error::InvalidMeasure(
                    "μ(1) must be 0: an individual replaced by one child is not an event".into(),
                ));
            }
            if map.insert(n, w).is_some() {
                return Err(Error::InvalidMeasure(format!("duplicate weight for n = {n}")));
            }
        }
        let weights: Vec<(u32, f64)> = map.into_iter().filter(|&(_, w)| w > 0.0).collect();
        if weights.first().is_none_or(|&(n, _)| n != 0) {
            return Err(Error::InvalidMeasure("μ(0) must be positive".into()));
        }
        let total_rate = weights.iter().map(|&(_, w)| w).sum();
        Ok(OffspringMeasure { weights, total_rate })
    }

    /// `μ = {0: rate}`: individuals die without offspring.
    pub fn pure_death(rate: f64) -> Result<Self> {
        Self::new([(0, rate)])
    }

    /// `μ = {0: death, 2: birth}`: binary splitting.
    pub fn binary(death: f64, birth: f64) -> Result<Self> {
        Self::new([(0, death), (2, birth)])
    }

    /// Parses `{"measure": {"0": 2.0, "2": 1.0}}` or the bare inner map.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Wrapped {
            measure: OffspringMeasure,
        }
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::InvalidMeasure(e.to_string()))?;
        let parsed = if value.get("measure").is_some() {
            serde_json::from_value::<Wrapped>(value).map(|w| w.measure)
        } else {
            serde_json::from_value::<OffspringMeasure>(value)
        };
        parsed.map_err(|e| Error::InvalidMeasure(e.to_string()))
    }

    /// Non-zero `(n, μ(n))` pairs in increasing `n`.
    pub fn support(&self) -> &[(u32, f64)] {
        &self.weights
    }

    pub fn rate(&self, n: u32) -> f64 {
        self.weights
            .iter()
            .find(|&&(k, _)| k == n)
            .map_or(0.0, |&(_, w)| w)
    }

    /// `μ(ℕ)`, the rate at which each individual reproduces.
    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    /// Offspring law `μ(n) / μ(ℕ)`.
    pub fn offspring_probability(&self, n: u32) -> f64 {
        self.rate(n) / self.total_rate
    }

    pub fn max_offspring(&self) -> u32 {
        self.weights.last().map_or(0, |&(n, _)| n)
    }

    /// True when no offspring count above one has mass, so `Φ″ ≡ 0`.
    pub fn is_pure_death(&self) -> bool {
        self.max_offspring() == 0
    }

    pub fn phi(&self, s: f64) -> Result<f64> {
        check_unit(s)?;
        Ok(self.phi_unchecked(s))
    }

    pub fn phi_d1(&self, s: f64) -> Result<f64> {
        check_unit(s)?;
        Ok(self.phi_d1_unchecked(s))
    }

    pub fn phi_d2(&self, s: f64) -> Result<f64> {
        check_unit(s)?;
        Ok(self.phi_d2_unchecked(s))
    }

    // The unchecked evaluators are used by the ODE right-hand sides, where
    // trial stages may step marginally outside [0, 1].

    pub(crate) fn phi_unchecked(&self, s: f64) -> f64 {
        self.weights
            .iter()
            .map(|&(n, w)| (s.powi(n as i32) - s) * w)
            .sum()
    }

    pub(crate) fn phi_d1_unchecked(&self, s: f64) -> f64 {
        self.weights
            .iter()
            .map(|&(n, w)| {
                let dn = if n == 0 { 0.0 } else { n as f64 * s.powi(n as i32 - 1) };
                (dn - 1.0) * w
            })
            .sum()
    }

    pub(crate) fn phi_d2_unchecked(&self, s: f64) -> f64 {
        self.weights
            .iter()
            .filter(|&&(n, _)| n >= 2)
            .map(|&(n, w)| (n * (n - 1)) as f64 * s.powi(n as i32 - 2) * w)
            .sum()
    }

    /// Coefficients `a_k` of `Φ` as an ordinary polynomial, `Φ(s) = Σ a_k s^k`.
    pub(crate) fn phi_poly(&self) -> Vec<f64> {
        let deg = self.max_offspring().max(1) as usize;
        let mut a = vec![0.0; deg + 1];
        for &(n, w) in &self.weights {
            a[n as usize] += w;
            a[1] -= w;
        }
        a
    }

    /// Taylor coefficients of `Φ` at 1: `Φ(1 − q) = Σ_k b_k (−q)^k`, with `b_0 = 0`
    /// and `b_1 = Φ′(1)`. Used to integrate `1 − ψ` without cancellation.
    pub(crate) fn phi_taylor_at_one(&self) -> Vec<f64> {
        let a = self.phi_poly();
        let deg = a.len() - 1;
        let mut b = vec![0.0; deg + 1];
        for (k, bk) in b.iter_mut().enumerate() {
            let mut binom = 1.0_f64;
            let mut acc = 0.0;
            for (n, &an) in a.iter().enumerate().skip(k) {
                if n > k {
                    binom = binom * n as f64 / (n - k) as f64;
                }
                acc += an * binom;
            }
            *bk = acc;
        }
        b[0] = 0.0;
        b
    }

    /// `Φ′(1) = Σ_n (n − 1) μ(n)`.
    pub fn growth_rate(&self) -> f64 {
        self.weights
            .iter()
            .map(|&(n, w)| (n as f64 - 1.0) * w)
            .sum()
    }

    pub fn classify(&self) -> Criticality {
        let growth_rate = self.growth_rate();
        let regime = if growth_rate < -CRITICALITY_TOL {
            Regime::Subcritical
        } else if growth_rate > CRITICALITY_TOL {
            Regime::Supercritical
        } else {
            Regime::Critical
        };
        Criticality { regime, growth_rate }
    }

    /// Smallest positive root `η` of `Φ`; equals 1 unless supercritical.
    ///
    /// `Φ` is scanned on a `10⁻³` grid and the first sign change is bisected.
    /// `Φ` is convex with `Φ(0) > 0`, so a root inside the last grid cell is
    /// only possible when `Φ′(1) > 0`, which is checked explicitly.
    pub fn eta(&self) -> f64 {
        let h = 1.0 / ETA_GRID as f64;
        let mut prev = 0.0;
        for k in 1..ETA_GRID {
            let s = k as f64 * h;
            let v = self.phi_unchecked(s);
            if v == 0.0 {
                return s;
            }
            if v < 0.0 {
                return self.bisect_root(prev, s);
            }
            prev = s;
        }
        if self.growth_rate() > CRITICALITY_TOL {
            self.bisect_root(prev, 1.0)
        } else {
            1.0
        }
    }

    /// Bisection keeping `Φ(lo) > 0` and `Φ(hi) ≤ 0` (or `hi = 1`).
    fn bisect_root(&self, mut lo: f64, mut hi: f64) -> f64 {
        while hi - lo > ETA_TOL {
            let mid = 0.5 * (lo + hi);
            if self.phi_unchecked(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

impl TryFrom<BTreeMap<String, f64>> for OffspringMeasure {
    type Error = Error;

    fn try_from(map: BTreeMap<String, f64>) -> Result<Self> {
        let mut weights = Vec::with_capacity(map.len());
        for (key, w) in map {
            let n: u32 = key
                .trim()
                .parse()
                .map_err(|_| Error::InvalidMeasure(format!("key {key:?} is not a decimal integer")))?;
            weights.push((n, w));
        }
        OffspringMeasure::new(weights)
    }
}

impl From<OffspringMeasure> for BTreeMap<String, f64> {
    fn from(m: OffspringMeasure) -> Self {
        m.weights.iter().map(|&(n, w)| (n.to_string(), w)).collect()
    }
}

impl fmt::Display for OffspringMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (n, w)) in self.weights.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{n}: {w}")?;
        }
        write!(f, "}}")
    }
}

pub(crate) fn check_unit(s: f64) -> Result<()> {
    if (0.0..=1.0).contains(&s) {
        Ok(())
    } else {
        domain(format!("s = {s} is outside [0, 1]"))
    }
}
