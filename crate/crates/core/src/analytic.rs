//! Exact coalescence-time formulas.
//!
//! Notation: `R_u(s) = ψ″_u(s) / ψ′_u(s)`. Its time derivative is
//! `∂R_u/∂u = Φ″(ψ_u(s)) ψ′_u(s)`, which turns the pair p.g.f. into a density
//! in the coalescence bound and makes box integrals of the multivariate
//! densities closed-form in time.
//!
//! Probabilities are recovered from falling-factorial p.g.f.s through
//! `∫₀¹ (1 − s)ⁿ/n! · s^{p−n−1} ds = 1/(p)_{n+1}`, so
//! `P(A, Z_t ≥ n + 1) = ∫₀¹ (1 − s)ⁿ/n! · E[(Z_t)_{n+1} s^{Z_t−n−1}; A] ds`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::offspring::OffspringMeasure;
use crate::psi::{psi_at, psi_at_times, psi_series, PsiState, SolverConfig};
use crate::quadrature::{integrate, QuadratureConfig};
use crate::report::{CoalescenceReport, ReportRow};
use crate::series::{self, TruncatedPgf};

/// Tolerance of the total-probability audit.
pub const CONSERVATION_TOL: f64 = 1e-6;
/// Largest truncation mass accepted before coefficient extraction.
pub const MAX_TRUNCATION_MASS: f64 = 1e-9;
/// Coefficients within this distance of the series order are refused.
pub const TRUNCATION_MARGIN: usize = 4;

/// Conditioning on `Z_{t − t2} = y` for the pair formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub t2: f64,
    pub y: u32,
}

/// `x` founders at time 0, current time `t`, coalescence bound `t1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairQuery {
    pub x: u32,
    pub t: f64,
    pub t1: f64,
    pub conditioning: Option<Conditioning>,
}

impl PairQuery {
    pub fn new(x: u32, t: f64, t1: f64) -> Self {
        PairQuery {
            x,
            t,
            t1,
            conditioning: None,
        }
    }

    pub fn conditioned(t: f64, t1: f64, t2: f64, y: u32) -> Self {
        PairQuery {
            x: y,
            t,
            t1,
            conditioning: Some(Conditioning { t2, y }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x < 1 {
            return domain("x must be at least 1");
        }
        if !(self.t.is_finite() && self.t > 0.0) {
            return domain(format!("t = {} must be positive", self.t));
        }
        if !(self.t1 > 0.0 && self.t1 <= self.t) {
            return domain(format!("t1 = {} must lie in (0, t]", self.t1));
        }
        if let Some(c) = self.conditioning {
            if c.y < 1 {
                return domain("y must be at least 1");
            }
            if !(c.t2 >= self.t1 && c.t2 <= self.t) {
                return domain(format!("t2 = {} must lie in [t1, t]", c.t2));
            }
        }
        Ok(())
    }

    fn conditioning(&self) -> Result<Conditioning> {
        self.validate()?;
        self.conditioning
            .ok_or_else(|| Error::Domain("query needs (t2, y) conditioning".into()))
    }
}

/// Which family of coalescence times a multivariate query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `T_k`: coalescence time of individual 1 with individual `k + 1`.
    FirstVsOthers,
    /// `T_k*`: the `k`-th coalescence time of the sample genealogy.
    OrderStatistics,
}

/// `x` founders, current time `t`, ordered times `0 < t_1 < … < t_n ≤ t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiQuery {
    pub x: u32,
    pub t: f64,
    pub times: Vec<f64>,
    pub variant: Variant,
}

impl MultiQuery {
    pub fn validate(&self) -> Result<()> {
        if self.x < 1 {
            return domain("x must be at least 1");
        }
        if !(self.t.is_finite() && self.t > 0.0) {
            return domain(format!("t = {} must be positive", self.t));
        }
        if self.times.is_empty() {
            return domain("at least one coalescence time is required");
        }
        let mut prev = 0.0;
        for &ti in &self.times {
            // Negated so NaN is rejected too.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(ti > prev) {
                return domain("coalescence times must be positive and strictly increasing");
            }
            prev = ti;
        }
        if prev > self.t {
            return domain(format!("largest coalescence time {prev} exceeds t = {}", self.t));
        }
        Ok(())
    }
}

/// `n!(n+1)!/2ⁿ`, the ratio between the `T*` and `T` joint densities.
pub fn order_statistics_factor(n: usize) -> f64 {
    let mut f = 1.0;
    for k in 1..=n {
        f *= (k * (k + 1)) as f64 / 2.0;
    }
    f
}

fn variant_factor(variant: Variant, n: usize) -> f64 {
    match variant {
        Variant::FirstVsOthers => 1.0,
        Variant::OrderStatistics => order_statistics_factor(n),
    }
}

fn check_open_unit(s: f64) -> Result<()> {
    if (0.0..1.0).contains(&s) {
        Ok(())
    } else {
        domain(format!("p.g.f. weights are only evaluated for s in [0, 1), got {s}"))
    }
}

/// Call-local memo of ψ-states keyed by `(t, s)`.
struct PsiCache<'a> {
    m: &'a OffspringMeasure,
    cfg: &'a SolverConfig,
    states: HashMap<(u64, u64), PsiState>,
}

impl<'a> PsiCache<'a> {
    fn new(m: &'a OffspringMeasure, cfg: &'a SolverConfig) -> Self {
        PsiCache {
            m,
            cfg,
            states: HashMap::new(),
        }
    }

    /// States at `times` for one `s`; missing entries come from a single trajectory.
    fn get(&mut self, s: f64, times: &[f64]) -> Result<Vec<PsiState>> {
        let key = |t: f64| (t.to_bits(), s.to_bits());
        let missing: Vec<f64> = times
            .iter()
            .copied()
            .filter(|&t| !self.states.contains_key(&key(t)))
            .collect();
        if !missing.is_empty() {
            for st in psi_at_times(self.m, s, &missing, self.cfg)? {
                self.states.insert(key(st.t), st);
            }
        }
        Ok(times.iter().map(|&t| self.states[&key(t)]).collect())
    }
}

fn s_integral<F>(f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    Ok(integrate(f, 0.0, 1.0, &QuadratureConfig::default())?.value)
}

/// `E^{(t)}(Z_t(Z_t−1) s^{Z_t−2}, T ≤ t1 | Z_{t−t2} = y)
///  = y ψ′_{t2}(s) ψ_{t2}(s)^{y−1} R_{t1}(s)`.
pub fn pair_pgf_conditioned(
    m: &OffspringMeasure,
    q: &PairQuery,
    s: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let c = q.conditioning()?;
    check_open_unit(s)?;
    let st = psi_at_times(m, s, &[q.t1, c.t2], cfg)?;
    let (at_t1, at_t2) = (st[0], st[1]);
    Ok(c.y as f64 * at_t2.psi_d1 * at_t2.psi.powi(c.y as i32 - 1) * at_t1.curvature_ratio()?)
}

/// `∂/∂t1` of [`pair_pgf_conditioned`]:
/// `y ψ′_{t2}(s) ψ_{t2}(s)^{y−1} Φ″(ψ_{t1}(s)) ψ′_{t1}(s)`.
pub fn pair_pgf_conditioned_rate(
    m: &OffspringMeasure,
    q: &PairQuery,
    s: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let c = q.conditioning()?;
    check_open_unit(s)?;
    let st = psi_at_times(m, s, &[q.t1, c.t2], cfg)?;
    let (at_t1, at_t2) = (st[0], st[1]);
    Ok(c.y as f64
        * at_t2.psi_d1
        * at_t2.psi.powi(c.y as i32 - 1)
        * m.phi_d2_unchecked(at_t1.psi)
        * at_t1.psi_d1)
}

fn checked_series(m: &OffspringMeasure, t: f64, cfg: &SolverConfig) -> Result<TruncatedPgf> {
    let p = psi_series(m, t, cfg)?;
    let mass = p.truncation_mass();
    if mass > MAX_TRUNCATION_MASS {
        return Err(Error::Truncation(format!(
            "truncation mass {mass:e} at t = {t} exceeds {MAX_TRUNCATION_MASS:e}; raise series_order"
        )));
    }
    Ok(p)
}

/// Densities in `t1` of `{Z_t = p, T ∈ dt1}` given `Z_{t−t2} = y`, for
/// `p = 0..=p_max` (entries below 2 are zero).
///
/// The current population splits into the descendants of the `y − 1`
/// unmarked ancestors, of the marked ancestor's distinguished child, and of
/// its `n − 1` siblings; the pair has one member in each of the last two.
pub fn pair_density_table(
    m: &OffspringMeasure,
    q: &PairQuery,
    p_max: usize,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let c = q.conditioning()?;
    if p_max + TRUNCATION_MARGIN >= cfg.series_order {
        return Err(Error::Truncation(format!(
            "p = {p_max} is within {TRUNCATION_MARGIN} of series order {}",
            cfg.series_order
        )));
    }
    let mut density = vec![0.0; p_max + 1];
    if m.is_pure_death() || p_max < 2 {
        return Ok(density);
    }
    let len = cfg.series_order + 1;
    let at_t2 = checked_series(m, c.t2, cfg)?;
    let at_t1 = if q.t1 == c.t2 {
        at_t2.clone()
    } else {
        checked_series(m, q.t1, cfg)?
    };
    let others = at_t2.power(c.y - 1);
    let marked = at_t2.size_biased();
    let head = series::mul(others.raw_coeffs(), &marked, len);

    let mut acc = vec![0.0; len];
    for &(n, w) in m.support().iter().filter(|&&(n, _)| n >= 2) {
        let siblings = at_t1.power(n - 1).size_biased();
        let joint = series::mul(&head, &siblings, len);
        for (a, j) in acc.iter_mut().zip(joint) {
            *a += n as f64 * w * j;
        }
    }
    for (p, d) in density.iter_mut().enumerate().skip(2) {
        *d = c.y as f64 * acc[p] / (p * (p - 1)) as f64;
    }
    Ok(density)
}

/// `P^{(t)}(Z_t = p, T ∈ dt1 | Z_{t−t2} = y) / dt1`.
pub fn pair_density_point(
    m: &OffspringMeasure,
    p: usize,
    q: &PairQuery,
    cfg: &SolverConfig,
) -> Result<f64> {
    if p < 2 {
        return domain("p must be at least 2");
    }
    Ok(pair_density_table(m, q, p, cfg)?[p])
}

/// `P_x^{(t)}(T ≤ t1) = x ∫₀¹ (1 − s) R_{t1}(s) ψ′_t(s) ψ_t(s)^{x−1} ds`.
///
/// Unconditional: populations with fewer than two individuals contribute to
/// the complement.
pub fn pair_cdf(m: &OffspringMeasure, q: &PairQuery, cfg: &SolverConfig) -> Result<f64> {
    q.validate()?;
    if m.is_pure_death() {
        return Ok(0.0);
    }
    let x = q.x;
    let mut cache = PsiCache::new(m, cfg);
    s_integral(|s| {
        let st = cache.get(s, &[q.t1, q.t])?;
        let (bound, now) = (st[0], st[1]);
        Ok(x as f64 * (1.0 - s) * bound.curvature_ratio()? * now.psi_d1 * now.psi.powi(x as i32 - 1))
    })
}

/// Probability that at least two individuals are alive at `t` and a random
/// pair descends from different founders. Zero for `x ≤ 1`.
pub fn no_common_ancestor(m: &OffspringMeasure, x: u32, t: f64, cfg: &SolverConfig) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return domain(format!("t = {t} must be positive"));
    }
    if x <= 1 {
        return Ok(0.0);
    }
    let mut cache = PsiCache::new(m, cfg);
    let xf = x as f64;
    s_integral(|s| {
        let st = cache.get(s, &[t])?[0];
        Ok(xf * (xf - 1.0) * (1.0 - s) * st.psi_d1 * st.psi_d1 * st.psi.powi(x as i32 - 2))
    })
}

/// `P_x(Z_t ≥ 2) = 1 − ψ_t(0)^x − x ψ′_t(0) ψ_t(0)^{x−1}`.
pub fn at_least_two_probability(
    m: &OffspringMeasure,
    x: u32,
    t: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    Ok(1.0 - at_most_one_probability(m, x, t, cfg)?)
}

fn at_most_one_probability(m: &OffspringMeasure, x: u32, t: f64, cfg: &SolverConfig) -> Result<f64> {
    let st = psi_at(m, t, 0.0, cfg)?;
    let xf = x as f64;
    let tail = if x == 0 {
        0.0
    } else {
        xf * st.psi_d1 * st.psi.powi(x as i32 - 1)
    };
    Ok(st.psi.powi(x as i32) + tail)
}

/// Total-probability audit: `P(T ≤ t) + P(no common ancestor) + P(Z_t ≤ 1) = 1`.
pub fn conservation_check(
    m: &OffspringMeasure,
    x: u32,
    t: f64,
    cfg: &SolverConfig,
) -> Result<CoalescenceReport> {
    let coalesced = pair_cdf(m, &PairQuery::new(x, t, t), cfg)?;
    let separate = no_common_ancestor(m, x, t, cfg)?;
    let small = at_most_one_probability(m, x, t, cfg)?;
    let mut report = CoalescenceReport::new();
    report.push(ReportRow::tolerance(
        format!("conservation[x={x};t={t}]"),
        1.0,
        coalesced + separate + small,
        CONSERVATION_TOL,
    ));
    Ok(report)
}

/// Falling-factorial p.g.f. of the joint density of `T_1..T_n` (or `T*`):
/// `x ψ′_t ψ_t^{x−1} Π_i ψ′_{t_i} Φ″(ψ_{t_i})`, times `n!(n+1)!/2ⁿ` for order statistics.
pub fn multivariate_density_pgf(
    m: &OffspringMeasure,
    q: &MultiQuery,
    s: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    q.validate()?;
    check_open_unit(s)?;
    let mut times = q.times.clone();
    times.push(q.t);
    let st = psi_at_times(m, s, &times, cfg)?;
    let now = st[st.len() - 1];
    let mut value = q.x as f64 * now.psi_d1 * now.psi.powi(q.x as i32 - 1);
    for state in &st[..q.times.len()] {
        value *= state.psi_d1 * m.phi_d2_unchecked(state.psi);
    }
    Ok(value * variant_factor(q.variant, q.times.len()))
}

/// Probability that the `n` coalescence times fall in the ordered box
/// `Π_i [lo_i, hi_i]` (with `hi_i ≤ lo_{i+1}`) and `Z_t ≥ n + 1`.
///
/// Each time integral is `R_{hi}(s) − R_{lo}(s)`, leaving one quadrature in `s`.
pub fn multivariate_box_probability(
    m: &OffspringMeasure,
    x: u32,
    t: f64,
    cells: &[(f64, f64)],
    variant: Variant,
    cfg: &SolverConfig,
) -> Result<f64> {
    if x < 1 || !(t.is_finite() && t > 0.0) {
        return domain("need x ≥ 1 and t > 0");
    }
    if cells.is_empty() {
        return domain("at least one cell is required");
    }
    let mut prev_hi = 0.0;
    for &(lo, hi) in cells {
        if !(lo >= prev_hi && hi > lo && hi <= t) {
            return domain("cells must be ordered, non-overlapping and inside [0, t]");
        }
        prev_hi = hi;
    }
    if m.is_pure_death() {
        return Ok(0.0);
    }
    let n = cells.len();
    let mut times: Vec<f64> = cells.iter().flat_map(|&(lo, hi)| [lo, hi]).collect();
    times.push(t);
    let inv_factorial = 1.0 / (1..=n).map(|k| k as f64).product::<f64>();
    let factor = variant_factor(variant, n);
    let mut cache = PsiCache::new(m, cfg);
    let value = s_integral(|s| {
        let st = cache.get(s, &times)?;
        let now = st[2 * n];
        let mut v = x as f64 * now.psi_d1 * now.psi.powi(x as i32 - 1);
        for i in 0..n {
            v *= st[2 * i + 1].curvature_ratio()? - st[2 * i].curvature_ratio()?;
        }
        Ok((1.0 - s).powi(n as i32) * inv_factorial * v)
    })?;
    Ok(value * factor)
}

/// `P_x(Z_t ≥ k)` from the truncated law of `Z_t`.
pub fn population_at_least(
    m: &OffspringMeasure,
    x: u32,
    t: f64,
    k: usize,
    cfg: &SolverConfig,
) -> Result<f64> {
    let law = psi_series(m, t, cfg)?.power(x);
    let below: f64 = (0..k).map(|j| law.coeff(j)).sum();
    Ok(1.0 - below)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    fn binary() -> OffspringMeasure {
        OffspringMeasure::binary(2.0, 1.0).unwrap()
    }

    fn death() -> OffspringMeasure {
        OffspringMeasure::pure_death(1.0).unwrap()
    }

    #[test]
    fn factor_values() {
        assert_eq!(order_statistics_factor(1), 1.0);
        assert_eq!(order_statistics_factor(2), 3.0);
        assert_eq!(order_statistics_factor(3), 3.0 * 6.0);
    }

    #[test]
    fn pure_death_never_coalesces() {
        let q = PairQuery::conditioned(1.0, 0.5, 0.8, 2);
        assert_eq!(pair_pgf_conditioned(&death(), &q, 0.3, &cfg()).unwrap(), 0.0);
        assert!(pair_density_table(&death(), &q, 20, &cfg())
            .unwrap()
            .iter()
            .all(|&d| d == 0.0));
        assert_eq!(pair_cdf(&death(), &PairQuery::new(3, 2.0, 1.0), &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn pgf_reduces_to_psi_d2() {
        let q = PairQuery::conditioned(1.0, 0.5, 0.5, 1);
        let v = pair_pgf_conditioned(&binary(), &q, 0.0, &cfg()).unwrap();
        let st = psi_at(&binary(), 0.5, 0.0, &cfg()).unwrap();
        assert_abs_diff_eq!(v, st.psi_d2, epsilon = 1e-12);
        // Small t1 drives the p.g.f. to zero with ψ″.
        let tiny = PairQuery::conditioned(1.0, 1e-9, 0.5, 1);
        assert!(pair_pgf_conditioned(&binary(), &tiny, 0.2, &cfg()).unwrap() < 1e-7);
    }

    #[test]
    fn density_at_two_is_squared_single_survivor() {
        // p = 2, y = 1, t1 = t2: both parts are single individuals.
        let q = PairQuery::conditioned(1.0, 0.7, 0.7, 1);
        let d = pair_density_point(&binary(), 2, &q, &cfg()).unwrap();
        let p1 = psi_series(&binary(), 0.7, &cfg()).unwrap().coeff(1);
        assert_abs_diff_eq!(d, 2.0 * 1.0 * p1 * p1 / 2.0, epsilon = 1e-13);
    }

    #[test]
    fn density_rejects_truncation_risk() {
        let q = PairQuery::conditioned(1.0, 0.5, 0.5, 1);
        assert!(matches!(
            pair_density_point(&binary(), 60, &q, &cfg()),
            Err(Error::Truncation(_))
        ));
        assert!(pair_density_point(&binary(), 59, &q, &cfg()).is_ok());
        assert!(pair_density_point(&binary(), 1, &q, &cfg()).is_err());
    }

    #[test]
    fn boundary_and_query_errors() {
        let q = PairQuery::conditioned(1.0, 0.5, 0.5, 1);
        assert!(matches!(
            pair_pgf_conditioned(&binary(), &q, 1.0, &cfg()),
            Err(Error::Domain(_))
        ));
        assert!(pair_pgf_conditioned(&binary(), &PairQuery::new(1, 1.0, 0.5), 0.2, &cfg()).is_err());
        assert!(PairQuery::conditioned(1.0, 0.6, 0.5, 1).validate().is_err());
        assert!(PairQuery::new(1, 1.0, 1.5).validate().is_err());
        let mq = MultiQuery {
            x: 1,
            t: 2.0,
            times: vec![1.0, 0.5],
            variant: Variant::FirstVsOthers,
        };
        assert!(multivariate_density_pgf(&binary(), &mq, 0.0, &cfg()).is_err());
    }

    #[test]
    fn no_common_ancestor_pure_death() {
        let v = no_common_ancestor(&death(), 2, 1.0, &cfg()).unwrap();
        assert_abs_diff_eq!(v, (-2.0f64).exp(), epsilon = 1e-9);
        assert_eq!(no_common_ancestor(&binary(), 1, 1.0, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn single_founder_still_coalesces() {
        let v = pair_cdf(&binary(), &PairQuery::new(1, 1.0, 1.0), &cfg()).unwrap();
        assert!(v > 0.0);
        let two = at_least_two_probability(&binary(), 1, 1.0, &cfg()).unwrap();
        assert_abs_diff_eq!(v, two, epsilon = 1e-8);
    }

    #[test]
    fn cdf_is_monotone_in_bound() {
        let mut prev = 0.0;
        for k in 1..=8 {
            let t1 = k as f64 * 0.25;
            let v = pair_cdf(&binary(), &PairQuery::new(2, 2.0, t1), &cfg()).unwrap();
            assert!(v >= prev - 1e-12 && v <= 1.0);
            prev = v;
        }
    }

    #[test]
    fn conservation_pure_death() {
        let rep = conservation_check(&death(), 2, 1.0, &cfg()).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!((rep.rows[0].empirical - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_cell_box_equals_pair_cdf() {
        let m = OffspringMeasure::new([(0, 1.0), (2, 1.0), (3, 0.5)]).unwrap();
        let cdf = pair_cdf(&m, &PairQuery::new(2, 1.0, 0.6), &cfg()).unwrap();
        for variant in [Variant::FirstVsOthers, Variant::OrderStatistics] {
            let boxed = multivariate_box_probability(&m, 2, 1.0, &[(0.0, 0.6)], variant, &cfg()).unwrap();
            assert_abs_diff_eq!(boxed, cdf, epsilon = 1e-9);
        }
    }

    #[test]
    fn variant_ratio_is_exact() {
        let mut q = MultiQuery {
            x: 2,
            t: 2.0,
            times: vec![0.3, 0.9, 1.5],
            variant: Variant::FirstVsOthers,
        };
        let base = multivariate_density_pgf(&binary(), &q, 0.4, &cfg()).unwrap();
        q.variant = Variant::OrderStatistics;
        let star = multivariate_density_pgf(&binary(), &q, 0.4, &cfg()).unwrap();
        assert!((star / base / order_statistics_factor(3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn population_tail() {
        let p = population_at_least(&binary(), 2, 1.0, 2, &cfg()).unwrap();
        let direct = at_least_two_probability(&binary(), 2, 1.0, &cfg()).unwrap();
        assert_abs_diff_eq!(p, direct, epsilon = 1e-9);
    }
}
