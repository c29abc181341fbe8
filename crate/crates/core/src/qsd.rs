//! Yaglom limit and the quasi-stationary law of the pair coalescence time.
//!
//! All long-horizon quantities are computed from the rescaled complement
//! `V(t, s) = (1 − ψ_t(s)) e^{−ρt}` (`ρ = Φ′(1) < 0`), see
//! [`crate::psi::scaled_complement`]. In these terms
//!
//! * `P₁(Z_t = j | Z_t > 0) = −V_j(t) / V_0(t)` for `j ≥ 1`,
//! * `(1 − ψ_t(s)) / ((1 − s) ψ′_t(1)) = V(t, s) / (1 − s)`, whose value at
//!   `s = 0` converges to `χ(0)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::offspring::{OffspringMeasure, Regime};
use crate::psi::{one_minus_power, psi_at, psi_series, ComplementFlow, SolverConfig};
use crate::quadrature::{integrate, QuadratureConfig};
use crate::series::{self, TruncatedPgf};

/// Successive horizons must agree to this sup-norm distance on the `s`-grid.
pub const YAGLOM_SUP_TOL: f64 = 1e-8;
/// Largest `|1 − Σ α_j|` accepted for a converged limit.
pub const ALPHA_MASS_TOL: f64 = 1e-6;
/// Horizon cap in units of `1/|Φ′(1)|`.
pub const HORIZON_CAP_SCALE: f64 = 200.0;
/// Smallest `1 − g′(0)` for which the two-survivor conditioning is defined.
pub const DEGENERACY_TOL: f64 = 1e-12;

const GRID_POINTS: usize = 21;

/// The Yaglom limit `α_j = lim P(Z_t = j | Z_t > 0)` with its generating
/// function `g` and the constant `χ(0) = lim P₁(Z_t > 0) / E₁(Z_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YaglomLimit {
    pub alphas: TruncatedPgf,
    pub chi0: f64,
    pub t_used: f64,
    pub converged: bool,
}

impl YaglomLimit {
    pub fn g(&self, s: f64) -> f64 {
        self.alphas.eval(s)
    }

    pub fn g_d1(&self, s: f64) -> f64 {
        self.alphas.eval_d1(s)
    }

    pub fn alpha(&self, j: usize) -> f64 {
        self.alphas.coeff(j)
    }

    /// `1 − Σ α_j`.
    pub fn truncation_mass(&self) -> f64 {
        self.alphas.truncation_mass()
    }

    /// Limiting conditioned mean `g′(1)`; equals `1/χ(0)` at convergence.
    pub fn mean(&self) -> f64 {
        self.g_d1(1.0)
    }

    /// `χ(s) = lim (1 − ψ_t(s)) / ((1 − s) ψ′_t(1)) = χ(0) (1 − g(s)) / (1 − s)`,
    /// exposed as a diagnostic.
    pub fn chi(&self, s: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&s) {
            return domain(format!("χ(s) needs s in [0, 1), got {s}"));
        }
        Ok(self.chi0 * (1.0 - self.g(s)) / (1.0 - s))
    }

    fn gap(&self) -> Result<f64> {
        let gap = 1.0 - self.g_d1(0.0);
        if gap <= DEGENERACY_TOL {
            return Err(Error::DegenerateQsd { gap });
        }
        Ok(gap)
    }
}

fn require_subcritical(m: &OffspringMeasure) -> Result<f64> {
    let c = m.classify();
    if c.regime != Regime::Subcritical {
        return Err(Error::NotSubcritical {
            growth_rate: c.growth_rate,
        });
    }
    Ok(c.growth_rate)
}

fn complement_series_start(order: usize) -> Vec<f64> {
    let mut v = vec![0.0; order + 1];
    v[0] = 1.0;
    v[1] = -1.0;
    v
}

/// Conditioned law from the scaled complement `v` for `x` founders:
/// `1 − ψ^x = Σ_k C(x,k) (−1)^{k+1} q^k` with `q = e^{ρt} v`.
fn conditioned_from_complement(v: &[f64], x: u32, rho: f64, t: f64) -> Result<TruncatedPgf> {
    let len = v.len();
    let mut w = vec![0.0; len];
    let mut power = v.to_vec();
    let mut binom = 1.0;
    for k in 1..=x {
        binom = binom * (x - k + 1) as f64 / k as f64;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let scale = sign * binom * ((k - 1) as f64 * rho * t).exp();
        for (wi, pi) in w.iter_mut().zip(&power) {
            *wi += scale * pi;
        }
        if k < x {
            power = series::mul(&power, v, len);
        }
    }
    let survival = w[0];
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(survival > 0.0) {
        return Err(Error::SolverFailure {
            t_reached: t,
            reason: format!("non-positive scaled survival {survival:e}"),
        });
    }
    let mut law = vec![0.0; len];
    for j in 1..len {
        law[j] = -w[j] / survival;
    }
    Ok(TruncatedPgf::from_coeffs(law))
}

/// `P_x(Z_t = j | Z_t > 0)` for `j ≤ K`.
pub fn conditioned_law(
    m: &OffspringMeasure,
    x: u32,
    t: f64,
    cfg: &SolverConfig,
) -> Result<TruncatedPgf> {
    if x < 1 {
        return domain("x must be at least 1");
    }
    cfg.validate()?;
    let mut flow = ComplementFlow::new(m, complement_series_start(cfg.series_order), cfg);
    flow.advance_to(t)?;
    conditioned_from_complement(&flow.v, x, flow.rho(), t)
}

fn limit_from_flow(flow: &ComplementFlow) -> Result<YaglomLimit> {
    Ok(YaglomLimit {
        alphas: conditioned_from_complement(&flow.v, 1, flow.rho(), flow.t)?,
        chi0: flow.v[0],
        t_used: flow.t,
        converged: false,
    })
}

/// Yaglom limit by horizon doubling from `1/|ρ|` up to `200/|ρ|`.
///
/// Converged once `g` on a 21-point grid of `[0, 1]` and `χ(0)` move by less
/// than `1e−8` between horizons and the coefficients carry all but `1e−6`
/// of the mass. A stable but truncated iterate fails immediately, since a
/// longer horizon cannot recover mass beyond the series order.
pub fn yaglom(m: &OffspringMeasure, cfg: &SolverConfig) -> Result<YaglomLimit> {
    let rho = require_subcritical(m)?;
    cfg.validate()?;
    let rate = -rho;
    let cap = HORIZON_CAP_SCALE / rate;
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|k| k as f64 / (GRID_POINTS - 1) as f64)
        .collect();

    let mut flow = ComplementFlow::new(m, complement_series_start(cfg.series_order), cfg);
    let mut horizon = 1.0 / rate;
    let mut previous: Option<(Vec<f64>, f64)> = None;
    loop {
        flow.advance_to(horizon)?;
        let limit = limit_from_flow(&flow)?;
        let values: Vec<f64> = grid.iter().map(|&s| limit.g(s)).collect();
        if let Some((prev_values, prev_chi)) = &previous {
            let change = values
                .iter()
                .zip(prev_values)
                .map(|(a, b)| (a - b).abs())
                .fold((limit.chi0 - prev_chi).abs(), f64::max);
            log::debug!("yaglom horizon {horizon}: sup change {change:e}");
            if change < YAGLOM_SUP_TOL {
                let mass = limit.truncation_mass();
                if mass.abs() <= ALPHA_MASS_TOL {
                    return Ok(YaglomLimit {
                        converged: true,
                        ..limit
                    });
                }
                return Err(Error::YaglomNonConvergence {
                    t_used: horizon,
                    reason: format!(
                        "coefficients are stable but leave mass {mass:e} beyond order {}",
                        cfg.series_order
                    ),
                    last: Box::new(limit),
                });
            }
        }
        if horizon >= cap {
            return Err(Error::YaglomNonConvergence {
                t_used: horizon,
                reason: format!("horizon cap {cap} reached"),
                last: Box::new(limit),
            });
        }
        previous = Some((values, limit.chi0));
        horizon = (2.0 * horizon).min(cap);
    }
}

fn check_open_unit(s: f64) -> Result<()> {
    if (0.0..1.0).contains(&s) {
        Ok(())
    } else {
        domain(format!("s must lie in [0, 1), got {s}"))
    }
}

/// `ε_t(s) = ψ′_t(1) − (1 − ψ_t(s)) / (1 − s)`, with `ψ′_t(1) = e^{ρt}`.
pub fn epsilon_t(m: &OffspringMeasure, t: f64, s: f64, cfg: &SolverConfig) -> Result<f64> {
    check_open_unit(s)?;
    let chi = chi_t(m, t, s, cfg)?;
    Ok((m.growth_rate() * t).exp() * (1.0 - chi))
}

/// `(1 − ψ_t(s)) / ((1 − s) ψ′_t(1))`, nonincreasing in `t`.
pub fn chi_t(m: &OffspringMeasure, t: f64, s: f64, cfg: &SolverConfig) -> Result<f64> {
    check_open_unit(s)?;
    cfg.validate()?;
    let mut flow = ComplementFlow::new(m, vec![1.0 - s], cfg);
    flow.advance_to(t)?;
    Ok(flow.v[0] / (1.0 - s))
}

/// Coalescence bound `h` under the quasi-stationary law, optionally with a
/// population size `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QsdQuery {
    pub h: f64,
    pub p: Option<usize>,
}

impl QsdQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return domain(format!("h = {} must be positive", self.h));
        }
        if matches!(self.p, Some(p) if p < 2) {
            return domain("p must be at least 2");
        }
        Ok(())
    }
}

/// `E^{qs}(Z̃(Z̃−1) s^{Z̃−2}, T ≤ h) = g′(s)/(1 − g′(0)) · ψ″_h(s)/ψ′_h(s)`.
pub fn qsd_pair_pgf(
    m: &OffspringMeasure,
    limit: &YaglomLimit,
    q: &QsdQuery,
    s: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    q.validate()?;
    check_open_unit(s)?;
    require_subcritical(m)?;
    let gap = limit.gap()?;
    let st = psi_at(m, q.h, s, cfg)?;
    Ok(limit.g_d1(s) / gap * st.curvature_ratio()?)
}

/// `P^{qs}(T ≤ h) = (1 − g′(0))⁻¹ ∫₀¹ (1 − s) ψ″_h(s)/ψ′_h(s) g′(s) ds`.
pub fn qsd_pair_cdf(
    m: &OffspringMeasure,
    limit: &YaglomLimit,
    q: &QsdQuery,
    cfg: &SolverConfig,
) -> Result<f64> {
    q.validate()?;
    require_subcritical(m)?;
    let gap = limit.gap()?;
    let integral = integrate(
        |s| {
            let st = psi_at(m, q.h, s, cfg)?;
            Ok((1.0 - s) * st.curvature_ratio()? * limit.g_d1(s))
        },
        0.0,
        1.0,
        &QuadratureConfig::default(),
    )?;
    Ok(integral.value / gap)
}

/// `P^{qs}(Z̃ = p, T ≤ h)`: coefficient `p − 2` of `g′(s) ψ″_h(s)/ψ′_h(s)`
/// divided by `p(p − 1)(1 − g′(0))`.
pub fn qsd_pair_point(
    m: &OffspringMeasure,
    limit: &YaglomLimit,
    q: &QsdQuery,
    cfg: &SolverConfig,
) -> Result<f64> {
    q.validate()?;
    require_subcritical(m)?;
    let p = q
        .p
        .ok_or_else(|| Error::Domain("query needs a population size p".into()))?;
    let gap = limit.gap()?;
    let psi = psi_series(m, q.h, cfg)?;
    let k = psi.order();
    if p + 2 + crate::analytic::TRUNCATION_MARGIN > k {
        return Err(Error::Truncation(format!(
            "p = {p} is too close to series order {k}"
        )));
    }
    let c = psi.raw_coeffs();
    let d1: Vec<f64> = (0..k).map(|j| (j + 1) as f64 * c[j + 1]).collect();
    let d2: Vec<f64> = (0..k - 1).map(|j| ((j + 2) * (j + 1)) as f64 * c[j + 2]).collect();
    let len = p - 1;
    // Series division R = d2 / d1; d1[0] = P(Z_h = 1) > 0.
    let mut ratio = vec![0.0; len];
    for n in 0..len {
        let mut acc = d2[n];
        for j in 0..n {
            acc -= ratio[j] * d1[n - j];
        }
        ratio[n] = acc / d1[0];
    }
    let g_d1: Vec<f64> = (0..len).map(|j| (j + 1) as f64 * limit.alpha(j + 1)).collect();
    let product = series::mul(&g_d1, &ratio, len);
    Ok(product[p - 2] / ((p * (p - 1)) as f64 * gap))
}

/// `E_x(Z_t | Z_t > 0) = x ψ′_t(1) / (1 − ψ_t(0)^x)`; tends to `g′(1) = 1/χ(0)`.
pub fn mean_conditioned(m: &OffspringMeasure, x: u32, t: f64, cfg: &SolverConfig) -> Result<f64> {
    let rho = require_subcritical(m)?;
    if x < 1 {
        return domain("x must be at least 1");
    }
    cfg.validate()?;
    let mut flow = ComplementFlow::new(m, vec![1.0], cfg);
    flow.advance_to(t)?;
    let scaled = flow.v[0];
    let q = scaled * (rho * t).exp();
    let survival = one_minus_power(q, x);
    Ok(x as f64 * (rho * t).exp() / survival)
}
