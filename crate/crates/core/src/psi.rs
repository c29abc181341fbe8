//! The generating function `ψ_t(s) = E₁(s^{Z_t})` and its `s`-derivatives.
//!
//! `ψ` solves `∂ψ/∂t = Φ(ψ)`, `ψ₀(s) = s`. Differentiating in `s` gives the
//! variational equations
//!
//! ```text
//! ∂ψ′/∂t = Φ′(ψ) ψ′
//! ∂ψ″/∂t = Φ″(ψ) ψ′² + Φ′(ψ) ψ″
//! ```
//!
//! which are integrated jointly with `ψ` from `(s, 1, 0)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::offspring::{check_unit, OffspringMeasure};
use crate::ode::{Dopri5, Tolerances};
use crate::series::{compose_into, TruncatedPgf};

/// Largest negative `ψ″` accepted at read time before it is treated as a solver fault.
pub const PSI_D2_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    pub series_order: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            abs_tol: 1e-11,
            rel_tol: 1e-11,
            max_step: 0.1,
            series_order: 64,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.abs_tol) || !ok(self.rel_tol) || !ok(self.max_step) {
            return domain("solver tolerances and max_step must be positive and finite");
        }
        if self.series_order < 2 {
            return domain("series_order must be at least 2");
        }
        Ok(())
    }

    pub fn with_series_order(mut self, order: usize) -> Self {
        self.series_order = order;
        self
    }

    pub(crate) fn tolerances(&self) -> Tolerances {
        Tolerances {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_step: self.max_step,
        }
    }
}

/// `(ψ_t(s), ψ′_t(s), ψ″_t(s))` at one `(t, s)` point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiState {
    pub t: f64,
    pub s: f64,
    pub psi: f64,
    pub psi_d1: f64,
    pub psi_d2: f64,
}

impl PsiState {
    pub fn initial(s: f64) -> Self {
        PsiState {
            t: 0.0,
            s,
            psi: s,
            psi_d1: 1.0,
            psi_d2: 0.0,
        }
    }

    /// `ψ″/ψ′`, the factor carrying the coalescence bound in the pair formulas.
    pub fn curvature_ratio(&self) -> Result<f64> {
        if self.psi_d1 <= 0.0 {
            return Err(Error::Domain(format!(
                "ψ′_{}({}) = {} is not positive",
                self.t, self.s, self.psi_d1
            )));
        }
        Ok(self.psi_d2 / self.psi_d1)
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        domain(format!("time t = {t} must be finite and non-negative"))
    }
}

pub fn psi_at(m: &OffspringMeasure, t: f64, s: f64, cfg: &SolverConfig) -> Result<PsiState> {
    Ok(psi_at_times(m, s, &[t], cfg)?[0])
}

/// ψ-states at several times for one `s`, from a single trajectory.
/// Output order follows `times`.
pub fn psi_at_times(
    m: &OffspringMeasure,
    s: f64,
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<PsiState>> {
    check_unit(s)?;
    cfg.validate()?;
    for &t in times {
        check_time(t)?;
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut out = vec![PsiState::initial(s); times.len()];
    let mut y = [s, 1.0, 0.0];
    let mut now = 0.0;
    let mut solver = Dopri5::new(3, cfg.tolerances());
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let p = y[0];
        let d1 = m.phi_d1_unchecked(p);
        dy[0] = m.phi_unchecked(p);
        dy[1] = d1 * y[1];
        dy[2] = m.phi_d2_unchecked(p) * y[1] * y[1] + d1 * y[2];
    };
    for idx in order {
        let target = times[idx];
        solver.integrate(&mut y, now, target, rhs, |y| y[0] = y[0].clamp(0.0, 1.0))?;
        now = now.max(target);
        out[idx] = read_state(target, s, &y)?;
    }
    Ok(out)
}

fn read_state(t: f64, s: f64, y: &[f64]) -> Result<PsiState> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure {
            t_reached: t,
            reason: "non-finite ψ state".into(),
        });
    }
    if y[2] < -PSI_D2_TOL {
        return Err(Error::SolverFailure {
            t_reached: t,
            reason: format!("ψ″ = {:e} is negative beyond tolerance", y[2]),
        });
    }
    Ok(PsiState {
        t,
        s,
        psi: y[0],
        psi_d1: y[1],
        psi_d2: y[2].max(0.0),
    })
}

/// Measures for which `ψ_t` has an elementary closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClosedForm {
    /// `μ = {0: rate}`.
    PureDeath { rate: f64 },
    /// `μ = {0: death, 2: birth}` with `death ≠ birth`.
    Binary { death: f64, birth: f64 },
}

impl ClosedForm {
    pub fn for_measure(m: &OffspringMeasure) -> Result<Self> {
        match m.support() {
            [(0, d)] => Ok(ClosedForm::PureDeath { rate: *d }),
            [(0, c), (2, b)] if c != b => Ok(ClosedForm::Binary {
                death: *c,
                birth: *b,
            }),
            _ => Err(Error::UnsupportedMeasure(format!(
                "{m} is neither pure death nor non-critical binary splitting"
            ))),
        }
    }
}

/// `ψ_t(s)` and its exact `s`-derivatives for [`ClosedForm`] measures.
///
/// Pure death: `Φ(ψ) = d (1 − ψ)` is linear, so `1 − ψ_t(s) = e^{−dt}(1 − s)`.
///
/// Binary: write `u = 1 − ψ` and `λ = c − b`. Then `Φ(ψ) = (1 − ψ)(c − bψ)`
/// and `du/dt = −u (λ + b u)`. With `F(s) = ∫₀ˢ dv/Φ(v) =
/// λ⁻¹ ln((c − bs) / (c(1 − s)))`, the identity `F(ψ_t(s)) = t + F(s)` reads
///
/// ```text
/// u / (λ + b u) = e^{−λt} u₀ / (λ + b u₀),   u₀ = 1 − s,
/// ```
///
/// which is linear-fractional in `u₀`: with `E = e^{−λt}`, `A = λE`,
/// `B = b(1 − E)` and `D = λ + B u₀`,
///
/// ```text
/// u = A u₀ / D,   ψ′ = du/du₀ = A λ / D²,   ψ″ = −d²u/du₀² = 2 A B λ / D³.
/// ```
///
/// The same expressions hold for `λ < 0` (supercritical), where `A`, `B`
/// and `D` are all negative.
pub fn closed_form_psi(kind: ClosedForm, t: f64, s: f64) -> Result<PsiState> {
    check_unit(s)?;
    check_time(t)?;
    match kind {
        ClosedForm::PureDeath { rate } => {
            let e = (-rate * t).exp();
            Ok(PsiState {
                t,
                s,
                psi: 1.0 - e * (1.0 - s),
                psi_d1: e,
                psi_d2: 0.0,
            })
        }
        ClosedForm::Binary { death, birth } => {
            if death == birth {
                return Err(Error::UnsupportedMeasure(
                    "critical binary splitting has no linear-fractional form here".into(),
                ));
            }
            let lambda = death - birth;
            let e = (-lambda * t).exp();
            let a = lambda * e;
            let b = birth * -(-lambda * t).exp_m1();
            let u0 = 1.0 - s;
            let d = lambda + b * u0;
            Ok(PsiState {
                t,
                s,
                psi: 1.0 - a * u0 / d,
                psi_d1: a * lambda / (d * d),
                psi_d2: 2.0 * a * b * lambda / (d * d * d),
            })
        }
    }
}

/// Coefficients `P₁(Z_t = j)`, `j ≤ K`, by integrating the coefficient-space
/// ODE `dc/dt = [Φ(Σ c_j s^j)]_{≤K}` from `c = e₁`.
pub fn psi_series(m: &OffspringMeasure, t: f64, cfg: &SolverConfig) -> Result<TruncatedPgf> {
    check_time(t)?;
    cfg.validate()?;
    let len = cfg.series_order + 1;
    let mut c = vec![0.0; len];
    c[1] = 1.0;
    let poly = m.phi_poly();
    let mut scratch = vec![0.0; len];
    let mut solver = Dopri5::new(len, cfg.tolerances());
    solver.integrate(
        &mut c,
        0.0,
        t,
        |_t, y, dy| compose_into(&poly, y, dy, &mut scratch),
        |_| {},
    )?;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure {
            t_reached: t,
            reason: "non-finite series coefficient".into(),
        });
    }
    Ok(TruncatedPgf::from_coeffs(c))
}

/// Integrates the rescaled complement `V(t) = (1 − ψ_t) e^{−ρt}`, `ρ = Φ′(1)`,
/// as a truncated series in `s`.
///
/// With `Φ(1 − q) = Σ_k b_k (−q)^k` (so `b_1 = ρ`), `V` obeys
/// `dV/dt = −Σ_{k≥2} b_k (−1)^k e^{(k−1)ρt} V^k`. This keeps full relative
/// precision when `ψ_t` is within rounding of 1, which plain `ψ` integration
/// cannot.
pub(crate) struct ComplementFlow {
    rho: f64,
    taylor: Vec<f64>,
    solver: Dopri5,
    pub t: f64,
    pub v: Vec<f64>,
}

impl ComplementFlow {
    /// Starts from `V₀ = initial` (e.g. `[1 − s]` for a point, `[1, −1, 0, …]`
    /// for the full series of `1 − s`).
    pub fn new(m: &OffspringMeasure, initial: Vec<f64>, cfg: &SolverConfig) -> Self {
        let dim = initial.len();
        ComplementFlow {
            rho: m.growth_rate(),
            taylor: m.phi_taylor_at_one(),
            solver: Dopri5::new(dim, cfg.tolerances()),
            t: 0.0,
            v: initial,
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn advance_to(&mut self, target: f64) -> Result<()> {
        check_time(target)?;
        let len = self.v.len();
        let rho = self.rho;
        let taylor = &self.taylor;
        let mut poly = vec![0.0; taylor.len()];
        let mut scratch = vec![0.0; len];
        self.solver.integrate(
            &mut self.v,
            self.t,
            target,
            |t, y, dy| {
                for (k, pk) in poly.iter_mut().enumerate() {
                    *pk = if k < 2 {
                        0.0
                    } else {
                        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
                        sign * taylor[k] * ((k - 1) as f64 * rho * t).exp()
                    };
                }
                compose_into(&poly, y, dy, &mut scratch);
            },
            |_| {},
        )?;
        self.t = self.t.max(target);
        if self.v.iter().any(|x| !x.is_finite()) {
            return Err(Error::SolverFailure {
                t_reached: self.t,
                reason: "non-finite complement state".into(),
            });
        }
        Ok(())
    }
}

/// `(1 − ψ_t(s)) e^{−Φ′(1) t}`, accurate to relative tolerance even when
/// `1 − ψ_t(s)` underflows the absolute tolerance.
pub fn scaled_complement(m: &OffspringMeasure, t: f64, s: f64, cfg: &SolverConfig) -> Result<f64> {
    check_unit(s)?;
    cfg.validate()?;
    let mut flow = ComplementFlow::new(m, vec![1.0 - s], cfg);
    flow.advance_to(t)?;
    Ok(flow.v[0])
}

/// `P_x(Z_t > 0) = 1 − ψ_t(0)^x`, computed without cancellation.
pub fn survival_probability(
    m: &OffspringMeasure,
    x: u32,
    t: f64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let q = scaled_complement(m, t, 0.0, cfg)? * (m.growth_rate() * t).exp();
    Ok(one_minus_power(q, x))
}

/// `1 − (1 − q)^x` without cancellation for small `q`.
pub(crate) fn one_minus_power(q: f64, x: u32) -> f64 {
    if q >= 1.0 {
        return if x == 0 { 0.0 } else { 1.0 };
    }
    -(x as f64 * (-q).ln_1p()).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn initial_condition() {
        let m = OffspringMeasure::binary(2.0, 1.0).unwrap();
        let st = psi_at(&m, 0.0, 0.4, &cfg()).unwrap();
        assert_eq!((st.psi, st.psi_d1, st.psi_d2), (0.4, 1.0, 0.0));
        let cf = closed_form_psi(ClosedForm::Binary { death: 2.0, birth: 1.0 }, 0.0, 0.3).unwrap();
        assert_abs_diff_eq!(cf.psi, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(cf.psi_d1, 1.0, epsilon = 1e-15);
        assert_eq!(cf.psi_d2, 0.0);
    }

    #[test]
    fn pure_death_values() {
        let m = OffspringMeasure::pure_death(1.0).unwrap();
        let st = psi_at(&m, 1.0, 0.0, &cfg()).unwrap();
        let e1 = (-1.0f64).exp();
        assert_abs_diff_eq!(st.psi, 1.0 - e1, epsilon = 1e-10);
        assert_abs_diff_eq!(st.psi_d1, e1, epsilon = 1e-10);
        assert_eq!(st.psi_d2, 0.0);
        let cf = closed_form_psi(ClosedForm::PureDeath { rate: 1.0 }, 2.0, 0.5).unwrap();
        assert_abs_diff_eq!(cf.psi, 1.0 - 0.5 * (-2.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(cf.psi, 0.932332, epsilon = 1e-6);
    }

    #[test]
    fn binary_closed_form_value() {
        // u/(1+u) = e^{-1}/2 with u = 1 - ψ.
        let r = (-1.0f64).exp() / 2.0;
        let want = 1.0 - r / (1.0 - r);
        let cf = closed_form_psi(ClosedForm::Binary { death: 2.0, birth: 1.0 }, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(cf.psi, want, epsilon = 1e-15);
        assert_abs_diff_eq!(cf.psi, 0.774601, epsilon = 1e-6);
        let m = OffspringMeasure::binary(2.0, 1.0).unwrap();
        let st = psi_at(&m, 1.0, 0.0, &cfg()).unwrap();
        assert_abs_diff_eq!(st.psi, want, epsilon = 1e-10);
    }

    #[test]
    fn closed_form_rejects_other_measures() {
        let m = OffspringMeasure::new([(0, 1.0), (3, 1.0)]).unwrap();
        assert!(matches!(
            ClosedForm::for_measure(&m),
            Err(Error::UnsupportedMeasure(_))
        ));
        let critical = OffspringMeasure::binary(1.0, 1.0).unwrap();
        assert!(ClosedForm::for_measure(&critical).is_err());
    }

    #[test]
    fn domain_errors() {
        let m = OffspringMeasure::binary(2.0, 1.0).unwrap();
        assert!(matches!(psi_at(&m, 1.0, 1.2, &cfg()), Err(Error::Domain(_))));
        assert!(matches!(psi_at(&m, -1.0, 0.2, &cfg()), Err(Error::Domain(_))));
        let bad = SolverConfig {
            series_order: 1,
            ..cfg()
        };
        assert!(psi_series(&m, 1.0, &bad).is_err());
    }

    #[test]
    fn series_for_pure_death() {
        let m = OffspringMeasure::pure_death(1.0).unwrap();
        let p = psi_series(&m, 1.0, &cfg().with_series_order(4)).unwrap();
        let e1 = (-1.0f64).exp();
        assert_abs_diff_eq!(p.coeff(0), 1.0 - e1, epsilon = 1e-10);
        assert_abs_diff_eq!(p.coeff(1), e1, epsilon = 1e-10);
        for j in 2..=4 {
            assert_eq!(p.coeff(j), 0.0);
        }
        let p0 = psi_series(&m, 0.0, &cfg().with_series_order(4)).unwrap();
        assert_eq!(p0.raw_coeffs(), &[0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn series_agrees_with_pointwise_solution() {
        let m = OffspringMeasure::binary(2.0, 1.0).unwrap();
        let p = psi_series(&m, 1.0, &cfg()).unwrap();
        assert!(p.truncation_mass().abs() <= 1e-8);
        for k in 0..=9 {
            let s = k as f64 / 10.0;
            let st = psi_at(&m, 1.0, s, &cfg()).unwrap();
            assert_abs_diff_eq!(p.eval(s), st.psi, epsilon = 1e-8);
        }
    }

    #[test]
    fn complement_matches_direct_at_moderate_time() {
        let m = OffspringMeasure::new([(0, 1.0), (2, 1.0), (3, 0.5)]).unwrap();
        for &(t, s) in &[(0.5, 0.0), (1.0, 0.3), (2.0, 0.9)] {
            let st = psi_at(&m, t, s, &cfg()).unwrap();
            let v = scaled_complement(&m, t, s, &cfg()).unwrap();
            let direct = (1.0 - st.psi) * (-m.growth_rate() * t).exp();
            assert_abs_diff_eq!(v, direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn complement_keeps_relative_precision() {
        // Binary(2,1): 1 - ψ_t(0) = r/(1-r), r = e^{-t}/2.
        let m = OffspringMeasure::binary(2.0, 1.0).unwrap();
        let t: f64 = 30.0;
        let r = (-t).exp() / 2.0;
        let want = r / (1.0 - r) * t.exp();
        let got = scaled_complement(&m, t, 0.0, &cfg()).unwrap();
        assert!((got / want - 1.0).abs() < 1e-9, "{got} vs {want}");
        let surv = survival_probability(&m, 3, t, &cfg()).unwrap();
        let q = r / (1.0 - r);
        assert!((surv / (3.0 * q - 3.0 * q * q + q * q * q) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn one_minus_power_edges() {
        assert_eq!(one_minus_power(0.3, 0), 0.0);
        assert_abs_diff_eq!(one_minus_power(0.3, 2), 1.0 - 0.49, epsilon = 1e-15);
        assert_eq!(one_minus_power(1.0, 4), 1.0);
        assert_abs_diff_eq!(one_minus_power(1e-12, 3), 3e-12, epsilon = 1e-23);
    }
}
