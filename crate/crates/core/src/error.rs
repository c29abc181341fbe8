use thiserror::Error;

/// Errors raised by the analytic and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid offspring measure: {0}")]
    InvalidMeasure(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ODE solver failed at t = {t_reached}: {reason}")]
    SolverFailure { t_reached: f64, reason: String },

    #[error("quadrature did not converge: estimate {estimate:e}, error bound {error_bound:e}")]
    QuadratureNonConvergence { estimate: f64, error_bound: f64 },

    #[error("series truncation too coarse: {0}")]
    Truncation(String),

    #[error("unsupported measure for closed form: {0}")]
    UnsupportedMeasure(String),

    #[error("measure is not subcritical (growth rate {growth_rate})")]
    NotSubcritical { growth_rate: f64 },

    #[error("Yaglom limit did not converge by t = {t_used}: {reason}")]
    YaglomNonConvergence {
        t_used: f64,
        reason: String,
        last: Box<crate::qsd::YaglomLimit>,
    },

    #[error("degenerate quasi-stationary law: 1 - g'(0) = {gap:e}, no mass on two or more survivors")]
    DegenerateQsd { gap: f64 },

    #[error("population {population} exceeded the cap of {cap} individuals at t = {time}")]
    PopulationExplosion { population: usize, cap: usize, time: f64 },

    #[error("insufficient population: need {needed} individuals, {alive} alive")]
    InsufficientPopulation { needed: usize, alive: usize },
}

impl Error {
    /// True for errors that come from numerical machinery rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SolverFailure { .. }
                | Error::QuadratureNonConvergence { .. }
                | Error::Truncation(_)
                | Error::YaglomNonConvergence { .. }
                | Error::PopulationExplosion { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
