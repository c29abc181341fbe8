//! Coalescence times in continuous-time Bienaymé–Galton–Watson processes.
//!
//! The process is described by its offspring measure `μ` and the generating
//! flow `ψ_t(s) = E_1[s^{Z_t}]`. On top of the flow the crate computes exact
//! coalescence-time laws for sampled individuals, quasi-stationary limits in
//! the subcritical regime, and an exact genealogy simulator used to check them.

pub mod analytic;
pub mod empirical;
pub mod error;
mod ode;
pub mod offspring;
pub mod psi;
pub mod qsd;
pub mod quadrature;
pub mod report;
pub mod series;
pub mod simulator;

pub use analytic::{MultiQuery, PairQuery, Variant};
pub use empirical::StudyOptions;
pub use error::{Error, Result};
pub use offspring::{Criticality, OffspringMeasure, Regime};
pub use psi::{PsiState, SolverConfig};
pub use qsd::{QsdQuery, YaglomLimit};
pub use report::{CoalescenceReport, ReportRow};
pub use series::TruncatedPgf;
pub use simulator::{GenealogyForest, SampleResult};
