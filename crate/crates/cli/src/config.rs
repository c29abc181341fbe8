//! JSON job configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use bgwcoal::{OffspringMeasure, SolverConfig, Variant};
use serde::{Deserialize, Deserializer, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Psi,
    Series,
    PairCdf,
    PairDensity,
    Multivariate,
    Qsd,
    Simulate,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Psi => "psi",
            Command::Series => "series",
            Command::PairCdf => "pair-cdf",
            Command::PairDensity => "pair-density",
            Command::Multivariate => "multivariate",
            Command::Qsd => "qsd",
            Command::Simulate => "simulate",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "defaults::abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "defaults::rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "defaults::max_step")]
    pub max_step: f64,
    #[serde(default = "defaults::series_order")]
    pub series_order: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let c = SolverConfig::default();
        Tolerances {
            abs_tol: c.abs_tol,
            rel_tol: c.rel_tol,
            max_step: c.max_step,
            series_order: c.series_order,
        }
    }
}

mod defaults {
    use bgwcoal::SolverConfig;
    pub fn abs_tol() -> f64 {
        SolverConfig::default().abs_tol
    }
    pub fn rel_tol() -> f64 {
        SolverConfig::default().rel_tol
    }
    pub fn max_step() -> f64 {
        SolverConfig::default().max_step
    }
    pub fn series_order() -> usize {
        SolverConfig::default().series_order
    }
}

/// A scalar or a list of scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Every key a command may read; keys a command does not use are ignored by
/// it, keys outside this list are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    /// Offspring rates keyed by offspring count; checked when the job runs.
    pub measure: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Several evaluation times (`psi`) or the ordered coalescence times (`multivariate`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max: Option<usize>,
    /// Number of Yaglom coefficients listed by `qsd`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(
        rename = "N",
        default,
        deserialize_with = "count",
        skip_serializing_if = "Option::is_none"
    )]
    pub replicas: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_cap: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

/// Accepts `100000` as well as `1e5`.
fn count<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
    let v = f64::deserialize(d)?;
    if v.fract() != 0.0 || !(1.0..=9.007_199_254_740_992e15).contains(&v) {
        return Err(serde::de::Error::custom(format!(
            "N must be a positive integer, got {v}"
        )));
    }
    Ok(Some(v as u64))
}

impl JobConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn offspring_measure(&self) -> bgwcoal::Result<OffspringMeasure> {
        OffspringMeasure::try_from(self.measure.clone())
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            abs_tol: self.tolerances.abs_tol,
            rel_tol: self.tolerances.rel_tol,
            max_step: self.tolerances.max_step,
            series_order: self.tolerances.series_order,
        }
    }
}
