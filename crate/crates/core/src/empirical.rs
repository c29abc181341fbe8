//! Replicated simulation studies compared against the analytic layer.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    at_least_two_probability, multivariate_box_probability, no_common_ancestor,
    order_statistics_factor, pair_cdf, PairQuery, Variant,
};
use crate::error::{domain, Error, Result};
use crate::offspring::OffspringMeasure;
use crate::psi::{psi_series, SolverConfig};
use crate::report::{CoalescenceReport, ReportRow};
use crate::simulator::{sample_and_trace, simulate_with, SampleResult, SimulationConfig};

/// Smallest expected count for a multivariate cell to be tested.
pub const MIN_CELL_EXPECTED: f64 = 50.0;
/// Smallest expected count for a population-histogram cell to be tested.
pub const MIN_HISTOGRAM_EXPECTED: f64 = 10.0;

/// Seed of replica `r`, derived from the master seed with a splitmix64 step.
pub fn replica_seed(master: u64, replica: u64) -> u64 {
    let mut z = master ^ replica.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub replicas: u64,
    pub master_seed: u64,
    /// Worker threads; 0 uses the global rayon pool.
    pub threads: usize,
    pub population_cap: usize,
}

impl StudyOptions {
    pub fn new(replicas: u64, master_seed: u64) -> Self {
        StudyOptions {
            replicas,
            master_seed,
            threads: 0,
            population_cap: SimulationConfig::default().population_cap,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return domain("at least one replica is required");
        }
        Ok(())
    }
}

/// Outcome of one replica: `Z_t` and, when `Z_t ≥ k`, the traced sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaOutcome {
    pub population: u64,
    pub sample: Option<SampleResult>,
}

/// Runs the replicas, in parallel when allowed; output is in replica order and
/// depends only on the master seed.
pub fn run_replicas(
    m: &OffspringMeasure,
    x: u32,
    t: f64,
    k: usize,
    opts: &StudyOptions,
) -> Result<Vec<ReplicaOutcome>> {
    opts.validate()?;
    let sim_cfg = SimulationConfig {
        population_cap: opts.population_cap,
    };
    let one = |r: u64| -> Result<ReplicaOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(replica_seed(opts.master_seed, r));
        let forest = simulate_with(m, x, t, &mut rng, &sim_cfg)?;
        let sample = if k > 0 && forest.population() >= k {
            Some(sample_and_trace(&forest, k, &mut rng)?)
        } else {
            None
        };
        Ok(ReplicaOutcome {
            population: forest.population() as u64,
            sample,
        })
    };
    let run = || (0..opts.replicas).into_par_iter().map(one).collect();
    if opts.threads == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .map_err(|e| Error::Domain(format!("cannot build thread pool: {e}")))?
            .install(run)
    }
}

/// Empirical distribution of a sample that may contain `+∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        EmpiricalCdf { sorted: values }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn count_at_most(&self, v: f64) -> usize {
        self.sorted.partition_point(|&s| s <= v)
    }

    pub fn cdf(&self, v: f64) -> f64 {
        if self.is_empty() {
            return f64::NAN;
        }
        self.count_at_most(v) as f64 / self.len() as f64
    }

    /// Binomial standard error `√(p̂(1 − p̂)/N)`.
    pub fn se(&self, v: f64) -> f64 {
        binomial_se(self.cdf(v), self.len() as f64)
    }

    /// Pools two samples; the result does not depend on the order of merging.
    pub fn merge(&self, other: &EmpiricalCdf) -> EmpiricalCdf {
        let mut all = self.sorted.clone();
        all.extend_from_slice(&other.sorted);
        EmpiricalCdf::new(all)
    }
}

fn binomial_se(p: f64, n: f64) -> f64 {
    (p * (1.0 - p) / n).sqrt()
}

/// Frequency row with the plug-in standard error `√(p̂(1 − p̂)/N)`. When every
/// replica or none falls in the event that error is zero, so the one of the
/// analytic value is used instead.
fn proportion_row(quantity: String, analytic: f64, hits: usize, n: usize) -> ReportRow {
    let nf = n as f64;
    let p = hits as f64 / nf;
    let se = if hits == 0 || hits == n {
        binomial_se(analytic.clamp(0.0, 1.0), nf)
    } else {
        binomial_se(p, nf)
    };
    ReportRow::statistical(quantity, analytic, p, se)
}

/// Result of a pair-coalescence study.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCdfStudy {
    /// One value per replica; `∞` when `Z_t < 2` or the pair has no common ancestor.
    pub unconditional: EmpiricalCdf,
    /// Pair times of replicas with `Z_t ≥ 2` only.
    pub conditional: EmpiricalCdf,
    pub replicas: u64,
    pub fewer_than_two: u64,
    pub no_common_ancestor: u64,
    pub report: CoalescenceReport,
}

/// Estimates `P_x^{(t)}(T ≤ t1)` on a grid, both unconditionally and given
/// `Z_t ≥ 2`, and compares with the analytic values.
pub fn empirical_pair_cdf(
    m: &OffspringMeasure,
    x: u32,
    t: f64,
    t1_grid: &[f64],
    opts: &StudyOptions,
    cfg: &SolverConfig,
) -> Result<PairCdfStudy> {
    let outcomes = run_replicas(m, x, t, 2, opts)?;
    let mut all = Vec::with_capacity(outcomes.len());
    let mut given_two = Vec::new();
    let mut fewer_than_two = 0u64;
    let mut separate = 0u64;
    for o in &outcomes {
        match &o.sample {
            Some(s) => {
                let time = s.pairwise(0, 1);
                if time.is_infinite() {
                    separate += 1;
                }
                all.push(time);
                given_two.push(time);
            }
            None => {
                fewer_than_two += 1;
                all.push(f64::INFINITY);
            }
        }
    }
    let unconditional = EmpiricalCdf::new(all);
    let conditional = EmpiricalCdf::new(given_two);
    let p_two = at_least_two_probability(m, x, t, cfg)?;

    let mut report = CoalescenceReport::new();
    for &t1 in t1_grid {
        let analytic = pair_cdf(m, &PairQuery::new(x, t, t1), cfg)?;
        report.push(proportion_row(
            format!("pair_cdf[x={x};t={t};t1={t1}]"),
            analytic,
            unconditional.count_at_most(t1),
            unconditional.len(),
        ));
        if !conditional.is_empty() && p_two > 0.0 {
            report.push(proportion_row(
                format!("pair_cdf_given_two[x={x};t={t};t1={t1}]"),
                analytic / p_two,
                conditional.count_at_most(t1),
                conditional.len(),
            ));
        }
    }
    let n = outcomes.len();
    report.push(proportion_row(
        format!("no_common_ancestor[x={x};t={t}]"),
        no_common_ancestor(m, x, t, cfg)?,
        separate as usize,
        n,
    ));
    report.push(proportion_row(
        format!("fewer_than_two[x={x};t={t}]"),
        1.0 - p_two,
        fewer_than_two as usize,
        n,
    ));
    Ok(PairCdfStudy {
        unconditional,
        conditional,
        replicas: opts.replicas,
        fewer_than_two,
        no_common_ancestor: separate,
        report,
    })
}

/// Replica counts for one cell of the `(k−1)`-dimensional time grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    /// Replicas whose `T` vector falls in the cell.
    pub t: u64,
    /// Replicas whose `T*` vector falls in the cell.
    pub t_star: u64,
    /// Replicas where both do.
    pub both: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateStudy {
    pub k: usize,
    pub bins: usize,
    pub replicas: u64,
    pub cells: BTreeMap<Vec<usize>, CellCounts>,
    /// Replicas with `Z_t < k`.
    pub insufficient: u64,
    /// Replicas whose sample has some infinite coalescence time.
    pub infinite: u64,
    /// Replicas whose sample genealogy has a multiple merger.
    pub tied: u64,
    /// First-sampled marginal `T_1`, `∞` where undefined.
    pub first_pair: EmpiricalCdf,
    pub report: CoalescenceReport,
}

/// Histograms `T` and `T*` over `bins` equal bins per axis on `[0, t]` and
/// tests, in every strictly ordered cell with enough expected mass, both the
/// cell probabilities and the ratio `P(T* ∈ cell)/P(T ∈ cell) = n!(n+1)!/2ⁿ`.
pub fn empirical_multivariate(
    m: &OffspringMeasure,
    x: u32,
    t: f64,
    k: usize,
    bins: usize,
    opts: &StudyOptions,
    cfg: &SolverConfig,
) -> Result<MultivariateStudy> {
    if k < 2 {
        return domain("sample size k must be at least 2");
    }
    if bins == 0 {
        return domain("at least one bin is required");
    }
    let outcomes = run_replicas(m, x, t, k, opts)?;
    let width = t / bins as f64;
    let locate = |v: &[f64]| -> Option<Vec<usize>> {
        v.iter()
            .map(|&ti| ti.is_finite().then(|| ((ti / width) as usize).min(bins - 1)))
            .collect()
    };

    let mut cells: BTreeMap<Vec<usize>, CellCounts> = BTreeMap::new();
    let (mut insufficient, mut infinite, mut tied) = (0, 0, 0);
    let mut first_pair = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        let Some(s) = &o.sample else {
            insufficient += 1;
            first_pair.push(f64::INFINITY);
            continue;
        };
        first_pair.push(s.pairwise(0, 1));
        let tv = s.t_vector();
        let ts = s.t_star();
        if s.has_tied_merges() {
            tied += 1;
        }
        if tv.iter().chain(&ts).any(|v| v.is_infinite()) {
            infinite += 1;
        }
        let ct = locate(&tv);
        let cs = locate(&ts);
        if let Some(c) = &ct {
            cells.entry(c.clone()).or_default().t += 1;
        }
        if let Some(c) = &cs {
            let e = cells.entry(c.clone()).or_default();
            e.t_star += 1;
            if ct.as_ref() == Some(c) {
                e.both += 1;
            }
        }
    }

    let n = opts.replicas as f64;
    let dims = k - 1;
    let factor = order_statistics_factor(dims);
    let mut report = CoalescenceReport::new();
    for (cell, counts) in &cells {
        if cell.windows(2).any(|w| w[0] >= w[1]) {
            continue;
        }
        let bounds: Vec<(f64, f64)> = cell
            .iter()
            .map(|&i| (i as f64 * width, ((i + 1) as f64 * width).min(t)))
            .collect();
        let star = multivariate_box_probability(m, x, t, &bounds, Variant::OrderStatistics, cfg)?;
        let base = star / factor;
        if n * base < MIN_CELL_EXPECTED {
            continue;
        }
        let label = cell.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(":");
        let total = outcomes.len();
        report.push(proportion_row(format!("t_cell[{label}]"), base, counts.t as usize, total));
        report.push(proportion_row(
            format!("t_star_cell[{label}]"),
            star,
            counts.t_star as usize,
            total,
        ));
        report.push(ratio_row(&label, factor, counts, n));
    }
    let tested = report.rows.len();
    report.push(ReportRow::info("multivariate_cells_tested", tested as f64 / 3.0, tested as f64 / 3.0));
    report.push(ReportRow::info("multiple_merger_fraction", tied as f64 / n, tied as f64 / n));
    Ok(MultivariateStudy {
        k,
        bins,
        replicas: opts.replicas,
        cells,
        insufficient,
        infinite,
        tied,
        first_pair: EmpiricalCdf::new(first_pair),
        report,
    })
}

/// Ratio test on paired indicators: `D = 1[T* ∈ c] − r·1[T ∈ c]` has mean zero
/// under the claimed ratio `r`. Reported on the ratio scale with a delta-method
/// standard error, which leaves the z-score that of `D̄`.
fn ratio_row(label: &str, ratio: f64, c: &CellCounts, n: f64) -> ReportRow {
    let (a, b, ab) = (c.t_star as f64 / n, c.t as f64 / n, c.both as f64 / n);
    let mean_d = a - ratio * b;
    let var_d = a + ratio * ratio * b - 2.0 * ratio * ab - mean_d * mean_d;
    let se_d = (var_d.max(0.0) / n).sqrt();
    let empirical = if b > 0.0 { a / b } else { f64::INFINITY };
    let se = if b > 0.0 { se_d / b } else { f64::INFINITY };
    let mut row = ReportRow::statistical(format!("t_star_over_t_ratio[{label}]"), ratio, empirical, se);
    if b > 0.0 && se_d > 0.0 {
        row.z_score = mean_d / se_d;
        row.pass = row.z_score.abs() <= crate::report::Z_THRESHOLD;
    }
    row
}

/// Distribution of `Z_t` over the replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationStudy {
    pub replicas: u64,
    pub histogram: BTreeMap<u64, u64>,
    pub report: CoalescenceReport,
}

impl PopulationStudy {
    pub fn mean(&self) -> f64 {
        let total: u128 = self.histogram.iter().map(|(&z, &c)| z as u128 * c as u128).sum();
        total as f64 / self.replicas as f64
    }
}

/// Compares the simulated `Z_t` with its analytic mean `x e^{ρt}`, extinction
/// probability `ψ_t(0)^x` and point masses from the series of `ψ_t^x`.
pub fn population_study(
    m: &OffspringMeasure,
    x: u32,
    t: f64,
    opts: &StudyOptions,
    cfg: &SolverConfig,
) -> Result<PopulationStudy> {
    let outcomes = run_replicas(m, x, t, 0, opts)?;
    let mut histogram = BTreeMap::new();
    let (mut sum, mut sum_sq) = (0u128, 0u128);
    for o in &outcomes {
        *histogram.entry(o.population).or_insert(0u64) += 1;
        sum += o.population as u128;
        sum_sq += (o.population as u128) * (o.population as u128);
    }
    let n = opts.replicas as f64;
    let mean = sum as f64 / n;
    let var = (sum_sq as f64 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);

    let mut report = CoalescenceReport::new();
    let analytic_mean = x as f64 * (m.growth_rate() * t).exp();
    report.push(ReportRow::statistical(
        format!("population_mean[x={x};t={t}]"),
        analytic_mean,
        mean,
        (var / n).sqrt(),
    ));
    let law = psi_series(m, t, cfg)?.power(x);
    let count = |j: u64| histogram.get(&j).copied().unwrap_or(0) as usize;
    let total = outcomes.len();
    report.push(proportion_row(
        format!("extinction[x={x};t={t}]"),
        law.coeff(0),
        count(0),
        total,
    ));
    let top = law.order().saturating_sub(crate::analytic::TRUNCATION_MARGIN);
    for j in 1..top {
        let expected = law.coeff(j);
        if n * expected < MIN_HISTOGRAM_EXPECTED {
            continue;
        }
        report.push(proportion_row(
            format!("population_mass[x={x};t={t};j={j}]"),
            expected,
            count(j as u64),
            total,
        ));
    }
    Ok(PopulationStudy {
        replicas: opts.replicas,
        histogram,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_per_replica() {
        let a: Vec<u64> = (0..100).map(|r| replica_seed(42, r)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(replica_seed(1, 0), replica_seed(2, 0));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let m = OffspringMeasure::binary(2.0, 1.0).unwrap();
        let one = run_replicas(&m, 2, 1.0, 2, &StudyOptions::new(300, 5).with_threads(1)).unwrap();
        let four = run_replicas(&m, 2, 1.0, 2, &StudyOptions::new(300, 5).with_threads(4)).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn empirical_cdf_handles_infinity() {
        let c = EmpiricalCdf::new(vec![f64::INFINITY, 0.5, 0.1, 2.0]);
        assert_eq!(c.cdf(0.5), 0.5);
        assert_eq!(c.cdf(f64::MAX), 0.75);
        let merged_ab = c.merge(&EmpiricalCdf::new(vec![0.3]));
        let merged_ba = EmpiricalCdf::new(vec![0.3]).merge(&c);
        assert_eq!(merged_ab, merged_ba);
    }

    #[test]
    fn pure_death_never_coalesces() {
        let m = OffspringMeasure::pure_death(1.0).unwrap();
        let s = empirical_pair_cdf(
            &m,
            5,
            0.5,
            &[0.25, 0.5],
            &StudyOptions::new(2000, 1),
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(s.unconditional.cdf(0.5), 0.0);
        assert!(s.report.passed(), "{}", s.report.to_csv());
    }

    #[test]
    fn ratio_row_is_neutral_at_exact_ratio() {
        let c = CellCounts { t: 100, t_star: 300, both: 80 };
        let row = ratio_row("0:1", 3.0, &c, 10_000.0);
        assert!(row.z_score.abs() < 1e-12);
        assert!((row.empirical - 3.0).abs() < 1e-12);
    }
}
