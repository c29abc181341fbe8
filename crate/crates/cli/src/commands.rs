//! One function per subcommand, each producing a [`Table`].

use bgwcoal::analytic::{
    at_least_two_probability, conservation_check, multivariate_density_pgf, no_common_ancestor,
    pair_cdf, pair_density_table, MultiQuery, PairQuery, Variant, TRUNCATION_MARGIN,
};
use bgwcoal::empirical::{
    empirical_multivariate, empirical_pair_cdf, population_study, replica_seed, StudyOptions,
};
use bgwcoal::psi::{psi_at, psi_series};
use bgwcoal::qsd::{conditioned_law, qsd_pair_cdf, qsd_pair_point, yaglom, QsdQuery};
use bgwcoal::{CoalescenceReport, Error, OffspringMeasure, Regime, ReportRow, SolverConfig};

use crate::config::{Command, JobConfig};
use crate::output::Table;
use crate::CliError;

pub const DEFAULT_REPLICAS: u64 = 100_000;
const DEFAULT_BINS: usize = 4;
const DEFAULT_SAMPLE: usize = 3;
const DEFAULT_J_MAX: usize = 10;

/// Tolerances of the Yaglom checks run by `validate`.
pub const YAGLOM_MEAN_TOL: f64 = 1e-4;
pub const YAGLOM_ALPHA_TOL: f64 = 1e-6;

/// Result of a command: its table and whether every asserted check passed.
pub struct Outcome {
    pub table: Table,
    pub passed: bool,
}

impl Outcome {
    fn ok(table: Table) -> Self {
        Outcome {
            table,
            passed: true,
        }
    }
}

pub struct Job<'a> {
    pub config: &'a JobConfig,
    pub measure: OffspringMeasure,
    pub seed: u64,
    pub threads: usize,
}

impl Job<'_> {
    fn m(&self) -> &OffspringMeasure {
        &self.measure
    }

    fn cfg(&self) -> SolverConfig {
        self.config.solver()
    }

    fn x(&self) -> u32 {
        self.config.x.unwrap_or(1)
    }

    fn t(&self) -> Result<f64, CliError> {
        self.config.t.ok_or_else(|| missing("t"))
    }

    fn study(&self, stream: u64) -> StudyOptions {
        let mut opts = StudyOptions::new(
            self.config.replicas.unwrap_or(DEFAULT_REPLICAS),
            // Each study of one job draws from its own stream.
            replica_seed(self.seed, u64::MAX - stream),
        )
        .with_threads(self.threads);
        if let Some(cap) = self.config.population_cap {
            opts.population_cap = cap;
        }
        opts
    }

    fn t1_grid(&self, t: f64) -> Vec<f64> {
        self.config
            .t1
            .as_ref()
            .map(|v| v.values())
            .unwrap_or_else(|| vec![t / 4.0, t / 2.0, t])
    }
}

fn missing(key: &str) -> CliError {
    CliError::Config(format!("this command needs the `{key}` key"))
}

pub fn run(command: Command, job: &Job) -> Result<Outcome, CliError> {
    job.config.solver().validate()?;
    match command {
        Command::Psi => psi(job).map(Outcome::ok),
        Command::Series => series(job).map(Outcome::ok),
        Command::PairCdf => pair_cdf_cmd(job).map(Outcome::ok),
        Command::PairDensity => pair_density(job).map(Outcome::ok),
        Command::Multivariate => multivariate(job).map(Outcome::ok),
        Command::Qsd => qsd(job).map(Outcome::ok),
        Command::Simulate => simulate(job).map(Outcome::ok),
        Command::Validate => validate(job),
    }
}

/// Columns `t,s,psi,psi_d1,psi_d2`.
fn psi(job: &Job) -> Result<Table, CliError> {
    let times = match (&job.config.times, job.config.t) {
        (Some(ts), _) => ts.clone(),
        (None, Some(t)) => vec![t],
        (None, None) => return Err(missing("t")),
    };
    let s_grid = job.config.s.as_ref().map_or(vec![0.0], |s| s.values());
    let mut table = Table::new(&["t", "s", "psi", "psi_d1", "psi_d2"]);
    for &t in &times {
        for &s in &s_grid {
            let st = psi_at(job.m(), t, s, &job.cfg())?;
            table.push(vec![t.into(), s.into(), st.psi.into(), st.psi_d1.into(), st.psi_d2.into()]);
        }
    }
    Ok(table)
}

/// Columns `j,probability`: the law of `Z_t` from `x` founders; a final
/// `tail` row holds the mass beyond the series order.
fn series(job: &Job) -> Result<Table, CliError> {
    let law = psi_series(job.m(), job.t()?, &job.cfg())?.power(job.x());
    let mut table = Table::new(&["j", "probability"]);
    for (j, p) in law.coeffs().into_iter().enumerate() {
        table.push(vec![j.into(), p.into()]);
    }
    table.push(vec!["tail".into(), law.truncation_mass().into()]);
    Ok(table)
}

/// Columns `t1,cdf,cdf_given_two,no_common_ancestor`. `cdf_given_two` is
/// reported as 0 when two survivors are impossible.
fn pair_cdf_cmd(job: &Job) -> Result<Table, CliError> {
    let (m, cfg, x, t) = (job.m(), job.cfg(), job.x(), job.t()?);
    let p_two = at_least_two_probability(m, x, t, &cfg)?;
    let separate = no_common_ancestor(m, x, t, &cfg)?;
    let mut table = Table::new(&["t1", "cdf", "cdf_given_two", "no_common_ancestor"]);
    for t1 in job.t1_grid(t) {
        let p = pair_cdf(m, &PairQuery::new(x, t, t1), &cfg)?;
        let given = if p_two > 0.0 { p / p_two } else { 0.0 };
        table.push(vec![t1.into(), p.into(), given.into(), separate.into()]);
    }
    Ok(table)
}

/// Columns `p,density`: `P(Z_t = p, T ∈ dt1 | Z_{t−t2} = y)/dt1`.
#[allow(clippy::needless_range_loop)]
fn pair_density(job: &Job) -> Result<Table, CliError> {
    let c = job.config;
    let t = job.t()?;
    let t1 = c.t1.as_ref().ok_or_else(|| missing("t1"))?.values();
    let [t1] = t1[..] else {
        return Err(CliError::Config("pair-density takes a single t1".into()));
    };
    let q = PairQuery::conditioned(t, t1, c.t2.unwrap_or(t), c.y.unwrap_or(1));
    let cfg = job.cfg();
    let p_max = c
        .p
        .or(c.p_max)
        .unwrap_or_else(|| cfg.series_order.saturating_sub(TRUNCATION_MARGIN + 1));
    let table_values = pair_density_table(job.m(), &q, p_max, &cfg)?;
    let mut table = Table::new(&["p", "density"]);
    let first = if c.p.is_some() { p_max } else { 2 };
    for p in first.max(2)..=p_max {
        table.push(vec![p.into(), table_values[p].into()]);
    }
    Ok(table)
}

/// Columns `s,density_pgf`.
fn multivariate(job: &Job) -> Result<Table, CliError> {
    let q = MultiQuery {
        x: job.x(),
        t: job.t()?,
        times: job.config.times.clone().ok_or_else(|| missing("times"))?,
        variant: job.config.variant.unwrap_or(Variant::FirstVsOthers),
    };
    let mut table = Table::new(&["s", "density_pgf"]);
    for s in job.config.s.as_ref().map_or(vec![0.0], |s| s.values()) {
        table.push(vec![s.into(), multivariate_density_pgf(job.m(), &q, s, &job.cfg())?.into()]);
    }
    Ok(table)
}

/// Columns `quantity,value`.
fn qsd(job: &Job) -> Result<Table, CliError> {
    let (m, cfg) = (job.m(), job.cfg());
    let limit = yaglom(m, &cfg)?;
    let mut table = Table::new(&["quantity", "value"]);
    for j in 1..=job.config.j_max.unwrap_or(DEFAULT_J_MAX) {
        table.push(vec![format!("alpha[{j}]").into(), limit.alpha(j).into()]);
    }
    table.push(vec!["chi0".into(), limit.chi0.into()]);
    table.push(vec!["g_d1_at_1".into(), limit.mean().into()]);
    table.push(vec!["alpha_truncation_mass".into(), limit.truncation_mass().into()]);
    table.push(vec!["horizon_used".into(), limit.t_used.into()]);
    if let Some(h) = &job.config.h {
        for h in h.values() {
            let q = QsdQuery { h, p: job.config.p };
            table.push(vec![
                format!("qsd_pair_cdf[h={h}]").into(),
                qsd_pair_cdf(m, &limit, &q, &cfg)?.into(),
            ]);
            if let Some(p) = q.p {
                table.push(vec![
                    format!("qsd_pair_point[h={h};p={p}]").into(),
                    qsd_pair_point(m, &limit, &q, &cfg)?.into(),
                ]);
            }
        }
    }
    Ok(table)
}

/// Monte Carlo pair study and population-law checks, reported but not enforced.
fn simulate(job: &Job) -> Result<Table, CliError> {
    let (m, cfg, x, t) = (job.m(), job.cfg(), job.x(), job.t()?);
    let mut report = empirical_pair_cdf(m, x, t, &job.t1_grid(t), &job.study(1), &cfg)?.report;
    report.extend(population_study(m, x, t, &job.study(2), &cfg)?.report);
    Ok(Table::from_report(&report))
}

/// Full cross-check suite; fails when any asserted row fails.
fn validate(job: &Job) -> Result<Outcome, CliError> {
    let report = validation_report(job)?;
    let failed = report.failures().count();
    if failed > 0 {
        for r in report.failures() {
            log::warn!("check failed: {} (z = {})", r.quantity, r.z_score);
        }
    }
    Ok(Outcome {
        table: Table::from_report(&report),
        passed: failed == 0,
    })
}

pub fn validation_report(job: &Job) -> Result<CoalescenceReport, CliError> {
    let (m, cfg, x, t) = (job.m(), job.cfg(), job.x(), job.t()?);
    let mut report = CoalescenceReport::new();

    let mut founders = vec![1, 2, 5, x];
    founders.sort_unstable();
    founders.dedup();
    for &xi in &founders {
        report.extend(conservation_check(m, xi, t, &cfg)?);
    }
    log::info!("conservation checks done");

    report.extend(empirical_pair_cdf(m, x, t, &job.t1_grid(t), &job.study(1), &cfg)?.report);
    log::info!("pair study done");
    report.extend(population_study(m, x, t, &job.study(2), &cfg)?.report);
    log::info!("population study done");
    let k = job.config.k.unwrap_or(DEFAULT_SAMPLE);
    let bins = job.config.bins.unwrap_or(DEFAULT_BINS);
    report.extend(empirical_multivariate(m, x, t, k, bins, &job.study(3), &cfg)?.report);
    log::info!("multivariate study done");

    report.extend(yaglom_checks(m, &cfg)?);
    Ok(report)
}

/// Yaglom identities: unit mass, `g′(1) χ(0) = 1`, and independence of the
/// conditioned law from the founder count.
pub fn yaglom_checks(m: &OffspringMeasure, cfg: &SolverConfig) -> Result<CoalescenceReport, CliError> {
    let mut report = CoalescenceReport::new();
    if m.classify().regime != Regime::Subcritical {
        report.push(ReportRow::info("yaglom_not_applicable", 0.0, 0.0));
        return Ok(report);
    }
    let limit = yaglom(m, cfg)?;
    report.push(ReportRow::tolerance(
        "yaglom_alpha_mass",
        1.0,
        1.0 - limit.truncation_mass(),
        YAGLOM_ALPHA_TOL,
    ));
    report.push(ReportRow::tolerance(
        "yaglom_mean_times_chi0",
        1.0,
        limit.mean() * limit.chi0,
        YAGLOM_MEAN_TOL,
    ));
    let one = conditioned_law(m, 1, limit.t_used, cfg)?;
    let three = conditioned_law(m, 3, limit.t_used, cfg)?;
    let gap = (1..=DEFAULT_J_MAX)
        .map(|j| (one.coeff(j) - three.coeff(j)).abs())
        .fold(0.0, f64::max);
    report.push(ReportRow::tolerance("yaglom_founder_independence", 0.0, gap, YAGLOM_ALPHA_TOL));
    Ok(report)
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Library(e)
    }
}
