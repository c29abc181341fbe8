//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::process::Command;
use std::time::{Duration, Instant};

use bgwcoal::analytic::{
    conservation_check, multivariate_box_probability, multivariate_density_pgf, no_common_ancestor,
    order_statistics_factor, pair_cdf, pair_density_table, pair_pgf_conditioned_rate, MultiQuery,
    PairQuery, Variant,
};
use bgwcoal::empirical::{empirical_multivariate, empirical_pair_cdf, population_study, StudyOptions};
use bgwcoal::psi::{closed_form_psi, psi_at, ClosedForm};
use bgwcoal::qsd::{conditioned_law, qsd_pair_cdf, yaglom, QsdQuery};
use bgwcoal::report::CoalescenceReport;
use bgwcoal::{Error, OffspringMeasure, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLOSED_FORM_TOL: f64 = 1e-9;
const SEMIGROUP_TOL: f64 = 1e-8;
const DUALITY_TOL: f64 = 1e-7;
const ALPHA_TOL: f64 = 1e-6;
const CHI_TOL: f64 = 1e-4;
const QSD_BOUND_SLACK: f64 = 1e-6;
const REDUCTION_TOL: f64 = 1e-10;
const REPLICAS: u64 = 100_000;

type Check = Result<String, String>;

fn measure(pairs: &[(u32, f64)]) -> OffspringMeasure {
    OffspringMeasure::new(pairs.iter().copied()).expect("fixture measure")
}

fn binary() -> OffspringMeasure {
    measure(&[(0, 2.0), (2, 1.0)])
}

fn fixtures() -> Vec<OffspringMeasure> {
    vec![
        measure(&[(0, 1.0)]),
        binary(),
        measure(&[(0, 1.0), (2, 1.0), (3, 0.5)]),
    ]
}

fn lib<T>(r: bgwcoal::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn report_passes(report: &CoalescenceReport, prefix: &str) -> Result<usize, String> {
    let rows: Vec<_> = report.rows.iter().filter(|r| r.quantity.starts_with(prefix)).collect();
    ensure(!rows.is_empty(), || format!("no `{prefix}` rows"))?;
    if let Some(bad) = rows.iter().find(|r| !r.pass) {
        return Err(format!(
            "{}: analytic {:e}, empirical {:e}, z {:.3}",
            bad.quantity, bad.analytic, bad.empirical, bad.z_score
        ));
    }
    Ok(rows.len())
}

fn closed_form_agreement() -> Check {
    let cfg = SolverConfig::default();
    let mut worst: f64 = 0.0;
    for m in [OffspringMeasure::pure_death(1.0).unwrap(), OffspringMeasure::binary(2.0, 1.0).unwrap()] {
        let kind = lib(ClosedForm::for_measure(&m))?;
        for i in 0..10 {
            let t = 0.5 * (i + 1) as f64;
            for j in 0..10 {
                let s = j as f64 / 9.0;
                let num = lib(psi_at(&m, t, s, &cfg))?;
                let exact = lib(closed_form_psi(kind, t, s))?;
                for (a, b) in [
                    (num.psi, exact.psi),
                    (num.psi_d1, exact.psi_d1),
                    (num.psi_d2, exact.psi_d2),
                ] {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    ensure(worst <= CLOSED_FORM_TOL, || format!("max error {worst:e}"))?;
    Ok(format!("max abs error {worst:.2e}"))
}

fn semigroup() -> Check {
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for m in fixtures() {
        for _ in 0..50 {
            let (t1, t2, s) = (rng.random_range(0.01..2.0), rng.random_range(0.01..2.0), rng.random::<f64>());
            let inner = lib(psi_at(&m, t2, s, &cfg))?.psi;
            let lhs = lib(psi_at(&m, t1 + t2, s, &cfg))?.psi;
            let rhs = lib(psi_at(&m, t1, inner, &cfg))?.psi;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    ensure(worst <= SEMIGROUP_TOL, || format!("max defect {worst:e}"))?;
    Ok(format!("max defect {worst:.2e} over 150 triples"))
}

fn duality() -> Check {
    let m = binary();
    let cfg = SolverConfig::default().with_series_order(64);
    let p_max = 59;
    let mut worst: f64 = 0.0;
    for y in [1, 2] {
        let q = PairQuery::conditioned(2.0, 0.5, 1.5, y);
        let table = lib(pair_density_table(&m, &q, p_max, &cfg))?;
        for s in [0.0f64, 0.2, 0.5] {
            let series: f64 = (2..=p_max)
                .map(|p| (p * (p - 1)) as f64 * s.powi(p as i32 - 2) * table[p])
                .sum();
            let direct = lib(pair_pgf_conditioned_rate(&m, &q, s, &cfg))?;
            worst = worst.max((series - direct).abs());
        }
    }
    ensure(worst <= DUALITY_TOL, || format!("max gap {worst:e}"))?;
    Ok(format!("max gap {worst:.2e}"))
}

fn conservation() -> Check {
    let cfg = SolverConfig::default();
    let mut worst: f64 = 0.0;
    for m in fixtures() {
        for x in [1, 2, 5] {
            for t in [0.5, 1.0, 2.0] {
                let rep = lib(conservation_check(&m, x, t, &cfg))?;
                let row = &rep.rows[0];
                ensure(row.pass, || format!("{} for {m}: {:e}", row.quantity, row.empirical))?;
                worst = worst.max((row.empirical - 1.0).abs());
            }
        }
    }
    Ok(format!("max deviation {worst:.2e}"))
}

fn monte_carlo_pair() -> Check {
    let cfg = SolverConfig::default();
    let study = lib(empirical_pair_cdf(
        &binary(),
        2,
        1.0,
        &[0.25, 0.5, 1.0],
        &StudyOptions::new(REPLICAS, 5),
        &cfg,
    ))?;
    let rows = report_passes(&study.report, "pair_cdf[")?;

    let death = OffspringMeasure::pure_death(1.0).unwrap();
    let control = lib(empirical_pair_cdf(
        &death,
        2,
        1.0,
        &[0.25, 0.5, 1.0],
        &StudyOptions::new(REPLICAS, 6),
        &cfg,
    ))?;
    for t1 in [0.25, 0.5, 1.0] {
        ensure(control.unconditional.cdf(t1) == 0.0, || format!("pure death P̂(T ≤ {t1}) > 0"))?;
    }
    let analytic = lib(no_common_ancestor(&death, 2, 1.0, &cfg))?;
    ensure((analytic - (-2.0f64).exp()).abs() < 1e-9, || format!("analytic {analytic} ≠ e⁻²"))?;
    report_passes(&control.report, "no_common_ancestor")?;
    let freq = control.no_common_ancestor as f64 / REPLICAS as f64;
    Ok(format!("{rows} grid points within 3.5 SE; pure-death separation frequency {freq:.4}"))
}

fn yaglom_identities() -> Check {
    let cfg = SolverConfig::default();
    let m = binary();
    let limit = lib(yaglom(&m, &cfg))?;
    let alpha_err = (1..=10)
        .map(|j| (limit.alpha(j) - 0.5f64.powi(j as i32)).abs())
        .fold(0.0, f64::max);
    ensure(alpha_err <= ALPHA_TOL, || format!("α error {alpha_err:e}"))?;
    let chi_err = (limit.mean() * limit.chi0 - 1.0).abs();
    ensure(chi_err <= CHI_TOL, || format!("g′(1)χ(0) − 1 = {chi_err:e}"))?;
    let one = lib(conditioned_law(&m, 1, limit.t_used, &cfg))?;
    let three = lib(conditioned_law(&m, 3, limit.t_used, &cfg))?;
    let x_err = (1..=10)
        .map(|j| (one.coeff(j) - three.coeff(j)).abs())
        .fold(0.0, f64::max);
    ensure(x_err <= ALPHA_TOL, || format!("founder dependence {x_err:e}"))?;

    let death = OffspringMeasure::pure_death(1.0).unwrap();
    let dl = lib(yaglom(&death, &cfg))?;
    for s in [0.0, 0.3, 0.9] {
        ensure(dl.g(s) == s, || format!("pure death g({s}) = {}", dl.g(s)))?;
    }
    let q = QsdQuery { h: 1.0, p: None };
    ensure(
        matches!(qsd_pair_cdf(&death, &dl, &q, &cfg), Err(Error::DegenerateQsd { .. })),
        || "pure death did not raise the degenerate-QSD error".into(),
    )?;
    Ok(format!("α error {alpha_err:.1e}, χ error {chi_err:.1e}, founder gap {x_err:.1e}"))
}

fn qsd_behavior() -> Check {
    let cfg = SolverConfig::default();
    let m = binary();
    let limit = lib(yaglom(&m, &cfg))?;
    let cdf = |h: f64| lib(qsd_pair_cdf(&m, &limit, &QsdQuery { h, p: None }, &cfg));
    let grid = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0];
    let mut prev = 0.0;
    for h in grid {
        let v = cdf(h)?;
        ensure(v >= prev - 1e-12, || format!("decrease at h = {h}: {v} < {prev}"))?;
        ensure(v <= 1.0 + QSD_BOUND_SLACK, || format!("exceeds 1 at h = {h}: {v}"))?;
        prev = v;
    }
    let small = cdf(1e-4)?;
    ensure(small < 1e-3, || format!("P(T ≤ 1e-4) = {small}"))?;
    Ok(format!("P(T ≤ 5) = {prev:.6}, P(T ≤ 1e-4) = {small:.2e}"))
}

fn multivariate() -> Check {
    let cfg = SolverConfig::default();
    let m = binary();
    ensure(order_statistics_factor(1) == 1.0, || "factor(1) ≠ 1".into())?;
    ensure(order_statistics_factor(2) == 3.0, || "factor(2) ≠ 3".into())?;
    let mut worst: f64 = 0.0;
    for (x, t, t1) in [(1, 2.0, 0.7), (2, 1.0, 0.4), (3, 1.5, 1.5)] {
        let cells = [(0.0, t1)];
        let star = lib(multivariate_box_probability(&m, x, t, &cells, Variant::OrderStatistics, &cfg))?;
        let base = lib(multivariate_box_probability(&m, x, t, &cells, Variant::FirstVsOthers, &cfg))?;
        let cdf = lib(pair_cdf(&m, &PairQuery::new(x, t, t1), &cfg))?;
        worst = worst.max((star - base).abs()).max((base - cdf).abs());
        for s in [0.0, 0.4, 0.8] {
            let q = MultiQuery {
                x,
                t,
                times: vec![t1],
                variant: Variant::OrderStatistics,
            };
            let dens = lib(multivariate_density_pgf(&m, &q, s, &cfg))?;
            let pair = lib(pair_pgf_conditioned_rate(&m, &PairQuery::conditioned(t, t1, t, x), s, &cfg))?;
            worst = worst.max((dens - pair).abs());
        }
    }
    ensure(worst <= REDUCTION_TOL, || format!("n = 1 reduction gap {worst:e}"))?;

    let study = lib(empirical_multivariate(&m, 1, 2.0, 3, 4, &StudyOptions::new(REPLICAS, 8), &cfg))?;
    let tested = report_passes(&study.report, "t_star_over_t_ratio")?;
    report_passes(&study.report, "t_cell")?;
    report_passes(&study.report, "t_star_cell")?;
    let ties = study.tied as f64 / REPLICAS as f64;
    Ok(format!(
        "n = 1 gap {worst:.1e}; {tested} off-diagonal cells consistent with ratio 3; tie mass {ties:.4} (not asserted)"
    ))
}

fn population_law() -> Check {
    let cfg = SolverConfig::default();
    let mut summary = Vec::new();
    for (m, x, t, seed) in [(binary(), 2, 1.0, 9), (measure(&[(0, 1.0), (2, 1.0), (3, 0.5)]), 1, 1.0, 10)] {
        let study = lib(population_study(&m, x, t, &StudyOptions::new(REPLICAS, seed), &cfg))?;
        report_passes(&study.report, "population_mean")?;
        report_passes(&study.report, "extinction")?;
        let cells = report_passes(&study.report, "population_mass")?;
        summary.push(format!("{m}: {cells} cells"));
    }
    Ok(summary.join("; "))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("job.json");
    std::fs::write(
        &config,
        r#"{"command": "validate", "measure": {"0": 2, "2": 1}, "x": 2, "t": 1, "N": 1e5, "seed": 42}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("report{run}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_bgwcoal"))
            .arg("validate")
            .arg("--config")
            .arg(&config)
            .arg("--output")
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.code() == Some(0), || format!("validate exited with {status}"))?;
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], || "reports differ".into())?;
    Ok(format!("two runs byte-identical ({} bytes)", outputs[0].len()))
}

type Criterion = (&'static str, Duration, fn() -> Check);

fn main() {
    let criteria: [Criterion; 10] = [
        ("closed-form oracle agreement", Duration::from_secs(5), closed_form_agreement),
        ("semigroup law", Duration::from_secs(10), semigroup),
        ("series inversion duality", Duration::from_secs(30), duality),
        ("probability conservation", Duration::from_secs(60), conservation),
        ("Monte Carlo pair coalescence", Duration::from_secs(120), monte_carlo_pair),
        ("Yaglom identities", Duration::from_secs(60), yaglom_identities),
        ("quasi-stationary pair law", Duration::from_secs(60), qsd_behavior),
        ("multivariate coalescence", Duration::from_secs(180), multivariate),
        ("simulator population law", Duration::from_secs(120), population_law),
        ("validate determinism", Duration::from_secs(300), determinism),
    ];
    let mut failures = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget {budget:?}")),
            Err(e) => (false, e),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {detail} [{:.2}s]",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
