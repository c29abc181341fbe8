//! Python bindings. Build with `maturin develop --release` from this directory.

use std::collections::BTreeMap;

use bgwcoal::analytic::{self, MultiQuery, PairQuery, Variant};
use bgwcoal::empirical::{self, StudyOptions};
use bgwcoal::psi::{self, SolverConfig};
use bgwcoal::qsd::{self, QsdQuery};
use bgwcoal::report::CoalescenceReport;
use bgwcoal::simulator::{self, GenealogyForest, SampleResult};
use bgwcoal::Error;
use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: Error) -> PyErr {
    match e {
        e if e.is_numerical() => PyArithmeticError::new_err(e.to_string()),
        Error::PopulationExplosion { .. } | Error::InsufficientPopulation { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        e => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for bgwcoal::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn parse_variant(name: &str) -> PyResult<Variant> {
    match name {
        "first_vs_others" => Ok(Variant::FirstVsOthers),
        "order_statistics" => Ok(Variant::OrderStatistics),
        other => Err(PyValueError::new_err(format!(
            "variant must be 'first_vs_others' or 'order_statistics', got {other:?}"
        ))),
    }
}

/// Offspring measure given as ``{offspring_count: rate}``.
#[pyclass(name = "OffspringMeasure", module = "bgwcoal", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMeasure {
    inner: bgwcoal::OffspringMeasure,
}

#[pymethods]
impl PyMeasure {
    #[new]
    fn new(rates: BTreeMap<u32, f64>) -> PyResult<Self> {
        Ok(PyMeasure {
            inner: bgwcoal::OffspringMeasure::new(rates).py()?,
        })
    }

    #[staticmethod]
    fn binary(death: f64, birth: f64) -> PyResult<Self> {
        Ok(PyMeasure {
            inner: bgwcoal::OffspringMeasure::binary(death, birth).py()?,
        })
    }

    #[staticmethod]
    fn pure_death(rate: f64) -> PyResult<Self> {
        Ok(PyMeasure {
            inner: bgwcoal::OffspringMeasure::pure_death(rate).py()?,
        })
    }

    fn support(&self) -> Vec<(u32, f64)> {
        self.inner.support().to_vec()
    }

    fn total_rate(&self) -> f64 {
        self.inner.total_rate()
    }

    fn phi(&self, s: f64) -> PyResult<f64> {
        self.inner.phi(s).py()
    }

    fn phi_d1(&self, s: f64) -> PyResult<f64> {
        self.inner.phi_d1(s).py()
    }

    fn phi_d2(&self, s: f64) -> PyResult<f64> {
        self.inner.phi_d2(s).py()
    }

    fn growth_rate(&self) -> f64 {
        self.inner.growth_rate()
    }

    /// "subcritical", "critical" or "supercritical".
    fn regime(&self) -> String {
        format!("{:?}", self.inner.classify().regime).to_lowercase()
    }

    /// Smallest root of Φ in [0, 1], the extinction probability from one founder.
    fn eta(&self) -> f64 {
        self.inner.eta()
    }

    fn __repr__(&self) -> String {
        format!("OffspringMeasure({})", self.inner)
    }
}

/// ODE tolerances and the truncation order of series expansions.
#[pyclass(name = "SolverConfig", module = "bgwcoal", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySolverConfig {
    inner: SolverConfig,
}

#[pymethods]
impl PySolverConfig {
    #[new]
    #[pyo3(signature = (abs_tol=None, rel_tol=None, max_step=None, series_order=None))]
    fn new(
        abs_tol: Option<f64>,
        rel_tol: Option<f64>,
        max_step: Option<f64>,
        series_order: Option<usize>,
    ) -> PyResult<Self> {
        let d = SolverConfig::default();
        let inner = SolverConfig {
            abs_tol: abs_tol.unwrap_or(d.abs_tol),
            rel_tol: rel_tol.unwrap_or(d.rel_tol),
            max_step: max_step.unwrap_or(d.max_step),
            series_order: series_order.unwrap_or(d.series_order),
        };
        inner.validate().py()?;
        Ok(PySolverConfig { inner })
    }

    #[getter]
    fn series_order(&self) -> usize {
        self.inner.series_order
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "SolverConfig(abs_tol={:e}, rel_tol={:e}, max_step={}, series_order={})",
            c.abs_tol, c.rel_tol, c.max_step, c.series_order
        )
    }
}

fn solver(cfg: Option<&PySolverConfig>) -> SolverConfig {
    cfg.map(|c| c.inner).unwrap_or_default()
}

/// `(ψ_t(s), ∂_s ψ_t(s), ∂²_s ψ_t(s))`.
#[pyfunction]
#[pyo3(signature = (m, t, s, cfg=None))]
fn psi_at(m: &PyMeasure, t: f64, s: f64, cfg: Option<&PySolverConfig>) -> PyResult<(f64, f64, f64)> {
    let st = psi::psi_at(&m.inner, t, s, &solver(cfg)).py()?;
    Ok((st.psi, st.psi_d1, st.psi_d2))
}

/// Coefficients `P₁(Z_t = j)` up to the series order.
#[pyfunction]
#[pyo3(signature = (m, t, x=1, cfg=None))]
fn psi_series(m: &PyMeasure, t: f64, x: u32, cfg: Option<&PySolverConfig>) -> PyResult<Vec<f64>> {
    Ok(psi::psi_series(&m.inner, t, &solver(cfg)).py()?.power(x).coeffs())
}

#[pyfunction]
#[pyo3(signature = (m, x, t, t1, cfg=None))]
fn pair_cdf(m: &PyMeasure, x: u32, t: f64, t1: f64, cfg: Option<&PySolverConfig>) -> PyResult<f64> {
    analytic::pair_cdf(&m.inner, &PairQuery::new(x, t, t1), &solver(cfg)).py()
}

#[pyfunction]
#[pyo3(signature = (m, x, t, cfg=None))]
fn no_common_ancestor(m: &PyMeasure, x: u32, t: f64, cfg: Option<&PySolverConfig>) -> PyResult<f64> {
    analytic::no_common_ancestor(&m.inner, x, t, &solver(cfg)).py()
}

/// Densities in `t1` of `{Z_t = p, T ∈ dt1}` given `Z_{t−t2} = y`, indexed by `p`.
#[pyfunction]
#[pyo3(signature = (m, t, t1, t2, y, p_max, cfg=None))]
fn pair_density(
    m: &PyMeasure,
    t: f64,
    t1: f64,
    t2: f64,
    y: u32,
    p_max: usize,
    cfg: Option<&PySolverConfig>,
) -> PyResult<Vec<f64>> {
    let q = PairQuery::conditioned(t, t1, t2, y);
    analytic::pair_density_table(&m.inner, &q, p_max, &solver(cfg)).py()
}

#[pyfunction]
#[pyo3(signature = (m, x, t, times, s, variant="first_vs_others", cfg=None))]
fn multivariate_density_pgf(
    m: &PyMeasure,
    x: u32,
    t: f64,
    times: Vec<f64>,
    s: f64,
    variant: &str,
    cfg: Option<&PySolverConfig>,
) -> PyResult<f64> {
    let q = MultiQuery {
        x,
        t,
        times,
        variant: parse_variant(variant)?,
    };
    analytic::multivariate_density_pgf(&m.inner, &q, s, &solver(cfg)).py()
}

#[pyfunction]
#[pyo3(signature = (m, x, t, cells, variant="first_vs_others", cfg=None))]
fn multivariate_box_probability(
    m: &PyMeasure,
    x: u32,
    t: f64,
    cells: Vec<(f64, f64)>,
    variant: &str,
    cfg: Option<&PySolverConfig>,
) -> PyResult<f64> {
    analytic::multivariate_box_probability(&m.inner, x, t, &cells, parse_variant(variant)?, &solver(cfg))
        .py()
}

/// Limiting law of `Z_t` given survival, for subcritical measures.
#[pyclass(name = "YaglomLimit", module = "bgwcoal", frozen)]
struct PyYaglom {
    inner: qsd::YaglomLimit,
}

#[pymethods]
impl PyYaglom {
    #[getter]
    fn alphas(&self) -> Vec<f64> {
        self.inner.alphas.coeffs()
    }

    #[getter]
    fn chi0(&self) -> f64 {
        self.inner.chi0
    }

    #[getter]
    fn t_used(&self) -> f64 {
        self.inner.t_used
    }

    fn alpha(&self, j: usize) -> f64 {
        self.inner.alpha(j)
    }

    fn g(&self, s: f64) -> f64 {
        self.inner.g(s)
    }

    fn g_d1(&self, s: f64) -> f64 {
        self.inner.g_d1(s)
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn __repr__(&self) -> String {
        format!(
            "YaglomLimit(chi0={}, mean={}, t_used={})",
            self.inner.chi0,
            self.inner.mean(),
            self.inner.t_used
        )
    }
}

#[pyfunction]
#[pyo3(signature = (m, cfg=None))]
fn yaglom(m: &PyMeasure, cfg: Option<&PySolverConfig>) -> PyResult<PyYaglom> {
    Ok(PyYaglom {
        inner: qsd::yaglom(&m.inner, &solver(cfg)).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (m, limit, h, cfg=None))]
fn qsd_pair_cdf(m: &PyMeasure, limit: &PyYaglom, h: f64, cfg: Option<&PySolverConfig>) -> PyResult<f64> {
    qsd::qsd_pair_cdf(&m.inner, &limit.inner, &QsdQuery { h, p: None }, &solver(cfg)).py()
}

/// Simulated population with its complete genealogy.
#[pyclass(name = "GenealogyForest", module = "bgwcoal", frozen)]
struct PyForest {
    inner: GenealogyForest,
}

#[pymethods]
impl PyForest {
    #[getter]
    fn population(&self) -> usize {
        self.inner.population()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }

    fn alive(&self) -> Vec<u32> {
        self.inner.alive().to_vec()
    }

    /// `(time, parent, first_child, offspring_count)` per reproduction event.
    fn events(&self) -> Vec<(f64, u32, u32, u32)> {
        self.inner
            .events()
            .iter()
            .map(|e| (e.time, e.parent, e.first_child, e.offspring_count))
            .collect()
    }

    fn lineage(&self, id: u32) -> PyResult<Vec<u32>> {
        if id as usize >= self.inner.individual_count() {
            return Err(PyValueError::new_err(format!("no individual {id}")));
        }
        Ok(self.inner.lineage(id))
    }

    /// Samples `k` alive individuals without replacement and traces their lineages.
    fn sample(&self, k: usize, seed: u64) -> PyResult<PySample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PySample {
            inner: simulator::sample_and_trace(&self.inner, k, &mut rng).py()?,
        })
    }
}

#[pyclass(name = "SampleResult", module = "bgwcoal", frozen)]
struct PySample {
    inner: SampleResult,
}

#[pymethods]
impl PySample {
    #[getter]
    fn sampled_ids(&self) -> Vec<u32> {
        self.inner.sampled_ids.clone()
    }

    fn pairwise(&self) -> Vec<Vec<f64>> {
        let k = self.inner.k();
        (0..k)
            .map(|i| (0..k).map(|j| self.inner.pairwise(i, j)).collect())
            .collect()
    }

    fn t_vector(&self) -> Vec<f64> {
        self.inner.t_vector()
    }

    fn t_star(&self) -> Vec<f64> {
        self.inner.t_star()
    }
}

#[pyfunction]
fn simulate(py: Python<'_>, m: &PyMeasure, x: u32, t: f64, seed: u64) -> PyResult<PyForest> {
    let measure = m.inner.clone();
    let forest = py.detach(move || simulator::simulate(&measure, x, t, seed)).py()?;
    Ok(PyForest { inner: forest })
}

fn report_rows<'py>(py: Python<'py>, report: &CoalescenceReport) -> PyResult<Vec<Bound<'py, PyDict>>> {
    report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("quantity", &r.quantity)?;
            d.set_item("analytic", r.analytic)?;
            d.set_item("empirical", r.empirical)?;
            d.set_item("se", r.se)?;
            d.set_item("z_score", r.z_score)?;
            d.set_item("pass", r.pass)?;
            Ok(d)
        })
        .collect()
}

/// Monte Carlo pair study; returns the comparison rows as dictionaries.
#[pyfunction]
#[pyo3(signature = (m, x, t, t1_grid, n, seed, threads=0, cfg=None))]
#[allow(clippy::too_many_arguments)]
fn empirical_pair_cdf<'py>(
    py: Python<'py>,
    m: &PyMeasure,
    x: u32,
    t: f64,
    t1_grid: Vec<f64>,
    n: u64,
    seed: u64,
    threads: usize,
    cfg: Option<&PySolverConfig>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let measure = m.inner.clone();
    let cfg = solver(cfg);
    let opts = StudyOptions::new(n, seed).with_threads(threads);
    let study = py
        .detach(move || empirical::empirical_pair_cdf(&measure, x, t, &t1_grid, &opts, &cfg))
        .py()?;
    report_rows(py, &study.report)
}

#[pymodule]
#[pyo3(name = "bgwcoal")]
fn bgwcoal_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyMeasure>()?;
    m.add_class::<PySolverConfig>()?;
    m.add_class::<PyYaglom>()?;
    m.add_class::<PyForest>()?;
    m.add_class::<PySample>()?;
    m.add_function(wrap_pyfunction!(psi_at, m)?)?;
    m.add_function(wrap_pyfunction!(psi_series, m)?)?;
    m.add_function(wrap_pyfunction!(pair_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(no_common_ancestor, m)?)?;
    m.add_function(wrap_pyfunction!(pair_density, m)?)?;
    m.add_function(wrap_pyfunction!(multivariate_density_pgf, m)?)?;
    m.add_function(wrap_pyfunction!(multivariate_box_probability, m)?)?;
    m.add_function(wrap_pyfunction!(yaglom, m)?)?;
    m.add_function(wrap_pyfunction!(qsd_pair_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_pair_cdf, m)?)?;
    Ok(())
}
