//! Python bindings: closed-form candidates, verification reports, Monte
//! Carlo estimates and the regime scan.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ticontrol::mild::{build_mild, MildBuild, MildCandidate};
use ticontrol::report::{self, Parameters};
use ticontrol::sim::{estimate_ensemble, horizon_for, SimConfig};
use ticontrol::strong::StrongCandidate;
use ticontrol::value::{Order, Side};
use ticontrol::verify::ValueBundle;
use ticontrol::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn order(k: u8) -> PyResult<Order> {
    Order::from_index(k).map_err(py_err)
}

fn side(left: bool) -> Side {
    if left {
        Side::Left
    } else {
        Side::Right
    }
}

/// Reflecting-threshold candidate for two discount rates.
#[pyclass(name = "StrongCandidate", frozen)]
struct PyStrong(StrongCandidate);

#[pymethods]
impl PyStrong {
    #[new]
    fn new(sigma2: f64, q1: f64, q2: f64) -> PyResult<Self> {
        StrongCandidate::build(sigma2, q1, q2)
            .map(Self)
            .map_err(py_err)
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.0.threshold
    }

    #[getter]
    fn gamma(&self) -> [f64; 2] {
        self.0.gamma
    }

    #[getter]
    fn regime_indicator(&self) -> f64 {
        self.0.regime_indicator()
    }

    /// Per-rate value function or one of its first two derivatives.
    #[pyo3(signature = (atom, x, order=0, left=false))]
    fn v(&self, atom: usize, x: f64, order: u8, left: bool) -> PyResult<f64> {
        self.0
            .v(atom, x, self::order(order)?, side(left))
            .map_err(py_err)
    }

    /// Weighted value function `V`.
    #[pyo3(signature = (x, order=0, left=false))]
    fn value(&self, x: f64, order: u8, left: bool) -> PyResult<f64> {
        self.0
            .aggregate(x, self::order(order)?, side(left))
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("StrongCandidate(threshold={})", self.0.threshold)
    }
}

/// Candidate with an exploding control rate below `beta`.
#[pyclass(name = "MildCandidate", frozen)]
struct PyMild(MildCandidate);

#[pymethods]
impl PyMild {
    /// Raises `ValueError` when the thresholds come out unordered.
    #[new]
    fn new(sigma2: f64, q1: f64, q2: f64) -> PyResult<Self> {
        match build_mild(sigma2, q1, q2).map_err(py_err)? {
            MildBuild::Valid(c) => Ok(Self(c)),
            MildBuild::Invalid(inv) => Err(PyValueError::new_err(inv.reason)),
        }
    }

    #[getter]
    fn lower_threshold(&self) -> f64 {
        self.0.lower_threshold()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta()
    }

    fn u_star(&self, x: f64) -> PyResult<f64> {
        self.0.u_star(x).map_err(py_err)
    }

    #[pyo3(signature = (atom, x, order=0, left=false))]
    fn v(&self, atom: usize, x: f64, order: u8, left: bool) -> PyResult<f64> {
        self.0
            .v(atom, x, self::order(order)?, side(left))
            .map_err(py_err)
    }

    #[pyo3(signature = (x, order=0, left=false))]
    fn value(&self, x: f64, order: u8, left: bool) -> PyResult<f64> {
        self.0
            .aggregate(x, self::order(order)?, side(left))
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "MildCandidate(lower_threshold={}, beta={})",
            self.0.lower_threshold(),
            self.0.beta()
        )
    }
}

fn params(sigma2: f64, q1: f64, q2: f64) -> Parameters {
    Parameters { sigma2, q1, q2 }
}

/// Verification report of the strong candidate as a JSON string.
#[pyfunction]
#[pyo3(signature = (sigma2, q1, q2, grid=report::DEFAULT_GRID))]
fn strong_report(sigma2: f64, q1: f64, q2: f64, grid: usize) -> PyResult<String> {
    let case = report::strong_case(params(sigma2, q1, q2), grid).map_err(py_err)?;
    case.report.to_json().map_err(py_err)
}

/// Verification and boundary report of the mild candidate as a JSON string.
#[pyfunction]
#[pyo3(signature = (sigma2, q1, q2, grid=report::DEFAULT_GRID, delta=report::DEFAULT_DELTA))]
fn mild_report(sigma2: f64, q1: f64, q2: f64, grid: usize, delta: f64) -> PyResult<String> {
    let case = report::mild_case(params(sigma2, q1, q2), grid, delta).map_err(py_err)?;
    case.report.to_json().map_err(py_err)
}

/// `(mean, std_error)`.
type Estimate = (f64, f64);

/// Monte Carlo costs from `x0`: `(per_rate, weighted)`, each a list of
/// `(mean, std_error)` pairs (one pair for `weighted`).
#[pyfunction]
#[pyo3(signature = (case, sigma2, q1, q2, x0, paths=10_000, dt=1e-3, tmax=None, seed=0, delta=report::DEFAULT_DELTA))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    case: &str,
    sigma2: f64,
    q1: f64,
    q2: f64,
    x0: f64,
    paths: usize,
    dt: f64,
    tmax: Option<f64>,
    seed: u64,
    delta: f64,
) -> PyResult<(Vec<Estimate>, Estimate)> {
    let bundle = match case {
        "strong" => ValueBundle::strong(&StrongCandidate::build(sigma2, q1, q2).map_err(py_err)?),
        "mild" => match build_mild(sigma2, q1, q2).map_err(py_err)? {
            MildBuild::Valid(c) => ValueBundle::mild(&c, delta),
            MildBuild::Invalid(inv) => return Err(PyValueError::new_err(inv.reason)),
        },
        other => return Err(PyValueError::new_err(format!("unknown case {other:?}"))),
    }
    .map_err(py_err)?;
    let cfg = SimConfig {
        dt,
        n_paths: paths,
        seed,
        t_max: tmax.unwrap_or_else(|| horizon_for(q1.min(q2), 1e-6)),
        ..SimConfig::default()
    };
    let est = py
        .allow_threads(|| {
            estimate_ensemble(
                &bundle.model,
                &bundle.strategy,
                x0,
                &bundle.discount,
                &bundle.cost,
                &cfg,
            )
        })
        .map_err(py_err)?;
    let per = est.per_atom.iter().map(|e| (e.mean, e.std_error)).collect();
    Ok((per, (est.aggregate.mean, est.aggregate.std_error)))
}

/// Strong and mild verdicts across `q2`, as a JSON string.
#[pyfunction]
#[pyo3(signature = (sigma2, q1, q2_min, q2_max, points=33, grid=2000))]
fn scan(
    sigma2: f64,
    q1: f64,
    q2_min: f64,
    q2_max: f64,
    points: usize,
    grid: usize,
) -> PyResult<String> {
    let r = report::scan(sigma2, q1, q2_min, q2_max, points, grid).map_err(py_err)?;
    serde_json::to_string(&r).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule(name = "ticontrol")]
fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStrong>()?;
    m.add_class::<PyMild>()?;
    m.add_function(wrap_pyfunction!(strong_report, m)?)?;
    m.add_function(wrap_pyfunction!(mild_report, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(scan, m)?)?;
    Ok(())
}
