//! Python bindings for `tvopt`. Structured results cross the boundary as plain
//! dicts and lists built from the same JSON the CLI prints.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;
use tvopt::adomplus::{self, auto_consensus_steps, effective_chi};
use tvopt::harness::{self, ExperimentConfig, SweepAxis};
use tvopt::lowerbound;
use tvopt::netmodel::{validate_gossip, GossipSequence};

create_exception!(tvopt_py, TvoptError, PyException);

fn err(e: tvopt::Error) -> PyErr {
    TvoptError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn config(json: &str) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_json(json).map_err(err)
}

/// Parameter schedule for `(L, mu, chi)`. `T` is a step count or `"auto"`.
#[pyfunction]
#[pyo3(signature = (l, mu, chi, t = None))]
fn derive_params<'py>(py: Python<'py>, l: f64, mu: f64, chi: f64, t: Option<Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let steps = match t {
        None => 1,
        Some(v) if v.extract::<String>().is_ok_and(|s| s == "auto") => auto_consensus_steps(chi),
        Some(v) => v.extract::<usize>()?,
    };
    let chi_eff = effective_chi(chi, steps);
    let params = adomplus::derive_params(l, mu, chi_eff).map_err(err)?;
    let out = serde_json::json!({
        "L": l,
        "mu": mu,
        "chi": chi,
        "T": steps,
        "chi_eff": chi_eff,
        "rate": adomplus::theoretical_rate(l, mu, chi_eff),
        "params": params,
    });
    to_py(py, &out)
}

/// Measured network condition number of the config's topology schedule.
#[pyfunction]
fn measure_chi(config_json: &str) -> PyResult<f64> {
    let schedule = config(config_json)?.schedule().map_err(err)?;
    GossipSequence::new(&schedule).and_then(|s| s.chi()).map_err(err)
}

/// Per-round axiom reports for the config's schedule, checked against the measured χ.
#[pyfunction]
#[pyo3(signature = (config_json, rounds = None))]
fn check_gossip<'py>(py: Python<'py>, config_json: &str, rounds: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let schedule = config(config_json)?.schedule().map_err(err)?;
    let chi = GossipSequence::new(&schedule).and_then(|s| s.chi()).map_err(err)?;
    let reports = (0..rounds.unwrap_or(schedule.period()))
        .map(|q| Ok(validate_gossip(&schedule.gossip(q)?, schedule.edges(q), chi)))
        .collect::<tvopt::Result<Vec<_>>>()
        .map_err(err)?;
    to_py(py, &reports)
}

/// Run one experiment; returns `{"summary": ..., "records": [...], "certificate": ...}`.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(config_json)?;
    let result = py.detach(|| harness::run_experiment(&cfg)).map_err(err)?;
    let out = serde_json::json!({
        "summary": result.summary,
        "records": result.records,
        "certificate": result.certificate,
    });
    to_py(py, &out)
}

/// Sweep `axis` ("kappa", "chi" or "T") over `values`.
#[pyfunction]
fn sweep<'py>(py: Python<'py>, config_json: &str, axis: &str, values: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(config_json)?;
    let axis: SweepAxis = axis.parse().map_err(err)?;
    let rows = py.detach(|| harness::sweep(&cfg, axis, &values)).map_err(err)?;
    to_py(py, &rows)
}

/// `[(q, exact, relaxed), ...]` for `q = 0..=q_max`.
#[pyfunction]
fn lower_bound_curve(chi: f64, l: f64, mu: f64, q_max: usize) -> PyResult<Vec<(usize, f64, f64)>> {
    let curve = lowerbound::lower_bound_curve(chi, l, mu, q_max).map_err(err)?;
    Ok(curve.into_iter().map(|p| (p.q, p.exact, p.relaxed)).collect())
}

#[pyfunction]
fn rho(l: f64, mu: f64) -> f64 {
    lowerbound::rho(l, mu)
}

#[pyclass(name = "HardInstance", frozen)]
struct PyHardInstance {
    inner: lowerbound::HardInstance,
}

#[pymethods]
impl PyHardInstance {
    #[new]
    fn new(chi: f64, l: f64, mu: f64, d_trunc: usize) -> PyResult<Self> {
        let inner = lowerbound::build_hard_instance(chi, l, mu, d_trunc).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d_trunc
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }

    /// Closed-form minimizer of the truncated chain.
    fn solution(&self) -> Vec<f64> {
        self.inner.solution()
    }

    /// Minimizer of the averaged objective by the numerical solver.
    #[pyo3(signature = (tol = 1e-12))]
    fn reference_minimizer(&self, tol: f64) -> PyResult<Vec<f64>> {
        tvopt::oracle::reference_minimizer(&self.inner.objective, tol).map_err(err)
    }

    /// Run ADOM+ on this instance to relative error `target_eps` and certify every iterate.
    #[pyo3(signature = (target_eps = 1e-8, t = 1))]
    fn certify<'py>(&self, py: Python<'py>, target_eps: f64, t: usize) -> PyResult<Bound<'py, PyAny>> {
        let inst = &self.inner;
        let json = serde_json::json!({
            "problem": {"type": "hard_instance", "chi": inst.chi, "L": inst.l, "mu": inst.mu, "d_trunc": inst.d_trunc},
            "topology": {"schedule": {"type": "lower_bound_star"}},
            "algorithm": {"T": t},
            "stop": {"target_eps": target_eps, "metric": "stacked_relative"},
            "certify": true,
        });
        let cfg = config(&json.to_string())?;
        let result = py.detach(|| harness::run_experiment(&cfg)).map_err(err)?;
        to_py(py, &result.certificate)
    }
}

#[pyclass(name = "SpanTracker")]
struct PySpanTracker {
    inner: lowerbound::SpanTracker,
}

#[pymethods]
impl PySpanTracker {
    #[new]
    fn new(n: usize) -> PyResult<Self> {
        Ok(Self { inner: lowerbound::SpanTracker::new(n).map_err(err)? })
    }

    fn compute(&mut self) {
        self.inner.compute();
    }

    fn communicate(&mut self) {
        self.inner.communicate();
    }

    #[getter]
    fn spans(&self) -> Vec<usize> {
        self.inner.spans().to_vec()
    }

    #[getter]
    fn rounds(&self) -> usize {
        self.inner.rounds()
    }

    fn span_bound(&self, node: usize) -> usize {
        self.inner.span_bound(node)
    }

    fn span_bound_holds(&self) -> bool {
        self.inner.span_bound_holds()
    }
}

#[pymodule]
pub fn tvopt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TvoptError", m.py().get_type::<TvoptError>())?;
    m.add_function(wrap_pyfunction!(derive_params, m)?)?;
    m.add_function(wrap_pyfunction!(measure_chi, m)?)?;
    m.add_function(wrap_pyfunction!(check_gossip, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(lower_bound_curve, m)?)?;
    m.add_function(wrap_pyfunction!(rho, m)?)?;
    m.add_class::<PyHardInstance>()?;
    m.add_class::<PySpanTracker>()?;
    Ok(())
}
