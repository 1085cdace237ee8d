use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sde_ident::harness::{self, Method, MethodSettings, Scenario};
use sde_ident::model::ParamVector;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn settings(budget: usize, n_initial: usize, log_space: bool, starts: usize) -> MethodSettings {
    MethodSettings { budget, n_initial, log_space, mle_starts: starts, ..MethodSettings::default() }
}

/// Built-in scenario ids.
#[pyfunction]
fn scenarios() -> Vec<&'static str> {
    Scenario::BUILTIN_IDS.to_vec()
}

/// Simulates a scenario; returns `(states, observations)`.
#[pyfunction]
#[pyo3(signature = (scenario, seed=0))]
fn simulate(scenario: &str, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let s = Scenario::resolve(scenario).map_err(value_err)?;
    let t = s.simulate(seed).map_err(runtime_err)?;
    Ok((t.states, t.observations))
}

/// Exact Kalman log-likelihood of `observations` under `theta`.
#[pyfunction]
fn log_likelihood(scenario: &str, theta: Vec<f64>, observations: Vec<f64>) -> PyResult<f64> {
    let s = Scenario::resolve(scenario).map_err(value_err)?;
    let theta = ParamVector::new(s.kind, theta).map_err(value_err)?;
    harness::loglik_at(&theta, s.step, &observations).map_err(runtime_err)
}

/// Runs one estimator; returns `(theta, loglik, evaluations)`.
#[pyfunction]
#[pyo3(signature = (method, scenario, observations, seed=0, budget=60, n_initial=10, log_space=false, starts=8))]
#[allow(clippy::too_many_arguments)]
fn estimate(
    py: Python<'_>,
    method: &str,
    scenario: &str,
    observations: Vec<f64>,
    seed: u64,
    budget: usize,
    n_initial: usize,
    log_space: bool,
    starts: usize,
) -> PyResult<(Vec<f64>, f64, usize)> {
    let m = Method::parse(method).map_err(value_err)?;
    let s = Scenario::resolve(scenario).map_err(value_err)?;
    let cfg = settings(budget, n_initial, log_space, starts);
    let e = py.detach(|| harness::estimate(m, &s, &observations, seed, &cfg)).map_err(runtime_err)?;
    Ok((e.theta.values, e.loglik, e.evaluations))
}

/// Runs a Monte Carlo study; returns `(study_json, table_text)`.
#[pyfunction]
#[pyo3(signature = (scenario, methods, runs=20, seed=0, budget=60, n_initial=10, log_space=false, starts=8))]
#[allow(clippy::too_many_arguments)]
fn run_study(
    py: Python<'_>,
    scenario: &str,
    methods: &str,
    runs: usize,
    seed: u64,
    budget: usize,
    n_initial: usize,
    log_space: bool,
    starts: usize,
) -> PyResult<(String, String)> {
    let list = Method::parse_list(methods).map_err(value_err)?;
    let s = Scenario::resolve(scenario).map_err(value_err)?;
    let cfg = settings(budget, n_initial, log_space, starts);
    let r = py.detach(|| harness::run_study(&s, &list, runs, seed, &cfg, None)).map_err(value_err)?;
    let json = r.to_json().map_err(runtime_err)?;
    Ok((json, harness::render_tables(&r).text))
}

#[pymodule]
fn sde_ident_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(log_likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    Ok(())
}
