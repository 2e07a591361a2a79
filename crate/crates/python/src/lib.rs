use ::curvlab::{cli, coupling, registry, transport};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn instance(name: &str, nodes: Option<usize>) -> PyResult<registry::Instance> {
    registry::build(name, nodes).map_err(err)
}

#[pyfunction]
fn registry_list() -> Vec<(String, String)> {
    registry::list().into_iter().map(|(n, d)| (n.to_string(), d.to_string())).collect()
}

#[pyfunction]
#[pyo3(signature = (name, nodes=None))]
fn registry_dump(name: &str, nodes: Option<usize>) -> PyResult<String> {
    serde_json::to_string(&instance(name, nodes)?.dump()).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (name, mu, nu, p, nodes=None))]
fn wasserstein(name: &str, mu: Vec<f64>, nu: Vec<f64>, p: f64, nodes: Option<usize>) -> PyResult<f64> {
    let inst = instance(name, nodes)?;
    Ok(transport::wasserstein(&inst.space, &mu, &nu, p).map_err(err)?.0)
}

#[pyfunction]
#[pyo3(signature = (name, p, t, steps, nodes=None))]
fn perturbed_cost_exact(name: &str, p: f64, t: f64, steps: usize, nodes: Option<usize>) -> PyResult<f64> {
    let inst = instance(name, nodes)?;
    coupling::perturbed_cost_exact(&inst.space, inst.field.k_hat_table(), &inst.mu, &inst.nu, p, t, steps)
        .map_err(err)
}

/// Runs a config given as JSON and returns the report as JSON.
#[pyfunction]
fn run_config(config: &str) -> PyResult<String> {
    let cfg: cli::ExperimentConfig = serde_json::from_str(config).map_err(err)?;
    let outcome = cli::run(&cfg).map_err(err)?;
    serde_json::to_string(&outcome.report).map_err(err)
}

#[pymodule]
fn curvlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(registry_list, m)?)?;
    m.add_function(wrap_pyfunction!(registry_dump, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein, m)?)?;
    m.add_function(wrap_pyfunction!(perturbed_cost_exact, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
