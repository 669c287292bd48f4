//! Python bindings: run registry experiments, compare against goldens and
//! evaluate the standard phase velocities of sampled 1D states.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use biflow::experiment::config::ConfigMap;
use biflow::experiment::report::RunStatus;
use biflow::flow::velocities_standard;
use biflow::{Error, RealPairField, SpatialGrid, UnitSystem};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(m) => PyValueError::new_err(m),
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Registered experiments as `(name, description)` pairs, in registry order.
#[pyfunction]
fn list_experiments() -> Vec<(String, String)> {
    biflow::experiment::list_experiments()
        .iter()
        .map(|e| (e.name.to_string(), e.description.to_string()))
        .collect()
}

/// Runs one experiment into `out_dir` and returns its report as a dict with
/// keys `status`, `metrics`, `checks`, `files` and `elapsed_seconds`.
///
/// `settings` holds extra `key = value` configuration entries.
#[pyfunction]
#[pyo3(signature = (name, out_dir, settings = None, format = "json"))]
fn run_experiment<'py>(
    py: Python<'py>,
    name: &str,
    out_dir: PathBuf,
    settings: Option<ConfigMap>,
    format: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let mut set = settings.unwrap_or_default();
    set.insert("out_dir".into(), out_dir.display().to_string());
    set.insert("format".into(), format.into());
    let cfg = biflow::experiment::load_config(Some(name), "", &set).map_err(to_py)?;
    let report = py.detach(|| biflow::experiment::run_experiment(&cfg)).map_err(to_py)?;

    let out = PyDict::new(py);
    out.set_item("experiment", &report.experiment)?;
    out.set_item("status", report.status.label())?;
    if let RunStatus::Error { kind, message } = &report.status {
        out.set_item("error", (kind, message))?;
    }
    let metrics = PyDict::new(py);
    for (k, v) in &report.metrics {
        metrics.set_item(k, v)?;
    }
    out.set_item("metrics", metrics)?;
    let checks = PyDict::new(py);
    for c in &report.checks {
        checks.set_item(&c.name, (c.value, c.limit, c.pass))?;
    }
    out.set_item("checks", checks)?;
    out.set_item("files", &report.files)?;
    out.set_item("elapsed_seconds", report.elapsed_seconds)?;
    Ok(out)
}

/// Compares an output directory with a golden one: `(passed, first_difference)`.
#[pyfunction]
fn compare_golden(report_dir: PathBuf, golden_dir: PathBuf) -> PyResult<(bool, Option<String>)> {
    let o = biflow::experiment::report::compare_golden(&report_dir, &golden_dir).map_err(to_py)?;
    Ok((o.pass, o.first_diff))
}

/// Phase velocities `(v1, v2)` of ψ = ψ₁ + iψ₂ sampled on a uniform grid over
/// `[x_min, x_max]`, with ħ = m = 1. Points where ψ_a vanishes are `nan`.
#[pyfunction]
fn phase_velocities(x_min: f64, x_max: f64, psi1: Vec<f64>, psi2: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let grid = SpatialGrid::line(x_min, x_max, psi1.len(), false).map_err(to_py)?;
    let f = RealPairField::from_samples(grid, UnitSystem::default(), psi1, psi2, 0.0).map_err(to_py)?;
    let vel = velocities_standard(&f);
    let masked = |a: usize| -> Vec<f64> {
        vel.v[a][0]
            .iter()
            .zip(&vel.defined[a])
            .map(|(v, ok)| if *ok { *v } else { f64::NAN })
            .collect()
    };
    Ok((masked(0), masked(1)))
}

#[pymodule]
fn biflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(list_experiments, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(compare_golden, m)?)?;
    m.add_function(wrap_pyfunction!(phase_velocities, m)?)?;
    Ok(())
}
