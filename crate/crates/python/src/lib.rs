//! Python bindings. Configs are keyword arguments with the same names as the
//! CLI's JSON config; reports come back as plain dicts.

use blockipm::cli::{cmd_bench, cmd_check_derivatives, cmd_dims, cmd_solve, CliError, RunConfig};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;

create_exception!(pyblockipm, BlockIpmError, PyException);

fn err(e: CliError) -> PyErr {
    BlockIpmError::new_err((e.to_string(), e.exit_code()))
}

fn config(py: Python<'_>, case: &str, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let fields = PyDict::new(py);
    if let Some(kw) = kwargs {
        fields.update(kw.as_mapping())?;
    }
    fields.set_item("case", case)?;
    let text: String = py
        .import("json")?
        .call_method1("dumps", (fields,))?
        .extract()?;
    RunConfig::from_json(&text).map_err(err)
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text =
        serde_json::to_string(value).map_err(|e| BlockIpmError::new_err((e.to_string(), 1u8)))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Solves one instance and returns the solve report.
#[pyfunction]
#[pyo3(signature = (case, **kwargs))]
fn solve<'py>(
    py: Python<'py>,
    case: &str,
    kwargs: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(py, case, kwargs)?;
    let rep = py.detach(|| cmd_solve(&cfg)).map_err(err)?;
    to_py(py, &rep)
}

/// Central-difference derivative check at random points.
#[pyfunction]
#[pyo3(signature = (case, **kwargs))]
fn check_derivatives<'py>(
    py: Python<'py>,
    case: &str,
    kwargs: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(py, case, kwargs)?;
    let rep = py.detach(|| cmd_check_derivatives(&cfg)).map_err(err)?;
    to_py(py, &rep)
}

/// Problem and memory dimensions for `N` scenarios of a case.
#[pyfunction]
#[pyo3(signature = (case, scenarios = 1))]
fn dims<'py>(py: Python<'py>, case: &str, scenarios: usize) -> PyResult<Bound<'py, PyAny>> {
    let cfg = RunConfig {
        case: case.into(),
        scenarios,
        ..Default::default()
    };
    let rows = cmd_dims(&[cfg]).map_err(err)?;
    to_py(py, &rows[0])
}

/// Runs every config in `configs` (a list of dicts) and returns the table.
#[pyfunction]
#[pyo3(name = "bench")]
fn run_bench<'py>(py: Python<'py>, configs: &Bound<'py, PyList>) -> PyResult<Bound<'py, PyAny>> {
    let json = py.import("json")?;
    let cfgs = configs
        .iter()
        .map(|c| {
            let text: String = json.call_method1("dumps", (c,))?.extract()?;
            RunConfig::from_json(&text).map_err(err)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let rep = py.detach(|| cmd_bench(&cfgs));
    to_py(py, &rep)
}

#[pymodule]
fn pyblockipm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BlockIpmError", m.py().get_type::<BlockIpmError>())?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(check_derivatives, m)?)?;
    m.add_function(wrap_pyfunction!(dims, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    Ok(())
}
