//! Python bindings: grids, power flow, allocation, metrics and batch runs.
//!
//! Structured results (reports, comparisons) are returned as JSON text so
//! the Python side can `json.loads` them without extra conversion layers.

use std::collections::BTreeSet;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lvse_core::allocation::{allocate, parse_substation, EquipmentVariant};
use lvse_core::config::ScenarioConfig;
use lvse_core::error::Error;
use lvse_core::evaluation;
use lvse_core::power_flow::{solve_timestep, PowerFlowOptions};
use lvse_core::scenario::{self, Dump, QualityReport};
use lvse_core::{fixtures, grid, GridTopology, Network};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::Schema { .. }
        | Error::Io { .. }
        | Error::DuplicateId { .. }
        | Error::UnknownBus(_)
        | Error::UnknownLine(_)
        | Error::UnknownProsumer(_)
        | Error::Invalid { .. }
        | Error::Incomparable(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A validated grid with its profiles.
#[pyclass(name = "Grid", module = "lvse", frozen)]
struct PyGrid {
    inner: GridTopology,
    net: Network,
}

impl PyGrid {
    fn wrap(inner: GridTopology) -> PyResult<Self> {
        let net = Network::new(&inner).map_err(py_err)?;
        Ok(PyGrid { inner, net })
    }
}

#[pymethods]
impl PyGrid {
    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        PyGrid::wrap(grid::load_grid(dir).map_err(py_err)?)
    }

    #[staticmethod]
    #[pyo3(signature = (name, start=0, steps=96))]
    fn bundled(name: &str, start: usize, steps: usize) -> PyResult<Self> {
        PyGrid::wrap(fixtures::bundled(name, start, steps).map_err(py_err)?)
    }

    fn write(&self, dir: &str) -> PyResult<()> {
        grid::write_grid(&self.inner, dir).map_err(py_err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    #[getter]
    fn bus_ids(&self) -> Vec<String> {
        self.inner.buses.iter().map(|b| b.id.clone()).collect()
    }

    #[getter]
    fn line_ids(&self) -> Vec<String> {
        self.inner.lines.iter().map(|l| l.id.clone()).collect()
    }

    #[getter]
    fn prosumer_ids(&self) -> Vec<String> {
        self.inner.prosumers.iter().map(|p| p.id.clone()).collect()
    }

    #[getter]
    fn cabinet_ids(&self) -> Vec<String> {
        self.inner.cabinets.iter().map(|c| c.id.clone()).collect()
    }

    /// Impedance magnitude (ohm) of the cheapest path between two buses.
    fn electrical_distance(&self, from_bus: &str, to_bus: &str) -> PyResult<f64> {
        self.inner.electrical_distance(from_bus, to_bus).map_err(py_err)
    }

    /// Returns `(voltage magnitudes in pu, voltage angles in rad, line
    /// currents in A)` at timestep `t`.
    fn power_flow(&self, t: usize) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let g = &self.inner;
        let sol = solve_timestep(g, &self.net, &g.profiles, t, &PowerFlowOptions::default()).map_err(py_err)?;
        let vm = sol.flows.voltages.iter().map(|v| v.norm()).collect();
        let va = sol.flows.voltages.iter().map(|v| v.arg()).collect();
        let ia = (0..g.lines.len()).map(|k| sol.flows.line_current_amps(&self.net, k)).collect();
        Ok((vm, va, ia))
    }

    /// Devices chosen for a variant: `(cabinet ids, prosumer ids)`.
    #[pyo3(signature = (substation="none", ikvs_pct=0.0, imsys_pct=0.0, seed=0))]
    fn allocate(&self, substation: &str, ikvs_pct: f64, imsys_pct: f64, seed: u64) -> PyResult<(Vec<String>, Vec<String>)> {
        let sub = parse_substation(substation).map_err(py_err)?;
        let v = EquipmentVariant::new("py", sub, ikvs_pct, imsys_pct).with_seed(seed);
        v.validate().map_err(py_err)?;
        let a = allocate(&self.inner, &v);
        Ok((a.ikvs, a.imsys))
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid(name={:?}, buses={}, lines={}, prosumers={}, steps={})",
            self.inner.name,
            self.inner.buses.len(),
            self.inner.lines.len(),
            self.inner.prosumers.len(),
            self.inner.steps()
        )
    }
}

#[pyfunction]
fn voltage_quality(v_est: f64, v_pf: f64) -> f64 {
    evaluation::voltage_quality(v_est, v_pf)
}

#[pyfunction]
fn loading_quality(i_est: f64, i_pf: f64, i_th_max: f64) -> f64 {
    evaluation::loading_quality(i_est, i_pf, i_th_max)
}

#[pyfunction]
fn pooled_quantile(samples: Vec<f64>, q: f64) -> PyResult<f64> {
    evaluation::pooled_quantile(&samples, q).map_err(py_err)
}

/// Runs a scenario config and returns `(report JSON list, failed variant ids)`.
#[pyfunction]
#[pyo3(signature = (config, out=None, workers=None, dumps=Vec::new()))]
fn run_scenario(
    py: Python<'_>,
    config: &str,
    out: Option<String>,
    workers: Option<usize>,
    dumps: Vec<String>,
) -> PyResult<(Vec<String>, Vec<String>)> {
    let mut cfg = ScenarioConfig::from_file(config).map_err(py_err)?;
    if let Some(o) = out {
        cfg.out = o.into();
    }
    if let Some(w) = workers {
        cfg.workers = w.max(1);
    }
    let dumps: BTreeSet<Dump> = dumps.iter().map(|d| d.parse()).collect::<Result<_, _>>().map_err(py_err)?;
    let artifacts = py
        .detach(|| scenario::run_scenario(cfg, &dumps))
        .map_err(py_err)?;
    let reports = artifacts
        .reports
        .iter()
        .map(|r| r.to_json())
        .collect::<Result<_, _>>()
        .map_err(py_err)?;
    let failed = artifacts
        .variants
        .iter()
        .filter(|v| v.error.is_some())
        .map(|v| v.id.clone())
        .collect();
    Ok((reports, failed))
}

/// Comparison table (CSV text) of report.json files.
#[pyfunction]
fn compare_reports(paths: Vec<String>) -> PyResult<String> {
    let reports = paths
        .iter()
        .map(QualityReport::from_json_file)
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    Ok(scenario::compare_variants(&reports).map_err(py_err)?.to_csv())
}

#[pymodule]
fn lvse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_function(wrap_pyfunction!(voltage_quality, m)?)?;
    m.add_function(wrap_pyfunction!(loading_quality, m)?)?;
    m.add_function(wrap_pyfunction!(pooled_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(compare_reports, m)?)?;
    m.add("BUNDLED_GRIDS", fixtures::BUNDLED.to_vec())?;
    Ok(())
}
