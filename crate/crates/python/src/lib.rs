//! Python bindings: scenario configs and runs, the inverse problem, the
//! Nor-Sand stress-point driver and the analytical oracles.

use std::collections::HashMap;
use std::path::PathBuf;

use diffmpm_core::config::ScenarioConfig;
use diffmpm_core::constitutive::{stress_point_drive, NorSandParams, NorSandPoint, TriaxialPath};
use diffmpm_core::inverse::{InverseProblem, LossKind, LossSpec, ResponseSample};
use diffmpm_core::jacobian::JacobianStrategy;
use diffmpm_core::porous::terzaghi_pressure;
use diffmpm_core::scenario::{self, cantilever, RunReport, ScenarioError};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(diffmpm, ConfigError, PyValueError);
create_exception!(diffmpm, NonConvergenceError, PyRuntimeError);
create_exception!(diffmpm, SolverError, PyRuntimeError);

fn to_py(e: ScenarioError) -> PyErr {
    match e.exit_code() {
        scenario::EXIT_CONFIG => ConfigError::new_err(e.to_string()),
        scenario::EXIT_NONCONVERGENCE => NonConvergenceError::new_err(e.to_string()),
        _ => SolverError::new_err(e.to_string()),
    }
}

/// Validated scenario configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyConfig {
    /// Parses TOML text with optional `key=value` overrides.
    #[new]
    #[pyo3(signature = (text, overrides = Vec::new()))]
    fn new(text: &str, overrides: Vec<String>) -> PyResult<Self> {
        let inner = ScenarioConfig::from_str_with(text, &overrides).map_err(|e| to_py(e.into()))?;
        inner.validate().map_err(|e| to_py(e.into()))?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        let inner = ScenarioConfig::load(&path, &overrides).map_err(|e| to_py(e.into()))?;
        inner.validate().map_err(|e| to_py(e.into()))?;
        Ok(Self { inner })
    }

    #[getter]
    fn scenario(&self) -> &'static str {
        self.inner.scenario.name()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn __repr__(&self) -> String {
        format!("Config(scenario={:?})", self.inner.scenario.name())
    }
}

#[pyclass(name = "Check", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyCheck {
    name: String,
    measured: f64,
    expected: f64,
    tol: f64,
    passed: bool,
}

#[pymethods]
impl PyCheck {
    fn __repr__(&self) -> String {
        format!(
            "Check({:?}, measured={:e}, expected={:e}, {})",
            self.name,
            self.measured,
            self.expected,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

#[pyclass(name = "Report", skip_from_py_object)]
struct PyReport {
    inner: RunReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn scenario(&self) -> String {
        self.inner.scenario.clone()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps
    }

    #[getter]
    fn wall_s(&self) -> f64 {
        self.inner.wall_s
    }

    #[getter]
    fn checks(&self) -> Vec<PyCheck> {
        self.inner
            .checks
            .iter()
            .map(|c| PyCheck {
                name: c.name.clone(),
                measured: c.measured,
                expected: c.expected,
                tol: c.tol,
                passed: c.pass,
            })
            .collect()
    }

    #[getter]
    fn metrics(&self) -> HashMap<String, f64> {
        self.inner.metrics.iter().cloned().collect()
    }

    #[getter]
    fn outputs(&self) -> Vec<PathBuf> {
        self.inner.outputs.clone()
    }

    fn all_pass(&self) -> bool {
        self.inner.all_pass()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

/// Runs a scenario.
#[pyfunction]
fn run(py: Python<'_>, config: &PyConfig) -> PyResult<PyReport> {
    let cfg = config.inner.clone();
    let inner = py.detach(|| scenario::run(&cfg)).map_err(to_py)?;
    Ok(PyReport { inner })
}

/// Runs a scenario with the Jacobian strategy fixed to `"sparse"` or `"dense"`.
#[pyfunction]
#[pyo3(name = "bench")]
fn bench_strategy(py: Python<'_>, config: &PyConfig, strategy: &str) -> PyResult<PyReport> {
    let strategy: JacobianStrategy = strategy.parse().map_err(ConfigError::new_err)?;
    let cfg = config.inner.clone();
    let inner = py.detach(|| scenario::bench(&cfg, strategy)).map_err(to_py)?;
    Ok(PyReport { inner })
}

/// Drained triaxial compression of a Nor-Sand point. Returns one dict per
/// increment with `axial_strain`, `vol_strain`, `p`, `q`, `iterations`.
#[pyfunction]
#[pyo3(signature = (preset = "loose", axial_strain = 0.25, increments = 250))]
fn triaxial(preset: &str, axial_strain: f64, increments: usize) -> PyResult<Vec<HashMap<&'static str, f64>>> {
    let params = match preset {
        "loose" => NorSandParams::loose_brasted(),
        "dense" => NorSandParams::dense_brasted(),
        other => return Err(ConfigError::new_err(format!("unknown preset `{other}` (loose or dense)"))),
    };
    if axial_strain.is_nan() || axial_strain <= 0.0 || increments == 0 {
        return Err(ConfigError::new_err("axial_strain and increments must be positive"));
    }
    let log = stress_point_drive(&mut NorSandPoint::new(params), &TriaxialPath::compression(-axial_strain, increments))
        .map_err(|e| to_py(e.into()))?;
    Ok(log
        .increments
        .iter()
        .map(|inc| {
            HashMap::from([
                ("axial_strain", inc.axial_strain),
                ("vol_strain", inc.vol_strain),
                ("p", inc.p),
                ("q", inc.q),
                ("iterations", inc.iterations as f64),
            ])
        })
        .collect())
}

/// Plane-strain strip-load problem for modulus identification.
#[pyclass(name = "InverseProblem", skip_from_py_object)]
struct PyInverse {
    inner: InverseProblem,
    spec: LossSpec,
}

#[pymethods]
impl PyInverse {
    /// Builds the problem and its reference response at `true_modulus`.
    #[new]
    #[pyo3(signature = (true_modulus, pressure = 10e3, steps = 5, cell_size = 0.5))]
    fn new(true_modulus: f64, pressure: f64, steps: usize, cell_size: f64) -> PyResult<Self> {
        let inner = InverseProblem::strip_load(true_modulus, pressure, steps, cell_size)
            .map_err(|e| to_py(ScenarioError::Mpm(e)))?;
        let reference = inner.reference(true_modulus).map_err(|e| to_py(e.into()))?;
        Ok(Self { inner, spec: LossSpec { kind: LossKind::SlopeOfForceDisplacement, reference } })
    }

    /// Reference `(displacement, force)` pairs.
    #[getter]
    fn reference(&self) -> Vec<(f64, f64)> {
        self.spec.reference.iter().map(|r: &ResponseSample| (r.displacement, r.force)).collect()
    }

    /// Loss and adjoint gradient with respect to `theta = ln E`.
    fn loss_and_gradient(&self, py: Python<'_>, theta: f64) -> PyResult<(f64, f64)> {
        py.detach(|| {
            let sim = self.inner.simulate(theta)?;
            self.inner.gradient(&sim, &self.spec)
        })
        .map_err(|e| to_py(e.into()))
    }

    /// Gradient descent in log-space; returns `(iteration, modulus, loss)` per iterate.
    #[pyo3(signature = (initial_modulus, learning_rate = 0.2, loss_threshold = 1e-6, max_iters = 20))]
    fn identify(
        &self,
        py: Python<'_>,
        initial_modulus: f64,
        learning_rate: f64,
        loss_threshold: f64,
        max_iters: usize,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let state = py
            .detach(|| self.inner.identify(&self.spec, initial_modulus.ln(), learning_rate, loss_threshold, max_iters))
            .map_err(|e| to_py(e.into()))?;
        Ok(state.history.iter().map(|r| (r.iteration, r.modulus, r.loss)).collect())
    }
}

/// Terzaghi excess pressure ratio at depth `z` below the drained surface.
#[pyfunction]
#[pyo3(signature = (z, height, tv, terms = 200))]
fn terzaghi(z: f64, height: f64, tv: f64, terms: usize) -> f64 {
    terzaghi_pressure(z, height, tv, terms)
}

/// Large-deflection cantilever tip: `(deflection / L, shortening / L)` for
/// load parameter `alpha = F L² / EI`.
#[pyfunction]
fn elastica_tip(alpha: f64) -> (f64, f64) {
    cantilever::elastica_tip(alpha)
}

#[pymodule]
fn diffmpm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyCheck>()?;
    m.add_class::<PyInverse>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(bench_strategy, m)?)?;
    m.add_function(wrap_pyfunction!(triaxial, m)?)?;
    m.add_function(wrap_pyfunction!(terzaghi, m)?)?;
    m.add_function(wrap_pyfunction!(elastica_tip, m)?)?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("NonConvergenceError", m.py().get_type::<NonConvergenceError>())?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    Ok(())
}
