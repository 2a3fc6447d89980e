//! Python bindings: scenario config, channel draws, the joint optimizer,
//! baselines, low-rank completion and sweeps.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ris_uplink::channel::ChannelSet;
use ris_uplink::estimation::{complete_low_rank as complete, CompletionOptions, SampleMask, SampledMatrix};
use ris_uplink::experiments::{
    self, complexity_estimate, estimate_realization, parse_config, realization_channels, run_method,
    ComplexityMethod, ExperimentConfig, Method,
};
use ris_uplink::manifold::{BeamMatrix, PhaseVector, ProductPoint};
use ris_uplink::power::{self, Qos, SolveReport};
use ris_uplink::Error;

create_exception!(ris_uplink_py, RisError, PyException);
create_exception!(ris_uplink_py, ConfigError, RisError);
create_exception!(ris_uplink_py, InfeasibleError, RisError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) => ConfigError::new_err(e.to_string()),
        Error::Infeasible(_) => InfeasibleError::new_err(e.to_string()),
        _ => RisError::new_err(e.to_string()),
    }
}

fn columns(m: &DMatrix<Complex64>) -> Vec<Vec<Complex64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn rows(m: &DMatrix<Complex64>) -> Vec<Vec<Complex64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<Complex64>]) -> PyResult<DMatrix<Complex64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(RisError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |r, c| rows[r][c]))
}

fn from_columns(cols: &[Vec<Complex64>]) -> PyResult<DMatrix<Complex64>> {
    Ok(from_rows(cols)?.transpose())
}

/// Scenario and sweep settings parsed from flat `key = value` text.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self { inner: parse_config(text).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new_err(format!("{path}: {e}")))?;
        Self::new(&text)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn k_devices(&self) -> usize {
        self.inner.system.k_devices
    }

    #[getter]
    fn m_antennas(&self) -> usize {
        self.inner.system.m_antennas
    }

    #[getter]
    fn n_elements(&self) -> usize {
        self.inner.system.n_elements()
    }

    #[getter]
    fn rate_min(&self) -> f64 {
        self.inner.system.rate_min
    }

    #[getter]
    fn noise_power(&self) -> f64 {
        self.inner.system.noise_power
    }

    #[getter]
    fn p_max(&self) -> f64 {
        self.inner.system.p_max
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.system.rng_seed
    }

    #[getter]
    fn realizations(&self) -> usize {
        self.inner.realizations
    }

    fn __repr__(&self) -> String {
        let s = &self.inner.system;
        format!("Config(K={}, M={}, N={}, rate_min={})", s.k_devices, s.m_antennas, s.n_elements(), s.rate_min)
    }
}

/// One channel realization.
#[pyclass(name = "Channels", from_py_object)]
#[derive(Clone)]
struct PyChannels {
    inner: ChannelSet,
}

#[pymethods]
impl PyChannels {
    /// Draws the realization used for `seed` in sweeps.
    #[staticmethod]
    fn draw(config: &PyConfig, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: realization_channels(&config.inner.system, seed).map_err(to_py)? })
    }

    /// `(truth, estimate)` from `fraction` of the RIS elements.
    #[staticmethod]
    fn estimate(config: &PyConfig, fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (t, e) = estimate_realization(&config.inner.system, fraction, seed).map_err(to_py)?;
        Ok((Self { inner: t }, Self { inner: e }))
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn fingerprint(&self) -> u64 {
        self.inner.fingerprint()
    }

    /// Direct channels, one list of M entries per device.
    fn direct(&self) -> Vec<Vec<Complex64>> {
        self.inner.direct.iter().map(|d| d.iter().copied().collect()).collect()
    }

    /// Device-to-RIS channels, one list of N entries per device.
    fn device_ris(&self) -> Vec<Vec<Complex64>> {
        self.inner.device_ris.iter().map(|d| d.iter().copied().collect()).collect()
    }

    /// RIS-to-BS matrix as M rows of N entries.
    fn ris_bs(&self) -> Vec<Vec<Complex64>> {
        rows(&self.inner.ris_bs)
    }

    fn without_ris(&self) -> Self {
        Self { inner: self.inner.without_ris() }
    }

    /// `(G error, U error)` relative Frobenius errors of `self` against `truth`.
    fn errors_against(&self, truth: &PyChannels) -> PyResult<(f64, f64)> {
        experiments::csi_errors(&truth.inner, &self.inner).map_err(to_py)
    }
}

#[pyclass(name = "Report", skip_from_py_object)]
struct PyReport {
    #[pyo3(get)]
    total_power: f64,
    #[pyo3(get)]
    powers: Vec<f64>,
    #[pyo3(get)]
    feasible: bool,
    #[pyo3(get)]
    outer_iterations: usize,
    #[pyo3(get)]
    inner_iterations: usize,
    #[pyo3(get)]
    rate_slack: Vec<f64>,
    #[pyo3(get)]
    power_history: Vec<f64>,
    #[pyo3(get)]
    theta: Vec<Complex64>,
    /// Receive beams, one list per device.
    #[pyo3(get)]
    w: Vec<Vec<Complex64>>,
}

impl From<SolveReport> for PyReport {
    fn from(r: SolveReport) -> Self {
        Self {
            total_power: r.total_power,
            powers: r.powers.as_vector().iter().copied().collect(),
            feasible: r.feasible,
            outer_iterations: r.outer_iterations,
            inner_iterations: r.max_inner_iterations(),
            rate_slack: r.rate_slack.iter().copied().collect(),
            power_history: r.power_history.clone(),
            theta: r.point.theta.as_vector().iter().copied().collect(),
            w: columns(r.point.w.as_matrix()),
        }
    }
}

#[pymethods]
impl PyReport {
    fn __repr__(&self) -> String {
        format!(
            "Report(total_power={:.4e}, feasible={}, outer_iterations={})",
            self.total_power, self.feasible, self.outer_iterations
        )
    }
}

fn parse_method(name: &str) -> PyResult<Method> {
    name.parse().map_err(to_py)
}

/// Runs one method (`rcg_jo`, `random_phase_mrt`, `no_ris`,
/// `rcg_jo_estimated_csi`) on a channel realization.
#[pyfunction]
#[pyo3(signature = (channels, config, method = "rcg_jo", seed = 0))]
fn solve(py: Python<'_>, channels: &PyChannels, config: &PyConfig, method: &str, seed: u64) -> PyResult<PyReport> {
    let method = parse_method(method)?;
    let (ch, cfg) = (channels.inner.clone(), config.inner.clone());
    let report = py
        .detach(move || run_method(method, &ch, &cfg.system, cfg.sample_fraction, seed))
        .map_err(to_py)?;
    Ok(report.into())
}

/// Minimal per-device powers at fixed phases and beams.
#[pyfunction]
fn min_power(
    channels: &PyChannels,
    theta: Vec<Complex64>,
    w: Vec<Vec<Complex64>>,
    config: &PyConfig,
) -> PyResult<Vec<f64>> {
    let theta = PhaseVector::new(DVector::from_vec(theta)).map_err(to_py)?;
    let w = BeamMatrix::new(from_columns(&w)?).map_err(to_py)?;
    let qos = Qos::from_config(&config.inner.system);
    let p = power::min_power(&channels.inner, &ProductPoint::new(theta, w), &qos).map_err(to_py)?;
    Ok(p.as_vector().iter().copied().collect())
}

/// Analytic flop count for `rcg_jo` or `sdr`.
#[pyfunction]
fn complexity(method: &str, k: usize, m: usize, n: usize) -> PyResult<f64> {
    let method = match method {
        "rcg_jo" => ComplexityMethod::RcgJo,
        "sdr" => ComplexityMethod::Sdr,
        other => return Err(ConfigError::new_err(format!("unknown method `{other}`"))),
    };
    complexity_estimate(method, k, m, n).map_err(to_py)
}

/// Nuclear-norm completion of `matrix` (a list of rows) from the entries in `mask`.
#[pyfunction]
#[pyo3(signature = (matrix, mask, max_iters = 5000, tol = 1e-6))]
fn complete_low_rank(
    matrix: Vec<Vec<Complex64>>,
    mask: Vec<(usize, usize)>,
    max_iters: usize,
    tol: f64,
) -> PyResult<Vec<Vec<Complex64>>> {
    let full = from_rows(&matrix)?;
    let mask = SampleMask::new(full.nrows(), full.ncols(), mask).map_err(to_py)?;
    let sampled = SampledMatrix::sample(&full, &mask).map_err(to_py)?;
    let opts = CompletionOptions { max_iters, tol, ..CompletionOptions::default() };
    Ok(rows(&complete(&sampled, &opts).map_err(to_py)?))
}

/// Runs the sweep described by `config`; returns one dict per run.
#[pyfunction]
fn run_sweep<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let spec = config.inner.sweep_spec();
    let res = py.detach(move || experiments::run_sweep(&spec)).map_err(to_py)?;
    res.records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("method", r.method.name())?;
            d.set_item("variable", r.variable.name())?;
            d.set_item("value", r.value)?;
            d.set_item("realization", r.realization)?;
            d.set_item("seed", r.seed)?;
            d.set_item("channel_hash", r.channel_hash)?;
            d.set_item("total_power_w", r.total_power_w)?;
            d.set_item("required_power_w", r.required_power_w)?;
            d.set_item("feasible", r.feasible)?;
            d.set_item("outer_iters", r.outer_iters)?;
            d.set_item("inner_iters", r.inner_iters)?;
            d.set_item("error", r.error.clone())?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
pub fn ris_uplink_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RisError", m.py().get_type::<RisError>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyChannels>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(min_power, m)?)?;
    m.add_function(wrap_pyfunction!(complexity, m)?)?;
    m.add_function(wrap_pyfunction!(complete_low_rank, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
