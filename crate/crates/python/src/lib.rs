//! Python bindings for the myodrift pipeline. Errors surface as
//! `ValueError` carrying the core error message.

use std::collections::BTreeMap;

use myodrift_core::detectors::{self, DetectorConfig, DetectorKind, ScoreMonitor, Status};
use myodrift_core::distribution::{self, RidgePolicy, ScoreUpdate};
use myodrift_core::eval::{self, MatchResult, SynthSpec};
use myodrift_core::experiment::{run_experiment, ExperimentConfig};
use myodrift_core::preprocess::{self, SlopeVector};
use myodrift_core::{kpca, Error};
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn ridge_policy(ridge: Option<f64>, disabled: bool) -> RidgePolicy {
    match (ridge, disabled) {
        (_, true) => RidgePolicy::Disabled,
        (Some(e), false) => RidgePolicy::Fixed(e),
        (None, false) => RidgePolicy::Auto,
    }
}

fn detector_config(kind: &str, params: Option<BTreeMap<String, f64>>) -> PyResult<DetectorConfig> {
    let kind: DetectorKind = kind.parse().map_err(py_err)?;
    Ok(DetectorConfig {
        kind,
        params: params.unwrap_or_default(),
    })
}

/// Multivariate Gaussian fitted with an unbiased covariance and a ridge.
#[pyclass(name = "GaussianModel", module = "myodrift")]
struct PyGaussian {
    inner: distribution::GaussianModel,
}

#[pymethods]
impl PyGaussian {
    /// Fits rows of equal length. `ridge` fixes epsilon; `no_ridge` disables it.
    #[staticmethod]
    #[pyo3(signature = (rows, ridge=None, no_ridge=false))]
    fn fit(rows: Vec<Vec<f64>>, ridge: Option<f64>, no_ridge: bool) -> PyResult<Self> {
        let inner = distribution::GaussianModel::fit(&rows, ridge_policy(ridge, no_ridge))
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean().iter().copied().collect()
    }

    /// Sample covariance (before the ridge), row-major.
    #[getter]
    fn cov(&self) -> Vec<Vec<f64>> {
        let c = self.inner.cov();
        (0..c.nrows())
            .map(|i| c.row(i).iter().copied().collect())
            .collect()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn ridge(&self) -> f64 {
        self.inner.ridge()
    }

    #[getter]
    fn degenerate(&self) -> bool {
        self.inner.is_degenerate()
    }

    fn log_det(&self) -> f64 {
        self.inner.log_det()
    }

    fn mahalanobis(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.mahalanobis(&x).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "GaussianModel(dim={}, n={})",
            self.inner.dim(),
            self.inner.n()
        )
    }
}

#[pyfunction]
fn kl_gaussian(g0: &PyGaussian, g1: &PyGaussian) -> PyResult<f64> {
    distribution::kl_gaussian(&g0.inner, &g1.inner).map_err(py_err)
}

/// Rolling Mahalanobis scorer: `update` returns the score, or None while
/// warming up.
#[pyclass(name = "RollingReference", module = "myodrift")]
struct PyRollingReference {
    inner: distribution::RollingReference,
    next_index: usize,
}

#[pymethods]
impl PyRollingReference {
    #[new]
    #[pyo3(signature = (capacity=distribution::DEFAULT_REFERENCE_CAPACITY))]
    fn new(capacity: usize) -> PyResult<Self> {
        Ok(Self {
            inner: distribution::RollingReference::new(capacity, RidgePolicy::Auto)
                .map_err(py_err)?,
            next_index: 0,
        })
    }

    fn update(&mut self, slopes: Vec<f64>) -> PyResult<Option<f64>> {
        let v = SlopeVector {
            slopes,
            window_index: self.next_index,
            t_seconds: self.next_index as f64,
        };
        self.next_index += 1;
        Ok(match self.inner.update(&v).map_err(py_err)? {
            ScoreUpdate::Warmup => None,
            ScoreUpdate::Scored(p) => Some(p.score),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// One drift detector fed with real-valued scores.
#[pyclass(name = "Detector", module = "myodrift", unsendable)]
struct PyDetector {
    inner: ScoreMonitor,
}

#[pymethods]
impl PyDetector {
    /// `kind` is one of CUSUM, GMA, PH, DDM, ADWIN, HDDM_A, HDDM_W, SEED,
    /// ABCD; `params` overrides defaults by name.
    #[new]
    #[pyo3(signature = (kind, params=None))]
    fn new(kind: &str, params: Option<BTreeMap<String, f64>>) -> PyResult<Self> {
        let cfg = detector_config(kind, params)?;
        Ok(Self {
            inner: ScoreMonitor::new(&cfg).map_err(py_err)?,
        })
    }

    /// Returns "in_control", "warning" or "drift".
    fn update(&mut self, value: f64) -> PyResult<&'static str> {
        Ok(match self.inner.update(value).map_err(py_err)?.status {
            Status::InControl => "in_control",
            Status::Warning => "warning",
            Status::Drift => "drift",
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }
}

/// Indices at which the detector reports drift over `values`.
#[pyfunction]
#[pyo3(signature = (kind, values, params=None))]
fn drift_indices(
    kind: &str,
    values: Vec<f64>,
    params: Option<BTreeMap<String, f64>>,
) -> PyResult<Vec<usize>> {
    detectors::drift_indices(&detector_config(kind, params)?, &values).map_err(py_err)
}

#[pyfunction]
fn detector_kinds() -> Vec<&'static str> {
    DetectorKind::ALL.iter().map(DetectorKind::name).collect()
}

#[pyfunction]
fn ols_slope(values: Vec<f64>) -> f64 {
    preprocess::ols_slope(values.into_iter())
}

/// Returns (tp, fp, fn, delays).
#[pyfunction]
#[pyo3(signature = (truths, detections, window_seconds=eval::DEFAULT_MATCH_WINDOW_SECONDS))]
fn match_detections(
    truths: Vec<f64>,
    detections: Vec<f64>,
    window_seconds: f64,
) -> (usize, usize, usize, Vec<f64>) {
    let m = eval::match_detections(&truths, &detections, window_seconds);
    (m.tp, m.fp, m.fn_, m.delays_seconds)
}

#[pyfunction]
fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    eval::f1(&MatchResult {
        tp,
        fp,
        fn_,
        delays_seconds: Vec::new(),
    })
}

/// Mean delay, or None when there are no delays.
#[pyfunction]
fn add_seconds(delays: Vec<f64>) -> Option<f64> {
    eval::add_seconds(&MatchResult {
        tp: delays.len(),
        delays_seconds: delays,
        ..MatchResult::default()
    })
}

/// Returns (eigenvalues, projections as rows).
#[pyfunction]
#[pyo3(signature = (rows, components=3))]
fn kpca_fit_project(rows: Vec<Vec<f64>>, components: usize) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let (model, y) = kpca::kpca_fit_project(&rows, components).map_err(py_err)?;
    let proj = (0..y.nrows())
        .map(|i| y.row(i).iter().copied().collect())
        .collect();
    Ok((model.eigenvalues, proj))
}

/// Returns (accuracy, weights) with the bias first.
#[pyfunction]
fn separability_score(projections: Vec<Vec<f64>>, labels: Vec<bool>) -> PyResult<(f64, Vec<f64>)> {
    let n = projections.len();
    let m = projections.first().map_or(0, Vec::len);
    if projections.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("projection rows differ in length"));
    }
    let y = nalgebra_rows(&projections, n, m);
    let s = kpca::separability_score(&y, &labels).map_err(py_err)?;
    Ok((s.accuracy, s.weights))
}

fn nalgebra_rows(rows: &[Vec<f64>], n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

/// Generates a synthetic vector stream from a JSON spec. Returns (rows,
/// change times in seconds).
#[pyfunction]
fn synth_generate(spec_json: &str) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let spec: SynthSpec =
        serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (rows, truth) = eval::synth_generate(&spec).map_err(py_err)?;
    Ok((rows, truth.boundaries().to_vec()))
}

/// Runs an experiment described by a JSON config and returns the report
/// CSV. Raises if any job failed.
#[pyfunction]
fn run_experiment_json(config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    let outcome = run_experiment(&cfg).map_err(py_err)?;
    if let Some(f) = outcome.failures.first() {
        return Err(PyValueError::new_err(f.to_string()));
    }
    Ok(eval::render_report(&outcome.rows))
}

#[pymodule]
fn myodrift(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGaussian>()?;
    m.add_class::<PyRollingReference>()?;
    m.add_class::<PyDetector>()?;
    m.add_function(wrap_pyfunction!(kl_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(drift_indices, m)?)?;
    m.add_function(wrap_pyfunction!(detector_kinds, m)?)?;
    m.add_function(wrap_pyfunction!(ols_slope, m)?)?;
    m.add_function(wrap_pyfunction!(match_detections, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(add_seconds, m)?)?;
    m.add_function(wrap_pyfunction!(kpca_fit_project, m)?)?;
    m.add_function(wrap_pyfunction!(separability_score, m)?)?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment_json, m)?)?;
    Ok(())
}
