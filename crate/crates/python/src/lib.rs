//! Python bindings: configuration, the full pipeline, the planted generator,
//! standalone evaluation and the tensor n-mode product.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use ::sugartc::assign::read_rankings;
use ::sugartc::config::{PipelineConfig, KEYS};
use ::sugartc::eval::{evaluate as evaluate_predictions, f_measure as f_measure_core, GroundTruth, MetricsReport};
use ::sugartc::matrix::DenseMatrix;
use ::sugartc::pipeline::{self, RunOptions, Stage};
use ::sugartc::synth::{generate_planted, GenConfig};
use ::sugartc::tensor::{DenseTensor3, Mode};
use ::sugartc::Error;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    if e.is_usage() {
        PyValueError::new_err(msg)
    } else if e.is_numerical() {
        PyArithmeticError::new_err(msg)
    } else if matches!(e, Error::Io { .. }) {
        PyIOError::new_err(msg)
    } else {
        PyValueError::new_err(msg)
    }
}

/// Pipeline settings, addressed by the same keys as the config file.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (path=None, **overrides))]
    fn new(path: Option<PathBuf>, overrides: Option<std::collections::HashMap<String, String>>) -> PyResult<Self> {
        let mut inner = match path {
            Some(p) => PipelineConfig::from_file(&p).map_err(to_py)?,
            None => PipelineConfig::default(),
        };
        let mut pairs: Vec<_> = overrides.unwrap_or_default().into_iter().collect();
        pairs.sort();
        for (k, v) in pairs {
            inner.set(&k, &v).map_err(to_py)?;
        }
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(to_py)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .get(key)
            .ok_or_else(|| PyValueError::new_err(format!("unknown key `{key}`")))
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        KEYS.to_vec()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("Config(data={:?})", self.inner.get("data").unwrap_or_default())
    }
}

/// Retrieval and F-score summary.
#[pyclass(name = "Metrics", skip_from_py_object)]
#[derive(Clone)]
struct PyMetrics {
    inner: MetricsReport,
}

#[pymethods]
impl PyMetrics {
    #[getter]
    fn average_fscore(&self) -> f64 {
        self.inner.average_fscore
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn cutoffs(&self) -> Vec<usize> {
        self.inner.cutoffs.clone()
    }

    /// MAP per cutoff.
    #[getter]
    fn map(&self) -> Vec<f64> {
        self.inner.map.clone()
    }

    fn map_at(&self, cutoff: usize) -> Option<f64> {
        self.inner.map_at(cutoff)
    }

    /// `(query, [AP per cutoff])` pairs.
    #[getter]
    fn queries(&self) -> Vec<(String, Vec<f64>)> {
        self.inner.queries.iter().map(|q| (q.query.clone(), q.ap.clone())).collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!("Metrics(average_fscore={:.4})", self.inner.average_fscore)
    }
}

/// What a pipeline run produced.
#[pyclass(name = "RunResult", skip_from_py_object)]
struct PyRunResult {
    #[pyo3(get)]
    metrics: Option<PyMetrics>,
    #[pyo3(get)]
    observed_metrics: Option<PyMetrics>,
    #[pyo3(get)]
    iterations: Option<usize>,
    #[pyo3(get)]
    trace: Vec<f64>,
    /// `image -> [(tag, score)]`, best first.
    #[pyo3(get)]
    rankings: Vec<(String, Vec<(String, f64)>)>,
    #[pyo3(get)]
    anchor_images: Vec<String>,
    #[pyo3(get)]
    anchor_users: Vec<String>,
    #[pyo3(get)]
    cache_hit: bool,
}

/// Run the pipeline up to `stage`. With `out_dir` the usual files are
/// written there; otherwise everything stays in memory.
#[pyfunction]
#[pyo3(signature = (config, out_dir=None, stage="eval", cache=false))]
fn run(config: &PyConfig, out_dir: Option<PathBuf>, stage: &str, cache: bool) -> PyResult<PyRunResult> {
    let stop_after: Stage = stage.parse().map_err(to_py)?;
    let opts = RunOptions {
        cache: cache && out_dir.is_some(),
        out_dir,
        stop_after,
        ..RunOptions::default()
    };
    let res = pipeline::run(&config.inner, &opts).map_err(to_py)?;
    let mut out = PyRunResult {
        metrics: res.metrics.map(|inner| PyMetrics { inner }),
        observed_metrics: res.observed_metrics.map(|inner| PyMetrics { inner }),
        iterations: res.completion.as_ref().map(|c| c.iterations),
        trace: res.completion.map(|c| c.trace).unwrap_or_default(),
        rankings: Vec::new(),
        anchor_images: Vec::new(),
        anchor_users: Vec::new(),
        cache_hit: res.cache_hit,
    };
    if let Some(ds) = &res.dataset {
        let v = &ds.vocab;
        if let Some(a) = &res.anchors {
            out.anchor_images = a.anchor_images.iter().map(|&i| v.images.name(i).to_owned()).collect();
            out.anchor_users = a.anchor_users.iter().map(|&u| v.users.name(u).to_owned()).collect();
        }
        if let Some(assign) = &res.assignment {
            out.rankings = assign
                .rankings
                .iter()
                .map(|r| {
                    let tags = r.tags.iter().map(|&(t, s)| (v.tags.name(t).to_owned(), s)).collect();
                    (v.images.name(r.image).to_owned(), tags)
                })
                .collect();
        }
    }
    Ok(out)
}

/// Write a planted dataset (five TSV files) to `out_dir` and return the
/// true tags per image.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=7, images=200, users=40, tags=30, clusters=5, noise=0.1, missing=0.3))]
#[allow(clippy::too_many_arguments)]
fn synth(
    out_dir: PathBuf,
    seed: u64,
    images: usize,
    users: usize,
    tags: usize,
    clusters: usize,
    noise: f64,
    missing: f64,
) -> PyResult<Vec<(String, Vec<String>)>> {
    let cfg = GenConfig {
        seed,
        num_images: images,
        num_users: users,
        num_tags: tags,
        num_clusters: clusters,
        noise_rate: noise,
        missing_rate: missing,
        ..GenConfig::default()
    };
    let planted = generate_planted(&cfg).map_err(to_py)?;
    planted.write(&out_dir).map_err(to_py)?;
    Ok(planted.ground_truth)
}

/// Score a predictions file against a ground-truth file.
#[pyfunction]
#[pyo3(signature = (predictions, ground_truth, config=None))]
fn evaluate(predictions: PathBuf, ground_truth: PathBuf, config: Option<&PyConfig>) -> PyResult<PyMetrics> {
    let pred = read_rankings(&predictions).map_err(to_py)?;
    let gt = GroundTruth::read(&ground_truth).map_err(to_py)?;
    let default = PipelineConfig::default();
    let cfg = config.map_or(&default, |c| &c.inner);
    let inner = evaluate_predictions(&pred, &gt, &cfg.eval).map_err(to_py)?;
    Ok(PyMetrics { inner })
}

#[pyfunction]
fn f_measure(precision: f64, recall: f64) -> f64 {
    f_measure_core(precision, recall)
}

/// Dense three-way tensor in (tag, image, user) order.
#[pyclass(name = "Tensor", skip_from_py_object)]
struct PyTensor {
    inner: DenseTensor3,
}

#[pymethods]
impl PyTensor {
    /// `values` is row-major with the last index fastest.
    #[new]
    fn new(dims: (usize, usize, usize), values: Vec<f64>) -> PyResult<Self> {
        DenseTensor3::from_vec(dims, values).map(|inner| Self { inner }).map_err(to_py)
    }

    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        self.inner.dims()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn get(&self, i: usize, j: usize, k: usize) -> PyResult<f64> {
        let (a, b, c) = self.inner.dims();
        if i >= a || j >= b || k >= c {
            return Err(PyValueError::new_err(format!("index ({i}, {j}, {k}) outside {:?}", (a, b, c))));
        }
        Ok(self.inner.get(i, j, k))
    }

    /// Multiply along `mode` (1, 2 or 3) by a matrix given as a list of rows.
    fn mode_product(&self, matrix: Vec<Vec<f64>>, mode: usize) -> PyResult<PyTensor> {
        let mode = Mode::from_number(mode).ok_or_else(|| PyValueError::new_err(format!("mode must be 1, 2 or 3, got {mode}")))?;
        let cols = matrix.first().map_or(0, Vec::len);
        if matrix.iter().any(|r| r.len() != cols) {
            return Err(PyValueError::new_err("matrix rows differ in length"));
        }
        let rows = matrix.len();
        let m = DenseMatrix::from_vec(rows, cols, matrix.into_iter().flatten().collect()).map_err(to_py)?;
        self.inner.mode_product(&m, mode).map(|inner| PyTensor { inner }).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Tensor(dims={:?})", self.inner.dims())
    }
}

#[pymodule]
#[pyo3(name = "sugartc")]
fn sugartc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyMetrics>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyTensor>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(f_measure, m)?)?;
    Ok(())
}
