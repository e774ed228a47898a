//! Python bindings for `rrm-core`.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use rrm_core::run::{self, FrameSource, RunConfig};
use rrm_core::synth::{self, SyntheticSpec};
use rrm_core::{io, metrics, ErrorClass, LayerWorkload, LinearKind, RrmError};

create_exception!(rrm, RrmFormatError, PyValueError);
create_exception!(rrm, RrmNumericError, PyValueError);

fn err(e: RrmError) -> PyErr {
    match (&e, e.class()) {
        (RrmError::Io { .. }, _) => PyOSError::new_err(e.to_string()),
        (_, ErrorClass::DataFormat) => RrmFormatError::new_err(e.to_string()),
        (_, ErrorClass::Numeric) => RrmNumericError::new_err(e.to_string()),
        (_, ErrorClass::Usage) => PyValueError::new_err(e.to_string()),
    }
}

fn shape(s: (usize, usize, usize)) -> rrm_core::Shape {
    rrm_core::Shape::new(s.0, s.1, s.2)
}

fn dims(s: rrm_core::Shape) -> (usize, usize, usize) {
    (s.channels, s.height, s.width)
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Dense `(C, H, W)` float32 tensor.
#[pyclass(name = "Tensor", module = "rrm", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: rrm_core::Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape_: (usize, usize, usize), data: Vec<f32>) -> PyResult<Self> {
        let inner = rrm_core::Tensor::from_vec(shape(shape_), data).map_err(err)?;
        Ok(PyTensor { inner })
    }

    #[staticmethod]
    fn zeros(shape_: (usize, usize, usize)) -> Self {
        PyTensor {
            inner: rrm_core::Tensor::zeros(shape(shape_)),
        }
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        dims(self.inner.shape())
    }

    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn count_nonzero(&self) -> usize {
        self.inner.count_nonzero()
    }

    fn density(&self) -> f64 {
        self.inner.density()
    }

    fn max_abs_diff(&self, other: &PyTensor) -> PyResult<f32> {
        self.inner.max_abs_diff(&other.inner).map_err(err)
    }

    fn l2_distance(&self, other: &PyTensor) -> PyResult<f64> {
        self.inner.l2_distance(&other.inner).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &PyTensor) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={})", self.inner.shape())
    }
}

fn tensors(frames: Vec<PyTensor>) -> Vec<rrm_core::Tensor> {
    frames.into_iter().map(|t| t.inner).collect()
}

fn wrap(frames: Vec<rrm_core::Tensor>) -> Vec<PyTensor> {
    frames.into_iter().map(|inner| PyTensor { inner }).collect()
}

/// Validated chain of convolution, fully-connected, ReLU and max-pool layers.
#[pyclass(name = "NetworkModel", module = "rrm", frozen, from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: rrm_core::NetworkModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: io::load_model(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyModel {
            inner: io::decode_model(data).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (input_shape, seed=0))]
    fn demo(input_shape: (usize, usize, usize), seed: u64) -> PyResult<Self> {
        Ok(PyModel {
            inner: synth::demo_model(shape(input_shape), seed).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (input_shape, depth, seed=0))]
    fn random(input_shape: (usize, usize, usize), depth: usize, seed: u64) -> PyResult<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Ok(PyModel {
            inner: synth::random_model(&mut rng, shape(input_shape), depth).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_model(&self.inner, path).map_err(err)
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        io::encode_model(&self.inner).map_err(err)
    }

    #[getter]
    fn input_shape(&self) -> (usize, usize, usize) {
        dims(self.inner.input_shape())
    }

    #[getter]
    fn output_shape(&self) -> (usize, usize, usize) {
        dims(self.inner.output_shape())
    }

    #[getter]
    fn layers(&self) -> Vec<&'static str> {
        self.inner.layers().iter().map(|l| l.name()).collect()
    }

    /// Dense multiplications per linear layer.
    fn dense_mults(&self) -> Vec<u64> {
        self.inner.linear_layers().iter().map(|l| l.dense_mults).collect()
    }

    fn forward_dense(&self, frame: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor {
            inner: self.inner.forward_dense(&frame.inner).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "NetworkModel({} -> {}, layers={:?})",
            self.inner.input_shape(),
            self.inner.output_shape(),
            self.layers()
        )
    }
}

/// Quartic map from accumulated truncation to predicted feature error.
#[pyclass(name = "ErrorModel", module = "rrm", frozen, from_py_object)]
#[derive(Clone)]
struct PyErrorModel {
    inner: rrm_core::ErrorModel,
}

#[pymethods]
impl PyErrorModel {
    #[staticmethod]
    #[pyo3(signature = (points, threshold=f64::INFINITY))]
    fn fit(points: Vec<(f64, f64)>, threshold: f64) -> PyResult<Self> {
        let points: Vec<rrm_core::CalibrationPoint> = points.into_iter().map(Into::into).collect();
        Ok(PyErrorModel {
            inner: rrm_core::ErrorModel::fit(&points, threshold).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyErrorModel {
            inner: run::load_error_model(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        run::save_error_model(&self.inner, &path).map_err(err)
    }

    fn predict(&self, accumulated_truncation: f64) -> f64 {
        self.inner.predict(accumulated_truncation)
    }

    fn with_threshold(&self, threshold: f64) -> Self {
        PyErrorModel {
            inner: self.inner.clone().with_threshold(threshold),
        }
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coefficients.to_vec()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    fn admissible_truncation(&self) -> f64 {
        self.inner.admissible_truncation()
    }

    fn calibrated_error_bound(&self) -> Option<f64> {
        self.inner.calibrated_error_bound()
    }

    fn residual_rms(&self) -> f64 {
        self.inner.residual_rms()
    }
}

/// Output of `process_sequence`.
#[pyclass(name = "SequenceResult", module = "rrm", frozen)]
struct PySequence {
    #[pyo3(get)]
    features: Vec<PyTensor>,
    #[pyo3(get)]
    keyframes: Vec<usize>,
    #[pyo3(get)]
    error_trace: Vec<f64>,
    #[pyo3(get)]
    multiplications: Vec<u64>,
    #[pyo3(get)]
    dense_sparsity: f64,
    #[pyo3(get)]
    rrm_sparsity: f64,
    /// `None` when the recurrent run did no work.
    #[pyo3(get)]
    speedup: Option<f64>,
}

#[pyfunction]
#[pyo3(signature = (model, frames, epsilon=0.0, error_model=None, chunks=1))]
fn process_sequence(
    py: Python<'_>,
    model: &PyModel,
    frames: Vec<PyTensor>,
    epsilon: f32,
    error_model: Option<&PyErrorModel>,
    chunks: usize,
) -> PyResult<PySequence> {
    let frames = tensors(frames);
    let config = rrm_core::SequenceConfig {
        epsilon,
        controller: error_model.map(|m| m.inner.clone()),
    };
    let out = py
        .detach(|| rrm_core::process_chunked(&model.inner, &frames, &config, chunks))
        .map_err(err)?;
    let speedup = match out.stats.speedup(true) {
        Ok(v) => Some(v),
        Err(RrmError::ZeroWorkload) => None,
        Err(e) => return Err(err(e)),
    };
    Ok(PySequence {
        dense_sparsity: out.stats.dense_sparsity(true).map_err(err)?,
        rrm_sparsity: out.stats.rrm_sparsity(true).map_err(err)?,
        speedup,
        multiplications: out.frames.iter().map(|f| f.multiplications()).collect(),
        keyframes: out.keyframes,
        error_trace: out.error_trace,
        features: out.frames.into_iter().map(|f| PyTensor { inner: f.features }).collect(),
    })
}

/// Full run report as a dict (same schema as the CLI JSON).
#[pyfunction]
#[pyo3(signature = (model, frames, epsilon=0.0, error_model=None, error_threshold=None, chunks=1, oracle=false))]
#[allow(clippy::too_many_arguments)]
fn run_report(
    py: Python<'_>,
    model: &PyModel,
    frames: Vec<PyTensor>,
    epsilon: f32,
    error_model: Option<&PyErrorModel>,
    error_threshold: Option<f64>,
    chunks: usize,
    oracle: bool,
) -> PyResult<Py<PyAny>> {
    let frames = tensors(frames);
    let config = RunConfig {
        epsilon,
        error_threshold,
        chunks,
        oracle,
        ..RunConfig::default()
    };
    let text = py
        .detach(|| run::run(&model.inner, &frames, &config, error_model.map(|m| &m.inner))?.to_json())
        .map_err(err)?;
    json_to_py(py, &text)
}

#[pyfunction]
#[pyo3(signature = (model, frames, epsilons, chunks=1))]
fn sweep(py: Python<'_>, model: &PyModel, frames: Vec<PyTensor>, epsilons: Vec<f32>, chunks: usize) -> PyResult<Py<PyAny>> {
    let frames = tensors(frames);
    let base = RunConfig {
        chunks,
        ..RunConfig::default()
    };
    let text = py
        .detach(|| run::sweep(&model.inner, &frames, &epsilons, &base, None)?.to_json())
        .map_err(err)?;
    json_to_py(py, &text)
}

#[pyfunction]
#[pyo3(signature = (model, videos, epsilon, threshold=f64::INFINITY))]
fn calibrate(
    py: Python<'_>,
    model: &PyModel,
    videos: Vec<Vec<PyTensor>>,
    epsilon: f32,
    threshold: f64,
) -> PyResult<PyErrorModel> {
    let videos: Vec<Vec<rrm_core::Tensor>> = videos.into_iter().map(tensors).collect();
    let inner = py
        .detach(|| run::calibrate_model(&model.inner, &videos, epsilon, threshold))
        .map_err(err)?;
    Ok(PyErrorModel { inner })
}

/// Deterministic synthetic video: `shifting-square`, `random-walk` or `static`.
#[pyfunction]
#[pyo3(signature = (kind, shape_, frames, motion=1.0, seed=0))]
fn synthetic(kind: &str, shape_: (usize, usize, usize), frames: usize, motion: f64, seed: u64) -> PyResult<Vec<PyTensor>> {
    let spec = SyntheticSpec {
        kind: kind.parse().map_err(err)?,
        shape: shape(shape_),
        frames,
        motion,
        seed,
    };
    Ok(wrap(FrameSource::Synthetic(spec).load().map_err(err)?))
}

#[pyfunction]
fn load_frames(dir: PathBuf) -> PyResult<Vec<PyTensor>> {
    Ok(wrap(io::load_frames(dir).map_err(err)?))
}

#[pyfunction]
fn save_frames(frames: Vec<PyTensor>, dir: PathBuf) -> PyResult<()> {
    io::save_frames(&tensors(frames), dir).map_err(err)
}

fn workloads(rows: &[(u64, f64)]) -> Vec<LayerWorkload> {
    rows.iter()
        .enumerate()
        .map(|(layer, &(dense_mults, density))| LayerWorkload {
            layer,
            kind: LinearKind::Conv,
            dense_mults,
            density,
            zero_fraction: 1.0 - density,
        })
        .collect()
}

/// Multiplications of layers given as `(dense_mults, density)` rows.
#[pyfunction]
fn network_cost(rows: Vec<(u64, f64)>) -> f64 {
    metrics::network_cost(&workloads(&rows))
}

/// Workload-weighted zero fraction of `(dense_mults, density)` rows.
#[pyfunction]
fn overall_sparsity(rows: Vec<(u64, f64)>) -> PyResult<f64> {
    metrics::overall_sparsity(&workloads(&rows)).map_err(err)
}

#[pyfunction]
fn speedup_ratio(dense: Vec<(u64, f64)>, rrm: Vec<(u64, f64)>) -> PyResult<f64> {
    metrics::speedup_ratio(&workloads(&dense), &workloads(&rrm)).map_err(err)
}

#[pymodule]
fn rrm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyErrorModel>()?;
    m.add_class::<PySequence>()?;
    m.add_function(wrap_pyfunction!(process_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(run_report, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_frames, m)?)?;
    m.add_function(wrap_pyfunction!(save_frames, m)?)?;
    m.add_function(wrap_pyfunction!(network_cost, m)?)?;
    m.add_function(wrap_pyfunction!(overall_sparsity, m)?)?;
    m.add_function(wrap_pyfunction!(speedup_ratio, m)?)?;
    m.add("RrmFormatError", m.py().get_type::<RrmFormatError>())?;
    m.add("RrmNumericError", m.py().get_type::<RrmNumericError>())?;
    m.add("SCHEMA_VERSION", run::SCHEMA_VERSION)?;
    Ok(())
}
