//! Python bindings: model construction, training, evaluation, data I/O and
//! the core scan and pooling operators.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use stmamba::data::{self, EEGTrialSet, SynthConfig};
use stmamba::model::{self, Ablation};
use stmamba::ssm::{lti_convolve, ssm_kernel_lti, ScanMode, SsmParams};
use stmamba::tensor::{sliding_pool as pool_op, PoolKind};
use stmamba::training::{self, TrainConfig};
use stmamba::ErrorKind;

fn err(e: stmamba::Error) -> PyErr {
    let msg = e.to_string();
    match e.kind() {
        ErrorKind::User => PyValueError::new_err(msg),
        ErrorKind::Data => PyIOError::new_err(msg),
        ErrorKind::Numerical => PyArithmeticError::new_err(msg),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Dense float64 tensor in row-major order.
#[pyclass(name = "Tensor", module = "stmamba", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: stmamba::Tensor<f64>,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(data: Vec<f64>, shape: Vec<usize>) -> PyResult<Self> {
        Ok(Self { inner: stmamba::Tensor::new(shape, data).map_err(err)? })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    /// Flat row-major values.
    fn tolist(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.numel()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

#[pyclass(name = "ModelConfig", module = "stmamba", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: model::ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (n_channels, n_samples, n_classes, ablation = "full"))]
    fn new(n_channels: usize, n_samples: usize, n_classes: usize, ablation: &str) -> PyResult<Self> {
        let ablation: Ablation = ablation.parse().map_err(err)?;
        let inner = model::ModelConfig::new(n_channels, n_samples, n_classes).map_err(err)?.with_ablation(ablation);
        Ok(Self { inner })
    }

    #[staticmethod]
    fn bci2a() -> Self {
        Self { inner: model::ModelConfig::bci2a() }
    }

    #[staticmethod]
    fn bci2b() -> Self {
        Self { inner: model::ModelConfig::bci2b() }
    }

    #[staticmethod]
    fn tiny() -> Self {
        Self { inner: model::ModelConfig::tiny() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: model::ModelConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn with_ablation(&self, ablation: &str) -> PyResult<Self> {
        Ok(Self { inner: self.inner.clone().with_ablation(ablation.parse().map_err(err)?) })
    }

    #[getter]
    fn n_channels(&self) -> usize {
        self.inner.n_channels
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes
    }

    #[getter]
    fn ablation(&self) -> &'static str {
        self.inner.ablation.name()
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelConfig(n_channels={}, n_samples={}, n_classes={}, ablation='{}')",
            self.inner.n_channels,
            self.inner.n_samples,
            self.inner.n_classes,
            self.inner.ablation
        )
    }
}

/// Labelled EEG trials `[trials, channels, samples]` stored as float32.
#[pyclass(name = "TrialSet", module = "stmamba", from_py_object)]
#[derive(Clone)]
struct PyTrialSet {
    inner: EEGTrialSet,
}

#[pymethods]
impl PyTrialSet {
    #[new]
    #[pyo3(signature = (trials, labels, n_classes, sampling_rate_hz = 250.0, channel_names = None, session_ids = None))]
    fn new(
        trials: PyTensor,
        labels: Vec<usize>,
        n_classes: usize,
        sampling_rate_hz: f64,
        channel_names: Option<Vec<String>>,
        session_ids: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let t = trials.inner.cast::<f32>();
        if t.rank() != 3 {
            return Err(PyValueError::new_err(format!("trials must be [trials, channels, samples], got {:?}", t.shape())));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let names = channel_names.unwrap_or_else(|| (0..c).map(|i| format!("ch{i}")).collect());
        let sessions = session_ids.unwrap_or_else(|| vec!["S1".into(); n]);
        let inner = EEGTrialSet::new(t, labels, n_classes, sampling_rate_hz, names, sessions).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self { inner: data::read_archive(path).map_err(err)? })
    }

    #[staticmethod]
    fn from_csv(dir: &str) -> PyResult<Self> {
        Ok(Self { inner: data::import_csv(dir).map_err(err)? })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        data::write_archive(&self.inner, path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_channels(&self) -> usize {
        self.inner.n_channels()
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn session_ids(&self) -> Vec<String> {
        self.inner.session_ids.clone()
    }

    #[getter]
    fn channel_names(&self) -> Vec<String> {
        self.inner.channel_names.clone()
    }

    fn trials(&self) -> PyTensor {
        PyTensor { inner: self.inner.trials.cast::<f64>() }
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(PyValueError::new_err(format!("index {i} out of range for {} trials", self.inner.len())));
        }
        Ok(Self { inner: self.inner.subset(&indices) })
    }

    fn crop(&self, length: usize) -> PyResult<Self> {
        Ok(Self { inner: self.inner.crop(length).map_err(err)? })
    }

    /// Segment-recombination augmentation: real trials followed by
    /// `multiplier` artificial trials per real trial.
    #[pyo3(signature = (multiplier = 1, n_segments = 8, seed = 0))]
    fn augment(&self, multiplier: usize, n_segments: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: data::augment_recombine(&self.inner, n_segments, multiplier, seed).map_err(err)? })
    }

    /// Standardizes this set and `others` with the statistics of this set.
    fn standardize(&self, others: Vec<PyTrialSet>) -> PyResult<(Self, Vec<Self>)> {
        let refs: Vec<&EEGTrialSet> = others.iter().map(|o| &o.inner).collect();
        let (train, rest, _) = data::standardize(&self.inner, &refs).map_err(err)?;
        Ok((Self { inner: train }, rest.into_iter().map(|inner| Self { inner }).collect()))
    }

    fn __repr__(&self) -> String {
        format!(
            "TrialSet({} trials, {} channels x {} samples, {} classes)",
            self.inner.len(),
            self.inner.n_channels(),
            self.inner.n_samples(),
            self.inner.n_classes
        )
    }
}

#[pyclass(name = "STMambaNet", module = "stmamba")]
struct PyModel {
    inner: model::STMambaNet<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: PyModelConfig, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: model::STMambaNet::new(config.inner, seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: model::load_checkpoint(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        model::save_checkpoint(&self.inner, path).map_err(err)
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig { inner: self.inner.cfg.clone() }
    }

    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    /// Inference-mode logits `[batch, classes]` for `x: [batch, channels, samples]`.
    fn logits(&mut self, x: PyTensor) -> PyResult<PyTensor> {
        let out = self.inner.logits(&x.inner.cast::<f32>()).map_err(err)?;
        Ok(PyTensor { inner: out.values.cast::<f64>() })
    }

    fn predict(&mut self, x: PyTensor) -> PyResult<Vec<usize>> {
        self.inner.predict(&x.inner.cast::<f32>()).map_err(err)
    }

    /// Accuracy, per-class accuracy, confusion matrix and loss as a dict.
    #[pyo3(signature = (set, batch_size = 64))]
    fn evaluate<'py>(&mut self, py: Python<'py>, set: &PyTrialSet, batch_size: usize) -> PyResult<Bound<'py, PyAny>> {
        let metrics = training::evaluate(&mut self.inner, &set.inner, batch_size).map_err(err)?;
        to_py(py, &metrics)
    }

    /// Trains in place and keeps the best validation snapshot. Returns a
    /// dict with the epoch history, best epoch and stop reason.
    #[pyo3(signature = (train, val, epochs = 100, patience = None, lr = 9e-4, batch_size = 64, augment = 1, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn fit<'py>(
        &mut self,
        py: Python<'py>,
        train: &PyTrialSet,
        val: &PyTrialSet,
        epochs: usize,
        patience: Option<usize>,
        lr: f64,
        batch_size: usize,
        augment: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = TrainConfig {
            lr,
            max_epochs: epochs,
            patience: patience.unwrap_or(epochs.min(TrainConfig::default().patience)),
            batch_size,
            augment_multiplier: augment,
            seed,
            ..Default::default()
        };
        let out = training::train_loop(self.inner.clone(), &train.inner, &val.inner, &cfg, |_| {}).map_err(err)?;
        self.inner = out.model;
        let summary = serde_json::json!({
            "history": out.history,
            "best_epoch": out.best_epoch,
            "best_val_acc": out.best_val_acc,
            "best_val_loss": out.best_val_loss,
            "stop": out.stop,
        });
        to_py(py, &summary)
    }

    fn __repr__(&self) -> String {
        format!("STMambaNet({} parameters, ablation='{}')", self.inner.num_parameters(), self.inner.cfg.ablation)
    }
}

/// Synthetic motor-imagery trials with a class-specific mu rhythm.
#[pyfunction]
#[pyo3(signature = (n_per_class, n_classes, n_channels, n_samples, snr_db = 10.0, seed = 0, session = "synth"))]
fn synth(
    n_per_class: usize,
    n_classes: usize,
    n_channels: usize,
    n_samples: usize,
    snr_db: f64,
    seed: u64,
    session: &str,
) -> PyResult<PyTrialSet> {
    let cfg = SynthConfig { session: session.into(), ..SynthConfig::new(n_per_class, n_classes, n_channels, n_samples, snr_db, seed) };
    Ok(PyTrialSet { inner: data::synth_generate(&cfg).map_err(err)? })
}

/// Selective SSM `y = scan(exp(delta A), delta B, C) x + D x` on `x: [B, D, L]`.
/// Sequential when `chunk` is None, chunked associative scan otherwise.
#[pyfunction]
#[pyo3(signature = (x, delta, a, b, c, d, chunk = None))]
fn selective_scan(
    x: &PyTensor,
    delta: &PyTensor,
    a: &PyTensor,
    b: &PyTensor,
    c: &PyTensor,
    d: &PyTensor,
    chunk: Option<usize>,
) -> PyResult<PyTensor> {
    let p = SsmParams {
        a: a.inner.clone(),
        delta: delta.inner.clone(),
        bsel: b.inner.clone(),
        csel: c.inner.clone(),
        dskip: d.inner.clone(),
    };
    p.validate().map_err(err)?;
    let mode = chunk.map_or(ScanMode::Sequential, |chunk| ScanMode::Parallel { chunk });
    Ok(PyTensor { inner: p.apply(&x.inner, mode).map_err(err)? })
}

/// Same system evaluated as a causal convolution. Raises ValueError when the
/// parameters vary over batch or time.
#[pyfunction]
fn lti_convolution(x: &PyTensor, delta: &PyTensor, a: &PyTensor, b: &PyTensor, c: &PyTensor, d: &PyTensor) -> PyResult<PyTensor> {
    let p = SsmParams {
        a: a.inner.clone(),
        delta: delta.inner.clone(),
        bsel: b.inner.clone(),
        csel: c.inner.clone(),
        dskip: d.inner.clone(),
    };
    p.validate().map_err(err)?;
    let (abar, bbar) = p.discretize().map_err(err)?;
    let len = x.inner.shape().get(2).copied().unwrap_or(0);
    let kernel = ssm_kernel_lti(&abar, &bbar, &p.csel, len).map_err(err)?;
    Ok(PyTensor { inner: lti_convolve(&x.inner, &kernel, &p.dskip).map_err(err)? })
}

/// Sliding-window mean (`kind="avg"`) or population variance (`kind="var"`)
/// along the last axis of a `[B, C, H, W]` tensor.
#[pyfunction]
fn sliding_pool(x: &PyTensor, kind: &str, window: usize, stride: usize) -> PyResult<PyTensor> {
    let kind = match kind {
        "avg" => PoolKind::Avg,
        "var" => PoolKind::Var,
        other => return Err(PyValueError::new_err(format!("unknown pool kind {other:?}"))),
    };
    Ok(PyTensor { inner: pool_op(&x.inner, kind, window, stride).map_err(err)? })
}

/// Runs the built-in correctness checks; returns one dict per check.
#[pyfunction]
fn selftest(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &stmamba::selftest::run(None))
}

#[pymodule]
#[pyo3(name = "stmamba")]
pub fn stmamba_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyTrialSet>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(selective_scan, m)?)?;
    m.add_function(wrap_pyfunction!(lti_convolution, m)?)?;
    m.add_function(wrap_pyfunction!(sliding_pool, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
