//! Python bindings: datasets, acoustic models, the four adaptation methods
//! and the evaluation metrics, mirroring the `asa` CLI surface.

use std::path::PathBuf;
use std::str::FromStr;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use asa_core::adapt::{self, AdaptConfig, Method, SiTrainConfig, Supervision};
use asa_core::datagen::{self, CorpusConfig, FrameDataset};
use asa_core::harness::{self, ProbeConfig};
use asa_core::losses::{self, LabelSeq};
use asa_core::models;
use asa_core::Tensor2D;

fn to_py_err(e: asa_core::Error) -> PyErr {
    match e {
        asa_core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        asa_core::Error::TrainingDiverged(msg) => {
            PyRuntimeError::new_err(format!("training diverged: {msg}"))
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn tensor_from_rows(rows: Vec<Vec<f64>>) -> PyResult<Tensor2D> {
    Tensor2D::from_rows(&rows).map_err(to_py_err)
}

fn tensor_to_rows(t: &Tensor2D) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Feature frames with aligned senone labels for one speaker.
#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: FrameDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<u32>,
        speaker_id: String,
        num_senones: usize,
    ) -> PyResult<Self> {
        let inner = FrameDataset::new(
            tensor_from_rows(features)?,
            LabelSeq::new(labels),
            speaker_id,
            num_senones,
        )
        .map_err(to_py_err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: datagen::load_dataset(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        datagen::save_dataset(&self.inner, &path).map_err(to_py_err)
    }

    /// First `n` frames as a new dataset.
    fn prefix(&self, n: usize) -> PyResult<Self> {
        Ok(PyDataset {
            inner: self.inner.prefix(n).map_err(to_py_err)?,
        })
    }

    fn features(&self) -> Vec<Vec<f64>> {
        tensor_to_rows(&self.inner.features)
    }

    fn labels(&self) -> Vec<u32> {
        self.inner.labels.as_slice().to_vec()
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn num_senones(&self) -> usize {
        self.inner.num_senones
    }

    #[getter]
    fn speaker_id(&self) -> String {
        self.inner.speaker_id.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(speaker='{}', frames={}, dim={}, senones={})",
            self.inner.speaker_id,
            self.inner.len(),
            self.inner.feature_dim(),
            self.inner.num_senones
        )
    }
}

/// A feature extractor plus senone classifier, split at `n_h` hidden layers.
#[pyclass(name = "AcousticModel", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: models::AcousticModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: datagen::load_acoustic_model(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        datagen::save_checkpoint(&self.inner.clone().into(), &path).map_err(to_py_err)
    }

    /// Senone posterior rows for a batch of frames.
    fn classify(&self, frames: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let batch = tensor_from_rows(frames)?;
        let post = models::classify_senones(&self.inner, &batch).map_err(to_py_err)?;
        Ok(tensor_to_rows(&post))
    }

    /// Deep feature rows at the split point.
    fn extract(&self, frames: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let batch = tensor_from_rows(frames)?;
        let feats = models::extract_features(&self.inner, &batch).map_err(to_py_err)?;
        Ok(tensor_to_rows(&feats))
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn num_senones(&self) -> usize {
        self.inner.num_senones()
    }

    #[getter]
    fn n_h(&self) -> usize {
        self.inner.split_index()
    }

    #[getter]
    fn role(&self) -> &'static str {
        match self.inner.role() {
            models::ModelRole::Si => "si",
            models::ModelRole::Sd => "sd",
        }
    }

    /// Bit-exact parameter checksum; equal checksums mean equal parameters.
    fn checksum(&self) -> u64 {
        self.inner.checksum()
    }

    fn __repr__(&self) -> String {
        format!(
            "AcousticModel(role='{}', r_x={}, r_f={}, senones={}, n_h={})",
            self.role(),
            self.inner.input_dim(),
            self.inner.feature_dim(),
            self.inner.num_senones(),
            self.inner.split_index()
        )
    }
}

/// Binary SD/SI discriminator.
#[pyclass(name = "Discriminator", skip_from_py_object)]
#[derive(Clone)]
struct PyDiscriminator {
    inner: models::Discriminator,
}

#[pymethods]
impl PyDiscriminator {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDiscriminator {
            inner: datagen::load_discriminator(&path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        datagen::save_checkpoint(&self.inner.clone().into(), &path).map_err(to_py_err)
    }

    /// Posterior probability per row that the input came from the SD model.
    fn discriminate(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let batch = tensor_from_rows(inputs)?;
        models::discriminate(&self.inner, &batch).map_err(to_py_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
}

/// Generates the default synthetic corpus. Returns
/// `(si_speakers, {size: adaptation_set}, test_set)`.
#[pyfunction]
#[pyo3(signature = (
    seed = 7,
    feature_dim = 20,
    num_senones = 10,
    num_si_speakers = 8,
    frames_per_speaker = 2000,
    adapt_sizes = vec![50, 100, 200, 400],
    test_frames = 2000,
    target_shift = 3.0,
    target_rotation = 0.3,
))]
#[allow(clippy::too_many_arguments)]
fn synthetic_corpus(
    seed: u64,
    feature_dim: usize,
    num_senones: usize,
    num_si_speakers: usize,
    frames_per_speaker: usize,
    adapt_sizes: Vec<usize>,
    test_frames: usize,
    target_shift: f64,
    target_rotation: f64,
) -> PyResult<(Vec<PyDataset>, std::collections::BTreeMap<usize, PyDataset>, PyDataset)> {
    let cfg = CorpusConfig {
        feature_dim,
        num_senones,
        num_si_speakers,
        frames_per_si_speaker: frames_per_speaker,
        adapt_sizes: adapt_sizes.clone(),
        test_frames,
        target_shift_norm: target_shift,
        target_rotation,
        seed,
        ..CorpusConfig::default()
    };
    let corpus = datagen::default_corpus(&cfg).map_err(to_py_err)?;
    let mut adapt_map = std::collections::BTreeMap::new();
    for &size in &adapt_sizes {
        adapt_map.insert(
            size,
            PyDataset {
                inner: corpus.adapt_set(size).map_err(to_py_err)?,
            },
        );
    }
    Ok((
        corpus
            .si_speakers
            .into_iter()
            .map(|inner| PyDataset { inner })
            .collect(),
        adapt_map,
        PyDataset { inner: corpus.test },
    ))
}

/// Trains the frozen SI reference on pooled speaker datasets.
#[pyfunction]
#[pyo3(signature = (
    datasets,
    hidden = vec![32, 32, 32, 6],
    n_h = 4,
    epochs = 30,
    mu = 0.05,
    batch_size = 128,
    seed = 7,
))]
fn train_si(
    datasets: Vec<PyDataset>,
    hidden: Vec<usize>,
    n_h: usize,
    epochs: usize,
    mu: f64,
    batch_size: usize,
    seed: u64,
) -> PyResult<PyModel> {
    let parts: Vec<FrameDataset> = datasets.into_iter().map(|d| d.inner).collect();
    let pooled = FrameDataset::concat(&parts).map_err(to_py_err)?;
    let cfg = SiTrainConfig {
        hidden,
        n_h,
        epochs,
        mu,
        batch_size,
        seed,
    };
    let (model, _) = adapt::train_si(&pooled, &cfg).map_err(to_py_err)?;
    Ok(PyModel { inner: model })
}

/// Adapts the SI model to one speaker's data. `method` is one of
/// `finetune`, `kld`, `asa`, `asa-sp`. Returns `(sd_model, discriminator,
/// trace)` where the discriminator is `None` for the non-adversarial
/// methods and the trace holds `(senone_loss, disc_loss, update_norm)` per
/// epoch.
#[pyfunction]
#[pyo3(name = "adapt", signature = (
    si,
    data,
    method,
    lambda_ = 1.0,
    rho = 0.5,
    mu = 0.02,
    epochs = 60,
    batch_size = 25,
    seed = 0,
    supervision = "supervised",
    disc_hidden = vec![64, 64],
))]
#[allow(clippy::too_many_arguments)]
fn adapt_py(
    si: &PyModel,
    data: &PyDataset,
    method: &str,
    lambda_: f64,
    rho: f64,
    mu: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    supervision: &str,
    disc_hidden: Vec<usize>,
) -> PyResult<(
    PyModel,
    Option<PyDiscriminator>,
    Vec<(f64, Option<f64>, f64)>,
)> {
    let cfg = AdaptConfig {
        method: Method::from_str(method).map_err(to_py_err)?,
        lambda: lambda_,
        rho,
        mu,
        epochs,
        batch_size,
        seed,
        supervision: Supervision::from_str(supervision).map_err(to_py_err)?,
        n_h: si.inner.split_index(),
        disc_hidden,
    };
    let outcome = adapt::adapt(&si.inner, &data.inner, &cfg).map_err(to_py_err)?;
    Ok((
        PyModel {
            inner: outcome.model,
        },
        outcome
            .discriminator
            .map(|inner| PyDiscriminator { inner }),
        outcome
            .trace
            .epochs
            .iter()
            .map(|e| (e.senone_loss, e.disc_loss, e.update_norm))
            .collect(),
    ))
}

/// Frame-level decode by the SI model: argmax senone per frame.
#[pyfunction]
fn pseudo_label(si: &PyModel, frames: Vec<Vec<f64>>) -> PyResult<Vec<u32>> {
    let batch = tensor_from_rows(frames)?;
    let labels = adapt::pseudo_label(&si.inner, &batch).map_err(to_py_err)?;
    Ok(labels.as_slice().to_vec())
}

/// Fraction of test frames whose argmax senone differs from the label.
#[pyfunction]
fn frame_error_rate(model: &PyModel, test: &PyDataset) -> PyResult<f64> {
    harness::frame_error_rate(&model.inner, &test.inner).map_err(to_py_err)
}

/// Balanced accuracy of a fresh probe trained to separate the two feature
/// sets; near 0.5 means the distributions are indistinguishable to it.
#[pyfunction]
#[pyo3(signature = (f_sd, f_si, seed = 0, hidden = vec![32, 32], epochs = 200, mu = 0.1, batch_size = 64))]
fn discriminator_probe(
    f_sd: Vec<Vec<f64>>,
    f_si: Vec<Vec<f64>>,
    seed: u64,
    hidden: Vec<usize>,
    epochs: usize,
    mu: f64,
    batch_size: usize,
) -> PyResult<f64> {
    let cfg = ProbeConfig {
        hidden,
        epochs,
        mu,
        batch_size,
    };
    harness::discriminator_probe(&tensor_from_rows(f_sd)?, &tensor_from_rows(f_si)?, &cfg, seed)
        .map_err(to_py_err)
}

/// Unbiased squared maximum mean discrepancy with a Gaussian kernel.
#[pyfunction]
#[pyo3(signature = (f_a, f_b, bandwidth = 1.0))]
fn mmd(f_a: Vec<Vec<f64>>, f_b: Vec<Vec<f64>>, bandwidth: f64) -> PyResult<f64> {
    harness::mmd(&tensor_from_rows(f_a)?, &tensor_from_rows(f_b)?, bandwidth).map_err(to_py_err)
}

/// Kullback-Leibler divergence between two categorical distributions.
#[pyfunction]
fn kl_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    losses::kl_divergence(&p, &q).map_err(to_py_err)
}

#[pymodule]
fn asa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyDiscriminator>()?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(train_si, m)?)?;
    m.add_function(wrap_pyfunction!(adapt_py, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_label, m)?)?;
    m.add_function(wrap_pyfunction!(frame_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(discriminator_probe, m)?)?;
    m.add_function(wrap_pyfunction!(mmd, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    Ok(())
}
