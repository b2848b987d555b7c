//! Python module `signtune`: prompts, parameter sets, the adaptive factor,
//! synthetic data, training and per-region evaluation.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError};
use pyo3::prelude::*;
use signtune_core::data::{split_by_region, Dataset, SyntheticSpec};
use signtune_core::eval::{evaluate_split, RunInfo};
use signtune_core::model::{EncoderConfig, ReferenceEncoders};
use signtune_core::prompts::{generate_prompt_set, PromptSet, ScenarioPools, Taxonomy};
use signtune_core::schedule::{self, AdaptiveFactorConfig};
use signtune_core::training::{self, classifier_for, Strategy, TrainConfig, TrainData};
use signtune_core::weights::{self, load_checkpoint, save_checkpoint, Checkpoint, ParameterSet, Tensor};
use signtune_core::{Error, ErrorKind};

create_exception!(signtune, SigntuneError, PyException);

fn to_py(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Io => PyOSError::new_err(e.to_string()),
        _ => SigntuneError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for signtune_core::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

#[pyclass(name = "PromptSet", module = "signtune")]
struct PyPromptSet {
    inner: PromptSet,
}

#[pymethods]
impl PyPromptSet {
    /// Generates prompts for the shipped taxonomy, optionally truncated to
    /// its first `n_classes` entries.
    #[staticmethod]
    #[pyo3(signature = (n_per_class=8, mode="combined", seed=0, n_classes=None))]
    fn generate(n_per_class: usize, mode: &str, seed: u64, n_classes: Option<usize>) -> PyResult<Self> {
        let mut taxonomy = Taxonomy::default_signs();
        if let Some(n) = n_classes {
            taxonomy = taxonomy.truncated(n).or_py()?;
        }
        let mode = mode.parse().or_py()?;
        let inner = generate_prompt_set(&taxonomy, &ScenarioPools::default_english(), n_per_class, mode, seed).or_py()?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PromptSet::load(path).or_py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).or_py()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[pyo3(signature = (class_id=None))]
    fn texts(&self, class_id: Option<usize>) -> Vec<String> {
        let templates = match class_id {
            Some(c) => self.inner.for_class(c),
            None => self.inner.templates(),
        };
        templates.iter().map(|t| t.text.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "ParameterSet", module = "signtune")]
struct PyParameterSet {
    inner: ParameterSet,
}

#[pymethods]
impl PyParameterSet {
    /// `entries` maps each name to `(shape, flat_values)`.
    #[new]
    fn new(entries: BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> PyResult<Self> {
        let tensors = entries
            .into_iter()
            .map(|(name, (shape, data))| Tensor::new(shape, data).map(|t| (name, t)))
            .collect::<signtune_core::Result<Vec<_>>>()
            .or_py()?;
        Ok(Self {
            inner: ParameterSet::from_entries(tensors).or_py()?,
        })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: weights::read_archive(path).or_py()?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        weights::write_archive(path, &self.inner).or_py()
    }

    fn names(&self) -> Vec<String> {
        self.inner.names().map(str::to_owned).collect()
    }

    fn get(&self, name: &str) -> Option<(Vec<usize>, Vec<f32>)> {
        self.inner.get(name).map(|t| (t.shape().to_vec(), t.data().to_vec()))
    }

    #[getter]
    fn numel(&self) -> usize {
        self.inner.numel()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

#[pyclass(name = "Checkpoint", module = "signtune")]
struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(dir).or_py()?,
        })
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        save_checkpoint(&self.inner, dir).or_py()
    }

    #[getter]
    fn params(&self) -> PyParameterSet {
        PyParameterSet {
            inner: self.inner.params.clone(),
        }
    }

    #[getter]
    fn strategy(&self) -> String {
        self.inner.meta.strategy.clone()
    }

    #[getter]
    fn epoch(&self) -> u32 {
        self.inner.meta.epoch
    }

    #[getter]
    fn beta_history(&self) -> Vec<f64> {
        self.inner.meta.beta_history.clone()
    }

    #[getter]
    fn train_losses(&self) -> Vec<f64> {
        self.inner.meta.train_losses.clone()
    }
}

#[pyclass(name = "Dataset", module = "signtune")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Rendered classes whose style shifts from region to region.
    #[staticmethod]
    #[pyo3(signature = (seed=0, n_classes=6, n_regions=3, per_class_region=50, shift=0.4))]
    fn synthetic(seed: u64, n_classes: usize, n_regions: usize, per_class_region: usize, shift: f64) -> PyResult<Self> {
        let spec = SyntheticSpec {
            n_classes,
            n_regions,
            samples_per_class_region: per_class_region,
            style_shift_strength: shift,
            seed,
        };
        Ok(Self {
            inner: spec.generate().or_py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (dir, side=32))]
    fn load(dir: &str, side: u32) -> PyResult<Self> {
        Ok(Self {
            inner: Dataset::load(dir, side).or_py()?,
        })
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        self.inner.save(dir).or_py()
    }

    fn regions(&self) -> Vec<String> {
        self.inner.manifest.regions().into_iter().collect()
    }

    fn digest(&self) -> String {
        self.inner.manifest.digest()
    }

    fn __len__(&self) -> usize {
        self.inner.manifest.len()
    }
}

/// Returns `(raw, clamped)`.
#[pyfunction]
#[pyo3(signature = (epoch, total_epochs, train_loss, zero_shot_loss, gamma=5.0, clamp_lo=0.0, clamp_hi=1.0))]
fn adaptive_factor(
    epoch: u32,
    total_epochs: u32,
    train_loss: f64,
    zero_shot_loss: f64,
    gamma: f64,
    clamp_lo: f64,
    clamp_hi: f64,
) -> PyResult<(f64, f64)> {
    let cfg = AdaptiveFactorConfig::new(gamma, total_epochs)
        .and_then(|c| c.with_clamp(clamp_lo, clamp_hi))
        .or_py()?;
    let f = schedule::adaptive_factor(epoch, &cfg, train_loss, zero_shot_loss).or_py()?;
    Ok((f.beta_raw, f.beta))
}

/// `w * anchor + (1 - w) * moving`.
#[pyfunction]
fn interpolate(anchor: &PyParameterSet, moving: &PyParameterSet, w: f64) -> PyResult<PyParameterSet> {
    Ok(PyParameterSet {
        inner: weights::interpolate(&anchor.inner, &moving.inner, w).or_py()?,
    })
}

#[pyfunction]
fn squared_distance(a: &PyParameterSet, b: &PyParameterSet) -> PyResult<f64> {
    weights::squared_distance(&a.inner, &b.inner).or_py()
}

fn encoders_for(prompts: &PromptSet, init_seed: u64) -> signtune_core::Result<ReferenceEncoders> {
    let cfg = EncoderConfig {
        n_classes: prompts.n_classes(),
        ..EncoderConfig::default()
    };
    ReferenceEncoders::init(&cfg, init_seed)
}

/// The untrained encoders with a prompt-derived head.
#[pyfunction]
#[pyo3(signature = (prompts, init_seed=0))]
fn zero_shot(prompts: &PyPromptSet, init_seed: u64) -> PyResult<PyCheckpoint> {
    let encoders = encoders_for(&prompts.inner, init_seed).or_py()?;
    let cfg = TrainConfig::default().with_strategy(Strategy::ZeroShot);
    let outcome = training::train_zero_shot(&encoders, &prompts.inner, &cfg).or_py()?;
    Ok(PyCheckpoint {
        inner: outcome.checkpoint,
    })
}

/// Fine-tunes on `train_regions` with the desk-scale settings unless
/// `published` is set. Unset arguments keep the profile's values.
#[pyfunction]
#[pyo3(signature = (
    dataset, train_regions, prompts, strategy="adwe", epochs=None, gamma=None, learning_rate=None,
    seed=0, init_seed=0, val_fraction=0.2, published=false
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    train_regions: Vec<String>,
    prompts: &PyPromptSet,
    strategy: &str,
    epochs: Option<u32>,
    gamma: Option<f64>,
    learning_rate: Option<f64>,
    seed: u64,
    init_seed: u64,
    val_fraction: f64,
    published: bool,
) -> PyResult<PyCheckpoint> {
    let base = if published {
        TrainConfig::default()
    } else {
        TrainConfig::desk_scale()
    };
    let mut cfg = base.with_strategy(strategy.parse().or_py()?);
    cfg.seed = seed;
    if let Some(e) = epochs {
        cfg.epochs = e;
        cfg.factor.total_epochs = e;
    }
    cfg.factor.gamma = gamma.unwrap_or(cfg.factor.gamma);
    cfg.learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
    let dataset = &dataset.inner;
    let prompts = &prompts.inner;
    let ckpt = py
        .detach(|| -> signtune_core::Result<Checkpoint> {
            let regions: Vec<&str> = train_regions.iter().map(String::as_str).collect();
            let split = split_by_region(&dataset.manifest, &regions)?;
            let (train, val) = dataset.samples(&split.train)?.holdout(val_fraction)?;
            let encoders = encoders_for(prompts, init_seed)?;
            let data = TrainData {
                train: &train,
                val: &val,
                prompts,
            };
            Ok(training::train(&encoders, data, &cfg)?.checkpoint)
        })
        .or_py()?;
    Ok(PyCheckpoint { inner: ckpt })
}

/// Top-1 accuracy on every region outside `train_regions`; returns
/// `(per_region, average)`.
#[pyfunction]
fn evaluate(
    checkpoint: &PyCheckpoint,
    dataset: &PyDataset,
    train_regions: Vec<String>,
    prompts: &PyPromptSet,
) -> PyResult<(BTreeMap<String, f64>, f64)> {
    let regions: Vec<&str> = train_regions.iter().map(String::as_str).collect();
    let split = split_by_region(&dataset.inner.manifest, &regions).or_py()?;
    let classifier = classifier_for(&checkpoint.inner, &prompts.inner).or_py()?;
    let run = RunInfo {
        strategy: checkpoint.inner.meta.strategy.clone(),
        seed: checkpoint.inner.meta.seed,
        checkpoint_digest: checkpoint.inner.params.digest(),
    };
    let report = evaluate_split(&classifier, &dataset.inner, &split, run).or_py()?;
    Ok((report.per_region, report.average))
}

#[pymodule]
fn signtune(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SigntuneError", m.py().get_type::<SigntuneError>())?;
    m.add_class::<PyPromptSet>()?;
    m.add_class::<PyParameterSet>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(adaptive_factor, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(squared_distance, m)?)?;
    m.add_function(wrap_pyfunction!(zero_shot, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
