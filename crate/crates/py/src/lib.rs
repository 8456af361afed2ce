//! Python bindings: datasets, the model with its two training phases,
//! evaluation and the metric helpers.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use erpcl::contrastive::{batch_loss, LossConfig, SubjectEmbeddings};
use erpcl::data::{self, Label, Paradigm, SpellerLayout, SynthConfig};
use erpcl::eval::{self, EvalOptions};
use erpcl::model::{Checkpoint, Group, ModelConfig, ModelParams};
use erpcl::training::{self, History, TrainPlan};

const ALL_GROUPS: [Group; 4] = [Group::Encoder, Group::Projector, Group::ProjectorState, Group::Classifier];

fn err(e: erpcl::Error) -> PyErr {
    match erpcl::cli::exit_code(&e) {
        1 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn labels_from(v: &[u8]) -> PyResult<Vec<Label>> {
    v.iter()
        .map(|&x| Label::from_u8(x).ok_or_else(|| PyValueError::new_err(format!("label {x} is not 0 or 1"))))
        .collect()
}

/// Labelled multi-subject epochs.
#[pyclass(module = "erpcl_py")]
pub struct Dataset {
    inner: data::Dataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: data::load_erpd(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        data::save_erpd(&self.inner, path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
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
    fn sample_rate(&self) -> f32 {
        self.inner.sample_rate
    }

    #[getter]
    fn channel_names(&self) -> Vec<String> {
        self.inner.channel_names.clone()
    }

    fn subject_ids(&self) -> Vec<u32> {
        self.inner.subject_ids()
    }

    fn labels(&self) -> Vec<u8> {
        self.inner.trials.iter().map(|t| t.label as u8).collect()
    }

    fn subjects(&self) -> Vec<u32> {
        self.inner.trials.iter().map(|t| t.subject_id).collect()
    }

    fn stimulus_codes(&self) -> Vec<u32> {
        self.inner.trials.iter().map(|t| t.stimulus_code).collect()
    }

    /// Channel-major samples of trial `i`.
    fn trial(&self, i: usize) -> PyResult<Vec<f32>> {
        self.inner
            .trials
            .get(i)
            .map(|t| t.data.clone())
            .ok_or_else(|| PyValueError::new_err(format!("trial {i} out of range")))
    }

    fn subset(&self, subjects: Vec<u32>) -> Self {
        Self {
            inner: self.inner.subset(&subjects),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(trials={}, subjects={}, channels={}, samples={})",
            self.inner.len(),
            self.inner.subject_ids().len(),
            self.inner.n_channels,
            self.inner.n_samples
        )
    }
}

/// Generates a synthetic dataset; `oddball` switches from the 6×6 speller
/// to an oddball paradigm with that target ratio.
#[pyfunction]
#[pyo3(signature = (subjects=10, trials=None, seed=0, amplitude_scale=1.0, noise=None, oddball=None))]
fn synth(
    subjects: usize,
    trials: Option<usize>,
    seed: u64,
    amplitude_scale: f64,
    noise: Option<(f64, f64)>,
    oddball: Option<f64>,
) -> PyResult<Dataset> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        n_subjects: subjects,
        trials_per_subject: trials.unwrap_or(d.trials_per_subject),
        paradigm: oddball.map_or(d.paradigm, |r| Paradigm::Oddball { target_ratio: r }),
        amplitude_scale,
        noise_uv: noise.unwrap_or(d.noise_uv),
        seed,
        ..d
    };
    Ok(Dataset {
        inner: data::synth_generate(&cfg).map_err(err)?,
    })
}

fn history_rows(h: &History) -> Vec<(usize, f64, f64)> {
    h.records.iter().map(|r| (r.epoch, r.train_loss, r.val_metric)).collect()
}

fn plan(base: TrainPlan, epochs: usize, patience: usize, lr: Option<f64>, seed: u64) -> TrainPlan {
    TrainPlan {
        max_epochs: epochs,
        patience,
        lr: lr.unwrap_or(base.lr),
        seed,
        ..base
    }
}

/// Encoder, projector and classifier with the default architecture.
#[pyclass(module = "erpcl_py")]
pub struct Model {
    params: ModelParams<f32>,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (seed=0))]
    fn new(seed: u64) -> PyResult<Self> {
        Ok(Self {
            params: ModelParams::init(&ModelConfig::default(), seed).map_err(err)?,
        })
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.params.config.embedding_dim()
    }

    /// Contrastive pretraining; returns `(epoch, train_loss, val_loss)` rows.
    #[pyo3(signature = (train, val=None, epochs=100, patience=30, lr=None, temperature=0.5, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn pretrain(
        &mut self,
        py: Python<'_>,
        train: &Dataset,
        val: Option<&Dataset>,
        epochs: usize,
        patience: usize,
        lr: Option<f64>,
        temperature: f64,
        seed: u64,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let loss = LossConfig::new(temperature).map_err(err)?;
        let plan = plan(TrainPlan::pretrain(), epochs, patience, lr, seed);
        let params = &mut self.params;
        let h = py
            .detach(|| training::pretrain_contrastive(params, &train.inner, val.map(|v| &v.inner), &loss, &plan))
            .map_err(err)?;
        Ok(history_rows(&h))
    }

    /// Classifier training on the frozen encoder; returns `(epoch, train_loss, val_auc)` rows.
    #[pyo3(signature = (train, val=None, epochs=100, patience=30, lr=None, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train_classifier(
        &mut self,
        py: Python<'_>,
        train: &Dataset,
        val: Option<&Dataset>,
        epochs: usize,
        patience: usize,
        lr: Option<f64>,
        seed: u64,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let plan = plan(TrainPlan::classifier(), epochs, patience, lr, seed);
        let params = &mut self.params;
        let h = py
            .detach(|| training::train_classifier(params, &train.inner, val.map(|v| &v.inner), &plan))
            .map_err(err)?;
        Ok(history_rows(&h))
    }

    /// Single-trial logits.
    fn predict(&self, py: Python<'_>, dataset: &Dataset) -> PyResult<Vec<f64>> {
        py.detach(|| eval::predict_logits(&self.params, &dataset.inner)).map_err(err)
    }

    /// Projector embedding of one channel-major trial (eval mode).
    fn embed(&self, trial: Vec<f32>) -> PyResult<Vec<f64>> {
        self.params.embed(&trial).map_err(err)
    }

    /// Per-subject AUC and speller accuracy on a test set.
    #[pyo3(signature = (dataset, repetitions=1))]
    fn evaluate<'py>(&self, py: Python<'py>, dataset: &Dataset, repetitions: usize) -> PyResult<Bound<'py, PyDict>> {
        let opts = EvalOptions {
            layout: SpellerLayout::DEFAULT,
            repetitions,
        };
        let r = py.detach(|| eval::evaluate(&self.params, &dataset.inner, &opts)).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("auc_mean", r.mean_auc)?;
        d.set_item("auc_std", r.std_auc)?;
        d.set_item("speller_accuracy", r.speller_accuracy)?;
        d.set_item("n_trials", r.n_trials)?;
        d.set_item("n_selections", r.n_selections)?;
        d.set_item("fingerprint", r.fingerprint.clone())?;
        let subjects: Vec<(u32, f64, Option<f64>)> =
            r.subjects.iter().map(|s| (s.subject_id, s.auc, s.speller_acc)).collect();
        d.set_item("subjects", subjects)?;
        Ok(d)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.params.to_checkpoint(&ALL_GROUPS).save(path).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let mut params = ModelParams::init(&ModelConfig::default(), 0).map_err(err)?;
        params
            .apply_checkpoint(&Checkpoint::load(path).map_err(err)?, &[Group::Encoder, Group::Classifier])
            .map_err(err)?;
        Ok(Self { params })
    }
}

/// Mann–Whitney AUC with ties counted as one half.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    eval::auc(&scores, &labels_from(&labels)?).map_err(err)
}

/// Decodes `(row, col)` from `(stimulus_code, score)` flashes.
#[pyfunction]
#[pyo3(signature = (flashes, rows=6, cols=6))]
fn speller_decode(flashes: Vec<(u32, f64)>, rows: usize, cols: usize) -> PyResult<(usize, usize)> {
    eval::speller_decode(&flashes, SpellerLayout { rows, cols }).map_err(err)
}

/// Pair NT-Xent loss; each subject's embeddings come with 0/1 labels.
#[pyfunction]
#[pyo3(signature = (a, a_labels, b, b_labels, temperature=0.5))]
fn contrastive_loss(a: Vec<Vec<f64>>, a_labels: Vec<u8>, b: Vec<Vec<f64>>, b_labels: Vec<u8>, temperature: f64) -> PyResult<f64> {
    let pack = |v: Vec<Vec<f64>>, l: &[u8]| -> PyResult<SubjectEmbeddings<f64>> {
        if v.len() != l.len() {
            return Err(PyValueError::new_err("embeddings and labels differ in length"));
        }
        Ok(SubjectEmbeddings {
            samples: v.into_iter().zip(labels_from(l)?).collect(),
        })
    };
    batch_loss(&pack(a, &a_labels)?, &pack(b, &b_labels)?, temperature).map_err(err)
}

/// Runs the finite-difference suite; returns `(name, max_rel_error, passed)`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(py: Python<'_>, seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let checks = py.detach(|| erpcl::verify::gradcheck_suite(seed)).map_err(err)?;
    Ok(checks.into_iter().map(|c| {
        let ok = c.passed();
        (c.name, c.max_rel_error, ok)
    }).collect())
}

#[pymodule]
fn erpcl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(speller_decode, m)?)?;
    m.add_function(wrap_pyfunction!(contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
