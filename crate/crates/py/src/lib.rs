//! Python bindings: dataset generation, training, scoring and attention
//! inspection, plus the scalar building blocks for quick checks.

use std::collections::HashMap;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use tarnn::data::{generate_synthetic, load_dataset, save_dataset, GeneratorConfig, Preset};
use tarnn::metrics::{self, DEFAULT_THRESHOLD};
use tarnn::pipeline::{fit_experiment, score, ExperimentConfig, ModelArtifact};
use tarnn::time_embedding::{self, TimeEmbedConfig, TimeUnit};
use tarnn::training;
use tarnn::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Sinusoidal embedding of one elapsed time.
#[pyfunction]
fn time_embed(elapsed: f64, d_model: usize, et_max: f64) -> PyResult<Vec<f64>> {
    let cfg = TimeEmbedConfig::new(d_model, et_max).map_err(to_py)?;
    time_embedding::time_embed(elapsed, &cfg).map_err(to_py)
}

/// Mean class-weighted binary cross-entropy.
#[pyfunction]
#[pyo3(signature = (labels, predictions, delta=0.7))]
fn weighted_bce(labels: Vec<u8>, predictions: Vec<f64>, delta: f64) -> PyResult<f64> {
    training::weighted_bce(&labels, &predictions, delta).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (scores, labels, beta=2.0, threshold=DEFAULT_THRESHOLD))]
fn f_beta(scores: Vec<f64>, labels: Vec<u8>, beta: f64, threshold: f64) -> PyResult<f64> {
    let counts = metrics::confusion(&scores, &labels, threshold).map_err(to_py)?;
    Ok(metrics::f_beta(&counts, beta))
}

#[pyfunction]
fn auc_roc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    metrics::auc_roc(&scores, &labels).map_err(to_py)
}

/// Writes a synthetic cohort to `path` and returns its summary card.
#[pyfunction]
#[pyo3(signature = (path, patients=500, seed=0, preset="separable", unit="years"))]
fn generate(path: &str, patients: usize, seed: u64, preset: &str, unit: &str) -> PyResult<HashMap<String, f64>> {
    let cfg = GeneratorConfig::preset(parse::<Preset>(preset)?, patients, parse::<TimeUnit>(unit)?);
    let (ds, card) = generate_synthetic(&cfg, seed).map_err(to_py)?;
    save_dataset(&ds, path).map_err(to_py)?;
    Ok(HashMap::from([
        ("patients".to_string(), card.patients as f64),
        ("visits".to_string(), card.visits as f64),
        ("converters".to_string(), card.converters as f64),
        ("mean_gap_years".to_string(), card.mean_gap_years),
    ]))
}

/// Stratified split of a dataset file into train and test files.
#[pyfunction]
#[pyo3(signature = (path, train_out, test_out, test_fraction=0.3, seed=0))]
fn split(path: &str, train_out: &str, test_out: &str, test_fraction: f64, seed: u64) -> PyResult<(usize, usize)> {
    let ds = load_dataset(path).map_err(to_py)?;
    let (train, test) = ds.split(test_fraction, seed).map_err(to_py)?;
    save_dataset(&train, train_out).map_err(to_py)?;
    save_dataset(&test, test_out).map_err(to_py)?;
    Ok((train.len(), test.len()))
}

/// Trains on a dataset file, saves the artifact and returns per-epoch losses.
#[pyfunction]
#[pyo3(signature = (data, out, variant="ta-rnn", cell="gru", m=3, n=1, epochs=50, batch_size=16,
                    learning_rate=0.001, delta=0.7, dropout=0.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train(
    data: &str,
    out: &str,
    variant: &str,
    cell: &str,
    m: usize,
    n: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    delta: f64,
    dropout: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let mut cfg = ExperimentConfig {
        m,
        n,
        variant: parse(variant)?,
        cell: parse(cell)?,
        dropout_rate: dropout,
        ..ExperimentConfig::default()
    };
    cfg.train.epochs = epochs;
    cfg.train.batch_size = batch_size;
    cfg.train.learning_rate = learning_rate;
    cfg.train.delta = delta;
    cfg.train.seed = seed;
    let ds = load_dataset(data).map_err(to_py)?;
    let run = fit_experiment(&ds, &cfg).map_err(to_py)?;
    run.artifact.save(out).map_err(to_py)?;
    Ok(run.history.losses())
}

/// Attention weights for one patient window.
#[pyclass(module = "tarnn_py", get_all)]
struct Explanation {
    patient_id: String,
    prediction: f64,
    alpha: Vec<f64>,
    beta: Vec<Vec<f64>>,
    combined: Vec<Vec<f64>>,
    feature_means: Vec<f64>,
}

/// A trained model artifact.
#[pyclass(module = "tarnn_py")]
struct Model {
    artifact: ModelArtifact,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Model {
            artifact: ModelArtifact::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.artifact.save(path).map_err(to_py)
    }

    #[getter]
    fn variant(&self) -> String {
        self.artifact.model.config.variant.to_string()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.artifact.feature_names.clone()
    }

    #[getter]
    fn scenario(&self) -> (usize, usize) {
        self.artifact.scenario
    }

    /// `(patient_ids, probabilities, labels)` for every long-enough patient.
    fn predict(&self, data: &str) -> PyResult<(Vec<String>, Vec<f64>, Vec<u8>)> {
        let ds = load_dataset(data).map_err(to_py)?;
        let scored = score(&self.artifact, &ds).map_err(to_py)?;
        let ids = scored.samples.iter().map(|s| s.patient_id.clone()).collect();
        let labels = scored.labels();
        Ok((ids, scored.predictions, labels))
    }

    /// F2, sensitivity and AUC (`None` when the labels hold one class).
    #[pyo3(signature = (data, threshold=DEFAULT_THRESHOLD))]
    fn evaluate(&self, data: &str, threshold: f64) -> PyResult<HashMap<String, Option<f64>>> {
        let ds = load_dataset(data).map_err(to_py)?;
        let s = score(&self.artifact, &ds)
            .and_then(|scored| scored.scores(threshold))
            .map_err(to_py)?;
        Ok(HashMap::from([
            ("f2".to_string(), Some(s.f2)),
            ("sensitivity".to_string(), Some(s.sensitivity)),
            ("auc".to_string(), s.auc),
        ]))
    }

    #[pyo3(signature = (data, limit=None))]
    fn explain(&self, data: &str, limit: Option<usize>) -> PyResult<Vec<Explanation>> {
        let ds = load_dataset(data).map_err(to_py)?;
        let scored = score(&self.artifact, &ds).map_err(to_py)?;
        let take = limit.unwrap_or(usize::MAX);
        scored
            .samples
            .iter()
            .zip(&scored.predictions)
            .take(take)
            .map(|(s, &prediction)| {
                let r = self.artifact.model.explain(s.inputs()).map_err(to_py)?;
                Ok(Explanation {
                    patient_id: s.patient_id.clone(),
                    prediction,
                    alpha: r.alpha,
                    beta: r.beta,
                    combined: r.combined,
                    feature_means: r.feature_means,
                })
            })
            .collect()
    }
}

#[pymodule]
fn tarnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(time_embed, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_bce, m)?)?;
    m.add_function(wrap_pyfunction!(f_beta, m)?)?;
    m.add_function(wrap_pyfunction!(auc_roc, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<Model>()?;
    m.add_class::<Explanation>()?;
    Ok(())
}
