//! End-to-end experiment plumbing shared by the CLI and tests: preprocessing,
//! windowing, training, evaluation and the saved model artifact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{window_dataset, Dataset, Preprocessor, Windowed, WindowedSample, DEFAULT_K};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalScores};
use crate::models::{Model, ModelConfig, ModelVariant};
use crate::rnn_cells::{CellConfig, CellKind};
use crate::time_embedding::TimeEmbedConfig;
use crate::training::{predict_all, train, TrainConfig, TrainHistory};

pub const MODEL_FORMAT: &str = "tarnn-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Input visits per window.
    pub m: usize,
    /// Visits ahead of the window whose label is predicted.
    pub n: usize,
    pub variant: ModelVariant,
    pub cell: CellKind,
    pub hidden_size: usize,
    pub d_model: usize,
    pub mlp_hidden: usize,
    pub dropout_rate: f64,
    /// Defaults to the largest gap in the training split.
    pub et_max: Option<f64>,
    pub exclude_features: Vec<String>,
    pub knn_k: usize,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            m: 3,
            n: 1,
            variant: ModelVariant::TaRnn,
            cell: CellKind::Gru,
            hidden_size: 16,
            d_model: 8,
            mlp_hidden: 16,
            dropout_rate: 0.0,
            et_max: None,
            exclude_features: vec!["age".into()],
            knn_k: DEFAULT_K,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// A horizon beyond the next visit always uses the decoder form.
    pub fn effective_variant(&self) -> ModelVariant {
        if self.n > 1 {
            self.variant.with_autoencoder(true)
        } else {
            self.variant
        }
    }

    pub fn model_config(&self, n_features: usize, demographic_size: usize) -> Result<ModelConfig> {
        let variant = self.effective_variant();
        let cfg = ModelConfig {
            variant,
            cell: CellConfig::new(self.cell, self.d_model, self.hidden_size)?,
            n_features,
            d_model: self.d_model,
            mlp_hidden: self.mlp_hidden,
            demographic_size,
            horizon: variant.is_autoencoder().then_some(self.n),
            dropout_rate: self.dropout_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything needed to score new raw data with a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub model: Model,
    pub scenario: (usize, usize),
    /// Dataset feature names the model was trained on, before exclusion.
    pub dataset_features: Vec<String>,
    pub excluded_features: Vec<String>,
    pub feature_names: Vec<String>,
    pub demographic_names: Vec<String>,
    pub preprocessor: Preprocessor,
    pub train: TrainConfig,
}

impl ModelArtifact {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|source| Error::Json {
            context: "serializing model artifact".into(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("malformed model artifact: {e}")))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
            return Err(Error::Data("not a tarnn model artifact".into()));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(u64::from(MODEL_VERSION)) {
            return Err(Error::Data(format!(
                "unsupported model artifact version {version:?}, expected {MODEL_VERSION}"
            )));
        }
        let art: ModelArtifact = serde_json::from_value(value)
            .map_err(|e| Error::Data(format!("malformed model artifact: {e}")))?;
        // Re-run construction checks on the decoded parameters.
        Model::new(art.model.config.clone(), art.model.time, art.model.unit, art.model.params.clone())?;
        Ok(art)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Preprocesses and windows raw data the same way as at training time.
    pub fn prepare(&self, ds: &Dataset) -> Result<Windowed> {
        if ds.header.unit != self.model.unit {
            return Err(Error::Data(format!(
                "dataset elapsed times are in {}, model was trained on {}",
                ds.header.unit, self.model.unit
            )));
        }
        if ds.header.feature_names != self.dataset_features {
            return Err(Error::Data(format!(
                "dataset features {:?} differ from training features {:?}",
                ds.header.feature_names, self.dataset_features
            )));
        }
        let processed = self.preprocessor.apply(ds)?;
        let (m, n) = self.scenario;
        window_dataset(&processed, m, n, &self.excluded_features)
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub artifact: ModelArtifact,
    pub history: TrainHistory,
    /// Training patients too short for the window.
    pub skipped: usize,
    pub samples: usize,
}

/// Fits preprocessing on `train_ds`, windows it and trains one model.
pub fn fit_experiment(train_ds: &Dataset, cfg: &ExperimentConfig) -> Result<TrainedRun> {
    let (pre, processed) = Preprocessor::fit(train_ds, cfg.knn_k)?;
    let windowed = window_dataset(&processed, cfg.m, cfg.n, &cfg.exclude_features)?;
    if windowed.samples.is_empty() || windowed.samples.len() < cfg.train.batch_size {
        return Err(Error::Data(format!(
            "only {} patients have the {} visits scenario {}->{} needs, fewer than the batch size {}",
            windowed.samples.len(),
            cfg.m + cfg.n,
            cfg.m,
            cfg.n,
            cfg.train.batch_size
        )));
    }
    let model_cfg = cfg.model_config(windowed.feature_names.len(), train_ds.header.demographic_names.len())?;
    let et_max = match cfg.et_max {
        Some(e) => e,
        None => {
            let observed = train_ds.max_elapsed();
            if observed > 0.0 {
                observed
            } else {
                1.0
            }
        }
    };
    let time = TimeEmbedConfig::new(cfg.d_model, et_max)?;
    let (model, history) = train(model_cfg, time, train_ds.header.unit, &windowed.samples, &cfg.train, None)?;
    Ok(TrainedRun {
        artifact: ModelArtifact {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model,
            scenario: (cfg.m, cfg.n),
            dataset_features: train_ds.header.feature_names.clone(),
            excluded_features: cfg.exclude_features.clone(),
            feature_names: windowed.feature_names,
            demographic_names: train_ds.header.demographic_names.clone(),
            preprocessor: pre,
            train: cfg.train.clone(),
        },
        history,
        skipped: windowed.skipped,
        samples: windowed.samples.len(),
    })
}

/// Predictions on raw data, in sample order.
#[derive(Debug, Clone)]
pub struct Scored {
    pub samples: Vec<WindowedSample>,
    pub predictions: Vec<f64>,
}

impl Scored {
    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn scores(&self, threshold: f64) -> Result<EvalScores> {
        evaluate(&self.predictions, &self.labels(), threshold)
    }
}

pub fn score(artifact: &ModelArtifact, ds: &Dataset) -> Result<Scored> {
    let windowed = artifact.prepare(ds)?;
    if windowed.samples.is_empty() {
        return Err(Error::Data(format!(
            "no patient has the {} visits the model's scenario needs",
            artifact.scenario.0 + artifact.scenario.1
        )));
    }
    let predictions = predict_all(&artifact.model, &windowed.samples)?;
    Ok(Scored {
        samples: windowed.samples,
        predictions,
    })
}
