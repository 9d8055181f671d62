//! Baseline classifier: a fixed downsample featurizer feeding a three-layer
//! fully connected head trained with cross-entropy.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::softmax::SoftmaxError;

pub mod features;
pub mod model;
pub mod persist;
pub mod train;

pub use features::{featurize, featurize_with, FeatureMode, FEATURE_DIM};
pub use model::{forward, loss_and_grad, Dropout, HeadModel, InputNorm};
pub use persist::{load_model, save_model, SavedModel};
pub use train::{featurize_split, lr_at, predict_batch, predict_split, train, EpochStats, LabeledFeatures};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("label index {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("training diverged at step {step}: loss or parameters became non-finite")]
    Divergence { step: u64 },
    #[error("invalid head configuration: {0}")]
    Config(String),
    #[error("split {0} is empty")]
    EmptySplit(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to read image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("invalid model file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Softmax(#[from] SoftmaxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    pub decay_steps: u64,
    pub decay_rate: f64,
    /// `rate^floor(step / steps)` when set, `rate^(step / steps)` otherwise.
    pub staircase: bool,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            decay_steps: 100,
            decay_rate: 0.96,
            staircase: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub nodes_per_layer: usize,
    /// Per-layer widths; overrides `nodes_per_layer` when present.
    pub layer_widths: Option<[usize; model::HIDDEN_LAYERS]>,
    /// Taken from the manifest when absent.
    pub num_classes: Option<usize>,
    pub learning_rate: f64,
    pub decay: Option<DecayConfig>,
    pub dropout: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub init_seed: u64,
    pub features: FeatureMode,
    /// Standardize each feature with the train split's mean and deviation.
    pub standardize: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self::preset(HeadPreset::Vgg16)
    }
}

/// Hyperparameter rows used with the three reference backbones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadPreset {
    Vgg16,
    Vgg19,
    Resnet101,
}

impl std::str::FromStr for HeadPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "vgg16" | "vgg-16" => Ok(Self::Vgg16),
            "vgg19" | "vgg-19" => Ok(Self::Vgg19),
            "resnet101" | "resnet-101" => Ok(Self::Resnet101),
            other => Err(format!("unknown preset {other:?} (vgg16, vgg19, resnet101)")),
        }
    }
}

impl HeadConfig {
    pub fn preset(p: HeadPreset) -> Self {
        let (nodes, lr, decay, dropout, optimizer) = match p {
            HeadPreset::Vgg16 => (512, 1e-3, Some(DecayConfig::default()), 0.4, Optimizer::Adam),
            HeadPreset::Vgg19 => (512, 1e-3, Some(DecayConfig::default()), 0.5, Optimizer::Sgd),
            HeadPreset::Resnet101 => (1024, 1e-2, None, 0.5, Optimizer::Adam),
        };
        Self {
            nodes_per_layer: nodes,
            layer_widths: None,
            num_classes: None,
            learning_rate: lr,
            decay,
            dropout,
            batch_size: 32,
            optimizer,
            epochs: 30,
            init_seed: 0,
            features: FeatureMode::Grid,
            standardize: true,
        }
    }

    pub fn widths(&self) -> [usize; model::HIDDEN_LAYERS] {
        self.layer_widths
            .unwrap_or([self.nodes_per_layer; model::HIDDEN_LAYERS])
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::Config(m.into()));
        if self.widths().contains(&0) {
            return bad("layer widths must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if let Some(d) = &self.decay {
            if !(d.decay_rate > 0.0 && d.decay_rate <= 1.0) {
                return bad("decay_rate must lie in (0, 1]");
            }
            if d.decay_steps == 0 {
                return bad("decay_steps must be positive");
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.num_classes == Some(0) {
            return bad("num_classes must be positive");
        }
        Ok(())
    }
}
