//! The single JSON configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentationRanges;
use crate::classifier::HeadConfig;
use crate::extract::SegmentationConfig;
use crate::ingest::IngestConfig;
use crate::label::{ClassLabel, HeightBucket};
use crate::synth::SynthesisConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid {section} config: {reason}")]
    Invalid { section: &'static str, reason: String },
}

/// Footage of one class at one capture height: a directory of frames or a
/// video to decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub class_label: ClassLabel,
    pub height_m: HeightBucket,
    #[serde(default)]
    pub frames_dir: Option<PathBuf>,
    #[serde(default)]
    pub video: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Defaults to the master seed.
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Softmax files from external models, combined with the baseline's output.
    pub inputs: Vec<PathBuf>,
    /// One weight per member, baseline first; all 1 when absent.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub master_seed: u64,
    /// Parent of run directories.
    pub runs_dir: PathBuf,
    pub sources: Vec<SourceSpec>,
    pub ingest: IngestConfig,
    pub segmentation: SegmentationConfig,
    pub augmentation: AugmentationRanges,
    pub synthesis: SynthesisConfig,
    pub split: SplitConfig,
    pub training: HeadConfig,
    pub ensemble: EnsembleConfig,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            runs_dir: PathBuf::from("runs"),
            sources: Vec::new(),
            ingest: IngestConfig::default(),
            segmentation: SegmentationConfig::default(),
            augmentation: AugmentationRanges::default(),
            synthesis: SynthesisConfig::default(),
            split: SplitConfig::default(),
            training: HeadConfig::default(),
            ensemble: EnsembleConfig::default(),
        }
    }
}

impl GlobalConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.master_seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |section, reason: String| ConfigError::Invalid { section, reason };
        self.ingest.validate().map_err(|r| invalid("ingest", r))?;
        self.segmentation.validate().map_err(|r| invalid("segmentation", r))?;
        self.augmentation.validate().map_err(|r| invalid("augmentation", r))?;
        self.synthesis.validate().map_err(|r| invalid("synthesis", r))?;
        self.training
            .validate()
            .map_err(|e| invalid("training", e.to_string()))?;
        let f = self.split.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(invalid("split", format!("train_fraction must lie in (0, 1), got {f}")));
        }
        for s in &self.sources {
            match (&s.frames_dir, &s.video) {
                (Some(_), None) => {}
                (None, Some(_)) if self.ingest.decoder_cmd.is_some() => {}
                (None, Some(_)) => {
                    return Err(invalid("ingest", "video sources need ingest.decoder_cmd".into()));
                }
                _ => {
                    return Err(invalid(
                        "sources",
                        format!(
                            "{}@{}m: give exactly one of frames_dir or video",
                            s.class_label, s.height_m
                        ),
                    ))
                }
            }
        }
        if let Some(w) = &self.ensemble.weights {
            if w.len() != self.ensemble.inputs.len() + 1 {
                return Err(invalid(
                    "ensemble",
                    format!("{} weights for {} members", w.len(), self.ensemble.inputs.len() + 1),
                ));
            }
            if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(invalid("ensemble", "weights must be positive".into()));
            }
        }
        Ok(())
    }
}
