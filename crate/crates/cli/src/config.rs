//! Experiment configuration: a single strict TOML file. Unknown keys are
//! rejected so a typo in a hyperparameter name fails the run instead of
//! silently training with defaults.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use tasked_core::data::{NormalizationMode, SyntheticConfig};
use tasked_core::model::ModelConfig;
use tasked_core::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Prepare,
    Train,
    Loso,
    CrossDataset,
    Report,
}

/// One delimited-text dataset read through a named adapter.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilesDataset {
    pub adapter: String,
    /// `(subject id, path)` pairs; a subject may contribute several files.
    pub files: Vec<(usize, PathBuf)>,
    #[serde(default)]
    pub window_size: Option<usize>,
    #[serde(default)]
    pub step: Option<usize>,
    #[serde(default)]
    pub normalization: Option<NormalizationMode>,
    #[serde(default)]
    pub target_rate: Option<f64>,
    /// JSON file of per-channel min/max bounds, overriding the built-in
    /// defaults for min/max normalization.
    #[serde(default)]
    pub minmax_bounds_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Deterministic generated data.
    Synthetic(SyntheticSection),
    /// Raw dataset files through an adapter.
    Files(FilesDataset),
    /// A previously prepared container (path stem without extension).
    Container { path: PathBuf },
}

/// Synthetic generator parameters; the seed comes from the root seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_subjects: usize,
    pub n_activities: usize,
    pub sensors: Vec<usize>,
    pub window_size: usize,
    pub windows_per_subject_per_activity: usize,
    pub subject_effect: f64,
    pub noise_std: f64,
}

impl SyntheticSection {
    pub fn with_seed(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_subjects: self.n_subjects,
            n_activities: self.n_activities,
            sensors: self.sensors.clone(),
            window_size: self.window_size,
            windows_per_subject_per_activity: self.windows_per_subject_per_activity,
            subject_effect: self.subject_effect,
            noise_std: self.noise_std,
            seed,
        }
    }
}

/// Shared-vocabulary choice for cross-dataset merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergedVocabulary {
    Four,
    Thirteen,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossDatasetConfig {
    pub vocabulary: MergedVocabulary,
    pub sources: Vec<FilesDataset>,
    /// Window length at 50 Hz (default 100).
    #[serde(default = "default_cross_window")]
    pub window_size: usize,
    /// Sliding step (default 16).
    #[serde(default = "default_cross_step")]
    pub step: usize,
}

fn default_cross_window() -> usize {
    100
}

fn default_cross_step() -> usize {
    16
}

/// Which fold `mode = "train"` runs.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FoldSelection {
    pub test_subject: usize,
    pub variant: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub out_dir: PathBuf,
    /// Root seed; data generation, initialization, dropout, and shuffling
    /// all derive from it.
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub cross_dataset: Option<CrossDatasetConfig>,
    #[serde(default)]
    pub fold: FoldSelection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Emit SVG box plots alongside the report tables.
    #[serde(default = "default_plots")]
    pub plots: bool,
}

fn default_workers() -> usize {
    1
}

fn default_plots() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_value(value: toml::Value) -> Result<Self, toml::de::Error> {
        ExperimentConfig::deserialize(value)
    }

    /// Derived seeds so each consumer gets an independent stream.
    pub fn data_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1)
    }

    pub fn train_seed(&self) -> u64 {
        self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(2)
    }
}
