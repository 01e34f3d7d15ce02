//! Data ingest: recordings, preprocessing, windowing, synthetic generation,
//! LOSO splits, dataset adapters, and the on-disk exchange format.

pub mod adapters;
pub mod container;
pub mod preprocess;
pub mod splits;
pub mod synthetic;
pub mod window;

pub use preprocess::{interpolate_missing, normalize, resample, NormWarning};
pub use splits::{loso_fold_specs, loso_splits, FoldSpec, Split};
pub use synthetic::make_synthetic;
pub use window::{harmonize_cross_dataset, slide_windows, HarmonizeInput, HarmonizeOptions};

use crate::error::{Error, Result};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// Activity label index. Timesteps outside the active vocabulary carry
/// [`DROP_LABEL`] and windows dominated by them are discarded.
pub type Label = usize;
pub const DROP_LABEL: Label = usize::MAX;

/// One named sensor stream: a `channels x time` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    pub name: String,
    pub data: Array2<f64>,
}

/// A continuous multi-stream recording of one subject, with per-timestep
/// activity labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorRecording {
    pub subject_id: usize,
    pub streams: Vec<SensorStream>,
    pub sample_rate: f64,
    pub labels: Vec<Label>,
}

impl SensorRecording {
    pub fn time_len(&self) -> usize {
        self.streams.first().map_or(0, |s| s.data.ncols())
    }

    pub fn channel_count(&self) -> usize {
        self.streams.iter().map(|s| s.data.nrows()).sum()
    }

    pub fn validate(&self, n_activities: usize) -> Result<()> {
        if self.sample_rate <= 0.0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        let t = self.time_len();
        for s in &self.streams {
            if s.data.ncols() != t {
                return Err(Error::shape(
                    format!("stream '{}'", s.name),
                    format!("time length {t}"),
                    format!("{}", s.data.ncols()),
                ));
            }
        }
        if self.labels.len() != t {
            return Err(Error::shape("labels", format!("{t}"), format!("{}", self.labels.len())));
        }
        if let Some(&bad) = self
            .labels
            .iter()
            .find(|&&l| l != DROP_LABEL && l >= n_activities)
        {
            return Err(Error::LabelOutOfRange {
                label: bad as i64,
                n_classes: n_activities,
            });
        }
        Ok(())
    }
}

/// How channel values are normalized before windowing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    MinmaxPerChannel,
    ZscorePerUser,
    ZscoreGlobal,
}

/// Preprocessing and windowing parameters for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    /// Per-stream channel index lists; `None` keeps all channels.
    #[serde(default)]
    pub channel_selection: Option<Vec<Vec<usize>>>,
    pub window_size: usize,
    pub step: usize,
    pub normalization: NormalizationMode,
    #[serde(default)]
    pub target_rate: Option<f64>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::InvalidConfig("window_size must be positive".into()));
        }
        if self.step == 0 || self.step > self.window_size {
            return Err(Error::InvalidConfig(format!(
                "step must satisfy 0 < step <= window_size, got step={} window={}",
                self.step, self.window_size
            )));
        }
        if let Some(rate) = self.target_rate {
            if rate <= 0.0 {
                return Err(Error::InvalidConfig("target_rate must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Fixed-length windows with activity and subject labels, partitioned into
/// named sensor groups along the channel axis.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    /// `n x n_c x n_w`.
    pub windows: Array3<f64>,
    pub activity_labels: Vec<Label>,
    pub subject_labels: Vec<usize>,
    /// `(sensor name, channel range)` partition of the channel axis.
    pub sensor_grouping: Vec<(String, std::ops::Range<usize>)>,
    pub n_activities: usize,
    /// Merged-dataset provenance: subject id -> (dataset name, original id).
    pub subject_origin: Option<Vec<(String, usize)>>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn window_size(&self) -> usize {
        self.windows.shape()[2]
    }

    /// Number of distinct subjects; labels are contiguous `0..K`.
    pub fn n_subjects(&self) -> usize {
        self.subject_labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.activity_labels.len() != n || self.subject_labels.len() != n {
            return Err(Error::shape(
                "windowed dataset labels",
                format!("{n}"),
                format!("{} / {}", self.activity_labels.len(), self.subject_labels.len()),
            ));
        }
        let mut covered = 0usize;
        for (name, range) in &self.sensor_grouping {
            if range.start != covered {
                return Err(Error::Dataset(format!(
                    "sensor group '{name}' does not tile the channel axis"
                )));
            }
            covered = range.end;
        }
        if covered != self.n_channels() {
            return Err(Error::Dataset("sensor grouping does not cover all channels".into()));
        }
        if let Some(&bad) = self.activity_labels.iter().find(|&&l| l >= self.n_activities) {
            return Err(Error::LabelOutOfRange {
                label: bad as i64,
                n_classes: self.n_activities,
            });
        }
        // Subject ids must be contiguous from zero.
        let k = self.n_subjects();
        let mut seen = vec![false; k];
        for &s in &self.subject_labels {
            seen[s] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::Dataset("subject ids are not contiguous".into()));
        }
        Ok(())
    }

    /// Row indices belonging to `subject`.
    pub fn indices_of_subject(&self, subject: usize) -> Vec<usize> {
        self.subject_labels
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == subject).then_some(i))
            .collect()
    }

    /// New dataset containing the given window rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> WindowedDataset {
        let (c, w) = (self.n_channels(), self.window_size());
        let mut windows = Array3::zeros((indices.len(), c, w));
        for (row, &i) in indices.iter().enumerate() {
            windows
                .index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.windows.index_axis(ndarray::Axis(0), i));
        }
        WindowedDataset {
            windows,
            activity_labels: indices.iter().map(|&i| self.activity_labels[i]).collect(),
            subject_labels: indices.iter().map(|&i| self.subject_labels[i]).collect(),
            sensor_grouping: self.sensor_grouping.clone(),
            n_activities: self.n_activities,
            subject_origin: self.subject_origin.clone(),
        }
    }
}

/// Configuration of the deterministic synthetic multi-subject generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_subjects: usize,
    pub n_activities: usize,
    /// Channel count per sensor stream.
    pub sensors: Vec<usize>,
    pub window_size: usize,
    pub windows_per_subject_per_activity: usize,
    /// Amplitude of the per-subject channel gain and offset perturbation.
    pub subject_effect: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0
            || self.n_activities == 0
            || self.sensors.is_empty()
            || self.sensors.iter().any(|&c| c == 0)
            || self.window_size == 0
            || self.windows_per_subject_per_activity == 0
        {
            return Err(Error::InvalidConfig("synthetic config counts must be positive".into()));
        }
        if self.subject_effect < 0.0 || self.noise_std < 0.0 {
            return Err(Error::InvalidConfig(
                "subject_effect and noise_std must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}
