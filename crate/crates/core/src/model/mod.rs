//! The three networks: sensor-stem + spatial-attention feature extractor,
//! activity classifier, and subject discriminator.

pub mod forward;
pub mod layers;
pub mod params;

pub use forward::{
    classify_activity, discriminate_subject, embed_mean_vectors, embedding_vectors,
    extract_features, predict_activities, teacher_logits, AttentionRecord, ExtractOutput,
    ForwardOpts,
};
pub use params::{Bound, BnUpdates, ModelParams, Net, TensorKind};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Train/eval switch; eval disables dropout and drop-connect and uses
/// running batch-norm statistics, making forwards deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture hyperparameters. Channel widths follow the fixed stack
/// 32 -> 64 -> 128 -> 256 with time halved by each block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Output channels of each per-sensor stem convolution.
    pub stem_channels: usize,
    /// Attention heads per block; head dimension is `c_in / heads`.
    pub heads: usize,
    /// Temporal convolution kernel (stride is fixed at 2).
    pub temporal_kernel: usize,
    pub attention_dropout: f64,
    pub feature_dropout: f64,
    pub drop_connect: f64,
    pub discriminator_dropout: f64,
    pub positional_encoding: bool,
    pub leaky_slope: f64,
    /// Record per-block attention matrices during forward (test support).
    pub collect_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stem_channels: 32,
            heads: 4,
            temporal_kernel: 5,
            attention_dropout: 0.0,
            feature_dropout: 0.1,
            drop_connect: 0.1,
            discriminator_dropout: 0.1,
            positional_encoding: true,
            leaky_slope: 0.01,
            collect_attention: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 || self.stem_channels % self.heads != 0 {
            return Err(Error::InvalidConfig(
                "stem_channels must be positive and divisible by heads".into(),
            ));
        }
        for (name, rate) in [
            ("attention_dropout", self.attention_dropout),
            ("feature_dropout", self.feature_dropout),
            ("drop_connect", self.drop_connect),
            ("discriminator_dropout", self.discriminator_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.temporal_kernel == 0 || self.temporal_kernel % 2 == 0 {
            return Err(Error::InvalidConfig("temporal_kernel must be odd".into()));
        }
        Ok(())
    }
}

/// Problem dimensions a parameter set is built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Window length; must be divisible by 8 and at least 64 so the
    /// discriminator's three stride-2 convolutions stay valid.
    pub window: usize,
    /// `(sensor name, channel count)` in channel-axis order.
    pub sensors: Vec<(String, usize)>,
    pub n_activities: usize,
    /// Discriminator output classes (source subjects plus target slots).
    pub n_domains: usize,
}

impl ModelDims {
    pub fn from_dataset(ds: &crate::data::WindowedDataset, n_domains: usize) -> Self {
        ModelDims {
            window: ds.window_size(),
            sensors: ds
                .sensor_grouping
                .iter()
                .map(|(n, r)| (n.clone(), r.len()))
                .collect(),
            n_activities: ds.n_activities,
            n_domains,
        }
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn n_channels(&self) -> usize {
        self.sensors.iter().map(|(_, c)| c).sum()
    }

    /// Embedding time length, `window / 8`.
    pub fn embed_time(&self) -> usize {
        self.window / 8
    }

    pub fn validate(&self) -> Result<()> {
        if self.window % 8 != 0 {
            return Err(Error::BadWindow {
                window: self.window,
                reason: "three stride-2 attention blocks need window divisible by 8".into(),
            });
        }
        if self.embed_time() < 8 {
            return Err(Error::BadWindow {
                window: self.window,
                reason: "discriminator needs window/8 >= 8 for its stride-2 convolutions".into(),
            });
        }
        if self.sensors.is_empty() || self.sensors.iter().any(|(_, c)| *c == 0) {
            return Err(Error::InvalidConfig("model needs nonempty sensor groups".into()));
        }
        if self.n_activities == 0 || self.n_domains < 2 {
            return Err(Error::InvalidConfig(
                "need at least one activity and two domain classes".into(),
            ));
        }
        Ok(())
    }
}

/// Time length after a k-kernel, stride-2, pad k/2 convolution.
pub(crate) fn conv_out_len(t: usize, kernel: usize) -> usize {
    (t + 2 * (kernel / 2) - kernel) / 2 + 1
}

/// The discriminator's three internal time lengths.
pub fn discriminator_time_chain(window: usize) -> [usize; 3] {
    let t0 = window / 8;
    let t1 = conv_out_len(t0, 5);
    let t2 = conv_out_len(t1, 5);
    let t3 = conv_out_len(t2, 5);
    [t1, t2, t3]
}
