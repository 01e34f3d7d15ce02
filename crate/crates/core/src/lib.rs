//! Subject-independent human activity recognition from wearable sensors.
//!
//! Implements the TASKED training scheme: a sensor-axis attention feature
//! extractor trained adversarially against a subject discriminator,
//! regularized by multi-kernel MMD across subject domains and by teacher-free
//! self-knowledge distillation, evaluated under leave-one-subject-out
//! protocols.
//!
//! Module map:
//! - [`graph`]: reverse-mode autodiff tape the networks and losses run on
//! - [`data`]: ingest, preprocessing, windowing, synthetic data, LOSO splits
//! - [`model`]: feature extractor, activity classifier, subject discriminator
//! - [`losses`]: classification / distillation / domain / MMD objectives
//! - [`training`]: two-step optimization schedule with early stopping
//! - [`eval`]: metrics, LOSO sweeps, aggregation, subject probes

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod model;
pub mod training;

pub use error::{Error, Result};
