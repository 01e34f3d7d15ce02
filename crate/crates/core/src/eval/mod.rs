//! Metrics, LOSO sweeps, subject probes, and result aggregation.

pub mod loso;
pub mod metrics;
pub mod probe;
pub mod report;

pub use loso::{run_cross_dataset, run_fold, run_loso, SweepOptions, SweepReport};
pub use metrics::{ConfusionMatrix, FoldResult, Metrics};
pub use probe::{probe_split, subject_probe_accuracy, LogisticProbe};
pub use report::{aggregate_from, Aggregate};
