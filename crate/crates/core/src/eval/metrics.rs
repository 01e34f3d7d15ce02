//! Confusion matrices and the three headline metrics: accuracy, weighted F1,
//! and macro F1.

use crate::data::FoldSpec;
use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Array2<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub f_w: f64,
    pub f_m: f64,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            counts: Array2::zeros((n_classes, n_classes)),
        }
    }

    pub fn from_counts(counts: Array2<u64>) -> Result<Self> {
        if counts.nrows() != counts.ncols() {
            return Err(Error::shape(
                "confusion matrix",
                "square",
                format!("{:?}", counts.shape()),
            ));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn from_pairs(n_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(n_classes);
        for (truth, pred) in pairs {
            cm.record(truth, pred)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        let n = self.n_classes();
        if truth >= n || pred >= n {
            return Err(Error::LabelOutOfRange {
                label: truth.max(pred) as i64,
                n_classes: n,
            });
        }
        self.counts[[truth, pred]] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.counts.nrows()
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.counts += &other.counts;
    }

    /// Accuracy (trace over total), support-weighted F1, and macro F1.
    /// Classes with `precision + recall = 0` contribute an F1 of 0.
    pub fn metrics(&self) -> Result<Metrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Dataset("empty confusion matrix".into()));
        }
        let n = self.n_classes();
        let mut trace = 0u64;
        let mut f_m = 0.0;
        let mut f_w = 0.0;
        for c in 0..n {
            let tp = self.counts[[c, c]];
            trace += tp;
            let row: u64 = self.counts.row(c).sum();
            let col: u64 = self.counts.column(c).sum();
            let precision = if col > 0 { tp as f64 / col as f64 } else { 0.0 };
            let recall = if row > 0 { tp as f64 / row as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            f_m += f1 / n as f64;
            f_w += (row as f64 / total as f64) * f1;
        }
        Ok(Metrics {
            acc: trace as f64 / total as f64,
            f_w,
            f_m,
        })
    }
}

impl Serialize for ConfusionMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<u64>> = self.counts.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ConfusionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<u64>> = Vec::deserialize(deserializer)?;
        let n = rows.len();
        let mut counts = Array2::zeros((n, n));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(serde::de::Error::custom("confusion matrix must be square"));
            }
            for (j, &v) in row.iter().enumerate() {
                counts[[i, j]] = v;
            }
        }
        Ok(ConfusionMatrix { counts })
    }
}

/// Result of one LOSO fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: FoldSpec,
    pub test_subjects: Vec<usize>,
    pub val_subjects: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// Validation metric of the selected checkpoint.
    pub best_val_macro_f1: f64,
}
