//! Freshly trained linear probes over embedding vectors, used to measure how
//! much subject information survives in the feature space.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Multinomial logistic regression trained by full-batch gradient descent on
/// standardized features.
pub struct LogisticProbe {
    weights: Array2<f64>,
    bias: Array1<f64>,
    mean: Array1<f64>,
    std: Array1<f64>,
}

impl LogisticProbe {
    /// Fit with a fixed iteration budget; deterministic (zero init).
    pub fn fit(features: &Array2<f64>, labels: &[usize], n_classes: usize, iters: usize, lr: f64) -> Result<Self> {
        let (n, d) = (features.nrows(), features.ncols());
        if labels.len() != n || n == 0 {
            return Err(Error::Dataset("probe: features/labels mismatch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad as i64,
                n_classes,
            });
        }
        let mean = features.mean_axis(Axis(0)).expect("nonempty");
        let mut std = features.std_axis(Axis(0), 0.0);
        std.mapv_inplace(|v| if v > 1e-12 { v } else { 1.0 });
        let x = standardize(features, &mean, &std);
        let mut onehot = Array2::<f64>::zeros((n, n_classes));
        for (i, &l) in labels.iter().enumerate() {
            onehot[[i, l]] = 1.0;
        }
        let mut weights = Array2::<f64>::zeros((n_classes, d));
        let mut bias = Array1::<f64>::zeros(n_classes);
        for _ in 0..iters {
            let probs = forward(&x, &weights, &bias);
            let diff = &probs - &onehot; // (n, k)
            let grad_w = diff.t().dot(&x).mapv(|v| v / n as f64); // (k, d)
            let grad_b = diff.sum_axis(Axis(0)).mapv(|v| v / n as f64);
            weights.zip_mut_with(&grad_w, |w, &g| *w -= lr * g);
            bias.zip_mut_with(&grad_b, |b, &g| *b -= lr * g);
        }
        Ok(LogisticProbe {
            weights,
            bias,
            mean,
            std,
        })
    }

    pub fn predict(&self, features: &Array2<f64>) -> Vec<usize> {
        let x = standardize(features, &self.mean, &self.std);
        let probs = forward(&x, &self.weights, &self.bias);
        probs
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect()
    }

    pub fn accuracy(&self, features: &Array2<f64>, labels: &[usize]) -> f64 {
        let preds = self.predict(features);
        let hits = preds.iter().zip(labels).filter(|&(p, l)| p == l).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

fn standardize(x: &Array2<f64>, mean: &Array1<f64>, std: &Array1<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        row.zip_mut_with(mean, |v, &m| *v -= m);
        row.zip_mut_with(std, |v, &s| *v /= s);
    }
    out
}

fn forward(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut z = x.dot(&w.t());
    for mut row in z.rows_mut() {
        row += b;
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    z
}

/// Deterministic stratified 80/20 split of row indices.
pub fn probe_split(labels: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        let cut = (idx.len() * 4).div_ceil(5).max(1).min(idx.len());
        train.extend_from_slice(&idx[..cut]);
        holdout.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    (train, holdout)
}

/// Accuracy of a freshly trained subject probe on a held-out fifth of the
/// given embeddings.
pub fn subject_probe_accuracy(
    features: &Array2<f64>,
    subjects: &[usize],
    n_subjects: usize,
    seed: u64,
) -> Result<f64> {
    let (train_idx, holdout_idx) = probe_split(subjects, seed);
    if holdout_idx.is_empty() {
        return Err(Error::Dataset("probe holdout is empty".into()));
    }
    let take = |idx: &[usize]| -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((idx.len(), features.ncols()));
        let mut y = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&features.row(i));
            y.push(subjects[i]);
        }
        (x, y)
    };
    let (xt, yt) = take(&train_idx);
    let (xh, yh) = take(&holdout_idx);
    let probe = LogisticProbe::fit(&xt, &yt, n_subjects, 400, 0.5)?;
    Ok(probe.accuracy(&xh, &yh))
}
