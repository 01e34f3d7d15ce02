//! Deterministic synthetic multi-subject activity data.
//!
//! Each activity has a characteristic signal family: a base frequency shared
//! by an activity pair plus a per-activity amplitude scale, so some classes
//! are separated by frequency and others only by amplitude. Each subject
//! applies a fixed per-channel gain and offset drawn from `subject_effect`,
//! which makes amplitude cues subject-confounded — the regime the
//! adversarial training is meant to fix.

use super::{SyntheticConfig, WindowedDataset};
use crate::error::Result;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;

fn stream_rng(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha20Rng {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [tag, a, b] {
        h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    }
    ChaCha20Rng::seed_from_u64(h)
}

/// Generate a windowed dataset directly from the config. Byte-identical for
/// identical configs; windows are emitted in `(subject, activity, window)`
/// order.
pub fn make_synthetic(cfg: &SyntheticConfig) -> Result<WindowedDataset> {
    cfg.validate()?;
    let n_c: usize = cfg.sensors.iter().sum();
    let w = cfg.window_size;
    let n = cfg.n_subjects * cfg.n_activities * cfg.windows_per_subject_per_activity;

    // Per-(activity, channel) signature: amplitude and phase.
    let mut amp = vec![vec![0.0; n_c]; cfg.n_activities];
    let mut phase = vec![vec![0.0; n_c]; cfg.n_activities];
    for a in 0..cfg.n_activities {
        let mut rng = stream_rng(cfg.seed, 1, a as u64, 0);
        // Activities pair up on a base frequency; the second of each pair
        // carries twice the amplitude.
        let scale = if a % 2 == 0 { 1.0 } else { 2.0 };
        for c in 0..n_c {
            amp[a][c] = scale * rng.gen_range(0.7..1.3);
            phase[a][c] = rng.gen_range(0.0..TAU);
        }
    }

    // Per-(subject, channel) gain and offset.
    let mut gain = vec![vec![1.0; n_c]; cfg.n_subjects];
    let mut offset = vec![vec![0.0; n_c]; cfg.n_subjects];
    for k in 0..cfg.n_subjects {
        let mut rng = stream_rng(cfg.seed, 2, k as u64, 0);
        for c in 0..n_c {
            gain[k][c] = 1.0 + cfg.subject_effect * rng.gen_range(-1.0..1.0);
            offset[k][c] = cfg.subject_effect * rng.gen_range(-1.0..1.0);
        }
    }

    let mut windows = Array3::<f64>::zeros((n, n_c, w));
    let mut activity_labels = Vec::with_capacity(n);
    let mut subject_labels = Vec::with_capacity(n);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut row = 0usize;
    for k in 0..cfg.n_subjects {
        for a in 0..cfg.n_activities {
            let freq = 1.0 + (a / 2) as f64;
            for wi in 0..cfg.windows_per_subject_per_activity {
                // Window jitter is keyed by (activity, window) only, so
                // subjects share window content when subject_effect is 0.
                let jitter = stream_rng(cfg.seed, 3, a as u64, wi as u64).gen_range(0.0..TAU);
                let mut noise_rng = stream_rng(cfg.seed, 4, (k * cfg.n_activities + a) as u64, wi as u64);
                for c in 0..n_c {
                    for t in 0..w {
                        let theta = TAU * freq * t as f64 / w as f64 + phase[a][c] + jitter;
                        let base = amp[a][c] * (theta.sin() + 0.35 * (2.0 * theta + phase[a][c]).sin());
                        let noise = if cfg.noise_std > 0.0 {
                            cfg.noise_std * normal.sample(&mut noise_rng)
                        } else {
                            0.0
                        };
                        windows[[row, c, t]] = gain[k][c] * base + offset[k][c] + noise;
                    }
                }
                activity_labels.push(a);
                subject_labels.push(k);
                row += 1;
            }
        }
    }

    let mut grouping = Vec::new();
    let mut ch = 0usize;
    for (i, &count) in cfg.sensors.iter().enumerate() {
        grouping.push((format!("imu{i}"), ch..ch + count));
        ch += count;
    }
    let ds = WindowedDataset {
        windows,
        activity_labels,
        subject_labels,
        sensor_grouping: grouping,
        n_activities: cfg.n_activities,
        subject_origin: None,
    };
    ds.validate()?;
    Ok(ds)
}
