//! Fold execution: train on the fold's split, evaluate the best checkpoint
//! on the held-out subject(s), sweep over all folds in parallel.

use super::metrics::{ConfusionMatrix, FoldResult};
use super::report::{aggregate_from, Aggregate};
use crate::data::splits::{cross_dataset_fold_specs, cross_dataset_split, split_for};
use crate::data::{loso_fold_specs, FoldSpec, Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{predict_activities, ModelConfig};
use crate::training::{train, EpochRecord, TrainConfig, TrainData};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Sweep-level options.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Parallel fold workers (1 = sequential).
    pub workers: usize,
    /// When set, per-fold logs and checkpoints land under
    /// `<out_dir>/folds/fold_<subject>_<variant>/`.
    pub out_dir: Option<PathBuf>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            workers: 1,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub folds: Vec<FoldResult>,
    pub failures: Vec<(FoldSpec, String)>,
    pub aggregate: Aggregate,
}

fn fold_seed(base: u64, fold: FoldSpec) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((fold.test_subject as u64) << 8)
        .wrapping_add(fold.variant as u64)
}

/// Train one fold and evaluate the returned checkpoint on its test windows.
pub fn run_fold(
    ds: &WindowedDataset,
    split: &Split,
    fold: FoldSpec,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    fold_dir: Option<&Path>,
) -> Result<FoldResult> {
    // Fold-local subject ids: train subjects first, then test subjects.
    let mut train_subjects: Vec<usize> = split
        .train
        .iter()
        .map(|&i| ds.subject_labels[i])
        .collect();
    train_subjects.sort_unstable();
    train_subjects.dedup();
    let mut mapping: BTreeMap<usize, usize> = train_subjects
        .iter()
        .enumerate()
        .map(|(local, &orig)| (orig, local))
        .collect();
    let n_train = mapping.len();
    for (t, &orig) in split.test_subjects.iter().enumerate() {
        mapping.insert(orig, n_train + t);
    }
    let n_domains = n_train + split.test_subjects.len();

    let remap = |mut part: WindowedDataset, strict: bool| -> WindowedDataset {
        for s in part.subject_labels.iter_mut() {
            *s = mapping.get(s).copied().unwrap_or_else(|| {
                debug_assert!(!strict, "unmapped subject in strict part");
                0
            });
        }
        part
    };
    let train_ds = remap(ds.select(&split.train), true);
    // Validation subject ids are never fed to the discriminator.
    let val_ds = remap(ds.select(&split.val), false);
    let test_ds = remap(ds.select(&split.test), true);

    let mut seeded = train_config.clone();
    seeded.seed = fold_seed(train_config.seed, fold);

    let mut log_file = match fold_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(std::io::BufWriter::new(std::fs::File::create(dir.join("train_log.jsonl"))?))
        }
        None => None,
    };
    let mut on_epoch = |rec: &EpochRecord| {
        if let Some(f) = log_file.as_mut() {
            if let Ok(line) = serde_json::to_string(rec) {
                let _ = writeln!(f, "{line}");
            }
        }
    };

    let data = TrainData {
        train: &train_ds,
        val: &val_ds,
        target: train_config.use_target_unlabeled.then_some(&test_ds),
    };
    let outcome = train(&data, model_config, &seeded, n_domains, Some(&mut on_epoch))?;
    drop(log_file);

    let preds = predict_activities(&outcome.params, &test_ds.windows, 256)?;
    let confusion = ConfusionMatrix::from_pairs(
        ds.n_activities,
        test_ds.activity_labels.iter().copied().zip(preds),
    )?;
    let metrics = confusion.metrics()?;
    if let Some(dir) = fold_dir {
        outcome.params.save(&dir.join("checkpoint.bin"))?;
        outcome.teacher.save(&dir.join("teacher.bin"))?;
    }
    Ok(FoldResult {
        fold,
        test_subjects: split.test_subjects.clone(),
        val_subjects: split.val_subjects.clone(),
        confusion,
        metrics,
        best_val_macro_f1: outcome.best_val_macro_f1,
    })
}

fn run_sweep(
    ds: &WindowedDataset,
    folds: Vec<FoldSpec>,
    split_fn: impl Fn(FoldSpec) -> Result<Split> + Sync,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    opts: &SweepOptions,
) -> Result<SweepReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<(FoldSpec, Result<FoldResult>)> = pool.install(|| {
        folds
            .par_iter()
            .map(|&fold| {
                let fold_dir = opts
                    .out_dir
                    .as_ref()
                    .map(|d| d.join("folds").join(format!("fold_{}_{}", fold.test_subject, fold.variant)));
                let run = || -> Result<FoldResult> {
                    let split = split_fn(fold)?;
                    run_fold(ds, &split, fold, model_config, train_config, fold_dir.as_deref())
                };
                (fold, run())
            })
            .collect()
    });
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (fold, res) in results {
        match res {
            Ok(r) => ok.push(r),
            Err(e) => failures.push((fold, e.to_string())),
        }
    }
    if ok.is_empty() {
        return Err(Error::Dataset(format!(
            "every fold failed; first error: {}",
            failures
                .first()
                .map(|(_, e)| e.clone())
                .unwrap_or_default()
        )));
    }
    let aggregate = aggregate_from(&ok);
    Ok(SweepReport {
        folds: ok,
        failures,
        aggregate,
    })
}

/// Full LOSO sweep over one dataset: two validation variants per held-out
/// subject, `2 * n_subjects` folds.
pub fn run_loso(
    ds: &WindowedDataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    opts: &SweepOptions,
) -> Result<SweepReport> {
    let folds = loso_fold_specs(ds)?;
    run_sweep(ds, folds, |f| split_for(ds, f), model_config, train_config, opts)
}

/// Cross-dataset sweep over a harmonized merge: each fold holds out one
/// subject per constituent dataset, two validation variants per fold.
pub fn run_cross_dataset(
    ds: &WindowedDataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    opts: &SweepOptions,
) -> Result<SweepReport> {
    let folds = cross_dataset_fold_specs(ds)?;
    run_sweep(ds, folds, |f| cross_dataset_split(ds, f), model_config, train_config, opts)
}
