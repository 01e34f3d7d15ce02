//! Mode dispatch: dataset preparation, single-fold training, LOSO sweeps,
//! cross-dataset sweeps, and report regeneration.

use crate::config::{
    CrossDatasetConfig, DatasetConfig, ExperimentConfig, FilesDataset, MergedVocabulary, Mode,
};
use crate::plots::metric_boxplot_svg;
use anyhow::{bail, Context};
use std::path::Path;
use tasked_core::data::adapters;
use tasked_core::data::container::{load_windowed, save_windowed};
use tasked_core::data::preprocess::MinMaxBounds;
use tasked_core::data::window::{window_recordings, HarmonizeInput, HarmonizeOptions};
use tasked_core::data::{
    interpolate_missing, normalize, resample, FoldSpec, NormalizationMode, SensorRecording,
    WindowedDataset,
};
use tasked_core::eval::{
    run_cross_dataset, run_fold, run_loso, report as core_report, FoldResult, SweepOptions,
    SweepReport,
};

/// Design choices that affect results, recorded in every run manifest.
fn decision_switches() -> serde_json::Value {
    serde_json::json!({
        "window_label_rule": "majority vote, ties resolve to the last timestep",
        "label_resampling": "nearest neighbor",
        "mmd_estimator": "biased, 1/M^2 + 1/N^2 - 2/MN normalization",
        "gaussian_kernel": "exp(-d^2 / (2 sigma^2)), bandwidth ladder 1/4..4 around median distance, uniform weights",
        "kd_reduction": "KL averaged over the batch",
        "class_weights": "n / (n_a * n_i), rescaled to mean 1",
        "epoch_budget": "epochs and patience apply per phase; optimizer moments reset between phases",
        "early_stopping_metric": "validation macro F1",
        "validation_rule": "first two non-test subjects, one per variant",
        "reported_checkpoint": "best validation macro F1 of the adversarial phase",
        "aggregate_std": "population std across folds (std across subjects also reported)",
    })
}

fn write_manifest(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let manifest = serde_json::json!({
        "config": cfg,
        "seeds": {
            "root": cfg.seed,
            "data": cfg.data_seed(),
            "train": cfg.train_seed(),
        },
        "decisions": decision_switches(),
    });
    std::fs::write(
        cfg.out_dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn load_bounds_file(path: &Path) -> anyhow::Result<MinMaxBounds> {
    let raw: std::collections::BTreeMap<String, Vec<(f64, f64)>> =
        serde_json::from_str(&std::fs::read_to_string(path)?)
            .with_context(|| format!("bounds file {}", path.display()))?;
    let mut out = MinMaxBounds::new();
    for (stream, list) in raw {
        for (ch, b) in list.into_iter().enumerate() {
            out.insert((stream.clone(), ch), b);
        }
    }
    Ok(out)
}

/// Read, clean, and window one adapter-backed dataset.
fn build_files_dataset(files_cfg: &FilesDataset) -> anyhow::Result<WindowedDataset> {
    let adapter = adapters::adapter(&files_cfg.adapter)?;
    let recs = adapter.load_files(&files_cfg.files)?;
    let mut recs: Vec<SensorRecording> = recs
        .into_iter()
        .map(interpolate_missing)
        .collect::<Result<_, _>>()?;
    if let Some(rate) = files_cfg.target_rate {
        recs = recs.iter().map(|r| resample(r, rate)).collect::<Result<_, _>>()?;
    }
    let normalization = files_cfg.normalization.unwrap_or(adapter.normalization);
    let bounds = match (&files_cfg.minmax_bounds_file, normalization) {
        (Some(path), NormalizationMode::MinmaxPerChannel) => Some(load_bounds_file(path)?),
        (None, NormalizationMode::MinmaxPerChannel) if files_cfg.adapter.starts_with("opportunity") => {
            Some(adapters::opportunity_minmax_bounds())
        }
        _ => None,
    };
    normalize(&mut recs, normalization, bounds.as_ref());
    let mut spec = adapter.default_dataset_spec();
    if let Some(w) = files_cfg.window_size {
        spec.window_size = w;
    }
    if let Some(s) = files_cfg.step {
        spec.step = s;
    }
    spec.normalization = normalization;
    Ok(window_recordings(&recs, &spec, adapter.n_activities, None)?)
}

/// Merge the configured sources over the canonical 18-channel layout.
fn build_cross_dataset(cross: &CrossDatasetConfig) -> anyhow::Result<WindowedDataset> {
    let n_activities = match cross.vocabulary {
        MergedVocabulary::Four => 4,
        MergedVocabulary::Thirteen => 13,
    };
    let mut inputs = Vec::new();
    for source in &cross.sources {
        let adapter = adapters::adapter(&source.adapter)?;
        let recs = adapter.load_files(&source.files)?;
        let recordings: Vec<SensorRecording> = recs
            .into_iter()
            .map(interpolate_missing)
            .collect::<Result<_, _>>()?;
        let label_map = match cross.vocabulary {
            MergedVocabulary::Four => adapters::merged_label_map_4(&source.adapter)?,
            MergedVocabulary::Thirteen => adapters::merged_label_map_13(&source.adapter)?,
        };
        inputs.push(HarmonizeInput {
            dataset_name: source.adapter.clone(),
            recordings,
            channel_map: adapters::common_channel_map(&source.adapter)?,
            label_map,
        });
    }
    let mut opts = HarmonizeOptions::new(n_activities);
    opts.window_size = cross.window_size;
    opts.step = cross.step;
    Ok(tasked_core::data::harmonize_cross_dataset(&inputs, &opts)?)
}

fn build_dataset(cfg: &ExperimentConfig) -> anyhow::Result<WindowedDataset> {
    match (&cfg.dataset, &cfg.cross_dataset) {
        (Some(DatasetConfig::Synthetic(s)), _) => {
            Ok(tasked_core::data::make_synthetic(&s.with_seed(cfg.data_seed()))?)
        }
        (Some(DatasetConfig::Files(f)), _) => build_files_dataset(f),
        (Some(DatasetConfig::Container { path }), _) => Ok(load_windowed(path)?),
        (None, Some(cross)) => build_cross_dataset(cross),
        (None, None) => bail!("config needs a [dataset] or [cross_dataset] section"),
    }
}

fn finish_report(cfg: &ExperimentConfig, label: &str, report: &SweepReport) -> anyhow::Result<()> {
    let agg = core_report::write_report(&cfg.out_dir, label, &report.folds, &report.failures)?;
    if cfg.plots {
        let dir = cfg.out_dir.join("plots");
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("metrics_boxplot.svg"), metric_boxplot_svg(&report.folds))?;
    }
    println!("{}", core_report::aggregate_table(label, &agg));
    if !report.failures.is_empty() {
        eprintln!(
            "{} fold(s) failed; see {}",
            report.failures.len(),
            cfg.out_dir.join("failures.txt").display()
        );
    }
    Ok(())
}

pub fn run(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    match cfg.mode {
        Mode::Report => {
            // Regenerates tables from stored fold results; never retrains
            // and never touches training artifacts.
            let folds_path = cfg.out_dir.join("folds.json");
            let text = std::fs::read_to_string(&folds_path)
                .with_context(|| format!("no fold results at {}", folds_path.display()))?;
            let folds: Vec<FoldResult> = serde_json::from_str(&text)?;
            if folds.is_empty() {
                bail!("fold results at {} are empty", folds_path.display());
            }
            let agg = core_report::aggregate_from(&folds);
            std::fs::write(cfg.out_dir.join("aggregate.csv"), core_report::aggregate_csv(&agg))?;
            std::fs::write(cfg.out_dir.join("report.txt"), core_report::aggregate_table("tasked", &agg))?;
            if cfg.plots {
                let dir = cfg.out_dir.join("plots");
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("metrics_boxplot.svg"), metric_boxplot_svg(&folds))?;
            }
            println!("{}", core_report::aggregate_table("tasked", &agg));
            return Ok(());
        }
        _ => write_manifest(cfg)?,
    }

    let dataset = build_dataset(cfg)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.train_seed();

    match cfg.mode {
        Mode::Prepare => {
            let stem = cfg.out_dir.join("dataset");
            save_windowed(&dataset, &stem)?;
            println!(
                "prepared {} windows, {} subjects, {} activities -> {}",
                dataset.len(),
                dataset.n_subjects(),
                dataset.n_activities,
                stem.with_extension("bin").display()
            );
        }
        Mode::Train => {
            let fold = FoldSpec {
                test_subject: cfg.fold.test_subject,
                variant: cfg.fold.variant,
            };
            let split = tasked_core::data::splits::split_for(&dataset, fold)?;
            let fold_dir = cfg
                .out_dir
                .join("folds")
                .join(format!("fold_{}_{}", fold.test_subject, fold.variant));
            let result = run_fold(&dataset, &split, fold, &cfg.model, &train_cfg, Some(&fold_dir))?;
            std::fs::write(
                fold_dir.join("result.json"),
                serde_json::to_string_pretty(&result)?,
            )?;
            println!(
                "fold test={} variant={}: acc {:.4}, F_w {:.4}, F_m {:.4}",
                fold.test_subject, fold.variant, result.metrics.acc, result.metrics.f_w, result.metrics.f_m
            );
        }
        Mode::Loso => {
            let opts = SweepOptions {
                workers: cfg.workers,
                out_dir: Some(cfg.out_dir.clone()),
            };
            let report = run_loso(&dataset, &cfg.model, &train_cfg, &opts)?;
            finish_report(cfg, "tasked", &report)?;
        }
        Mode::CrossDataset => {
            let opts = SweepOptions {
                workers: cfg.workers,
                out_dir: Some(cfg.out_dir.clone()),
            };
            let report = run_cross_dataset(&dataset, &cfg.model, &train_cfg, &opts)?;
            finish_report(cfg, "tasked-cross", &report)?;
        }
        Mode::Report => unreachable!("handled above"),
    }
    Ok(())
}
