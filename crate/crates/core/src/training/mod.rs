//! Two-step training schedule: multi-task pre-training, teacher snapshot,
//! then adversarial training with MMD alignment and self-distillation, each
//! phase with macro-F1 early stopping on the validation subject.

pub mod optimizer;
pub mod steps;

pub use optimizer::Adam;
pub use steps::{adversarial_step, class_weights, pretrain_step, stratified_batches, Batch, StepCtx};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::eval::metrics::ConfusionMatrix;
use crate::losses::{ClassWeights, LossBundle, LossHyper};
use crate::model::{predict_activities, teacher_logits, ModelConfig, ModelDims, ModelParams};
use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Adversarial,
}

/// Optimization settings. Defaults: batch 128, 200 epochs per phase with
/// patience 20, Adam at `eta_C = eta_E = 1e-4`, `eta_D = 1e-3`,
/// `beta1 = 0.9`, `beta2 = 0.99`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Epoch budget per phase.
    pub epochs: usize,
    pub patience: usize,
    pub lr_extractor: f64,
    pub lr_classifier: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub hyper: LossHyper,
    pub use_target_unlabeled: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 200,
            patience: 20,
            lr_extractor: 1e-4,
            lr_classifier: 1e-4,
            lr_discriminator: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            hyper: LossHyper::default(),
            use_target_unlabeled: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size >= 2 and epochs >= 1 required".into()));
        }
        if self.patience > self.epochs {
            return Err(Error::InvalidConfig("patience must not exceed epochs".into()));
        }
        if self.lr_extractor < 0.0 || self.lr_classifier < 0.0 || self.lr_discriminator < 0.0 {
            return Err(Error::InvalidConfig("learning rates must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        self.hyper.validate()
    }
}

/// One line of the training log: epoch-mean losses plus the validation
/// metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub losses: LossBundle,
    pub val_macro_f1: f64,
}

/// Result of a full two-phase run: the best-validation step-2 model, the
/// frozen step-1 teacher, and the per-epoch history.
pub struct TrainOutcome {
    pub params: ModelParams,
    pub teacher: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_val_macro_f1: f64,
    pub class_weights: ClassWeights,
}

/// Train/validation window sets with fold-local subject ids: train subjects
/// occupy `0..N`; target (test) subjects use ids `N..n_domains`. The
/// optional target set feeds the transductive updates and carries no
/// activity labels.
pub struct TrainData<'a> {
    pub train: &'a WindowedDataset,
    pub val: &'a WindowedDataset,
    pub target: Option<&'a WindowedDataset>,
}

fn make_batch(ds: &WindowedDataset, indices: &[usize], teacher_table: Option<&ndarray::Array2<f64>>) -> Batch {
    let sel = ds.select(indices);
    let teacher = teacher_table.map(|t| {
        let mut rows = ndarray::Array2::zeros((indices.len(), t.ncols()));
        for (r, &i) in indices.iter().enumerate() {
            rows.row_mut(r).assign(&t.row(i));
        }
        rows
    });
    Batch {
        x: sel.windows,
        y: sel.activity_labels,
        s: sel.subject_labels,
        teacher,
    }
}

/// Macro F1 of eval-mode predictions on a window set.
pub fn validation_macro_f1(params: &ModelParams, ds: &WindowedDataset) -> Result<f64> {
    let preds = predict_activities(params, &ds.windows, 256)?;
    let cm = ConfusionMatrix::from_pairs(
        ds.n_activities,
        ds.activity_labels.iter().copied().zip(preds),
    )?;
    Ok(cm.metrics()?.f_m)
}

struct PhaseOutcome {
    best_params: ModelParams,
    best_val: f64,
}

/// Run the full two-step schedule and return the best-validation adversarial
/// checkpoint. `on_epoch` fires once per epoch for append-only logging.
pub fn train(
    data: &TrainData,
    model_config: &ModelConfig,
    config: &TrainConfig,
    n_domains: usize,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_ds = data.train;
    if train_ds.is_empty() || data.val.is_empty() {
        return Err(Error::Dataset("train and validation splits must be nonempty".into()));
    }
    let n_train_subjects = train_ds.subject_labels.iter().copied().max().unwrap_or(0) + 1;
    if n_train_subjects >= n_domains {
        return Err(Error::InvalidConfig(format!(
            "n_domains ({n_domains}) must exceed the {n_train_subjects} training subject ids"
        )));
    }
    if let Some(t) = data.target {
        if t.subject_labels.iter().any(|&s| s >= n_domains) {
            return Err(Error::InvalidConfig("target subject id outside discriminator range".into()));
        }
    }

    let dims = ModelDims::from_dataset(train_ds, n_domains);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(dims, model_config.clone(), &mut rng)?;
    let (weights, _degenerate) = class_weights(&train_ds.activity_labels, train_ds.n_activities)?;

    let mut history: Vec<EpochRecord> = Vec::new();

    // Step 1: multi-task pre-training.
    let phase1 = run_phase(
        Phase::Pretrain,
        &mut params,
        None,
        data,
        config,
        &weights,
        &mut rng,
        &mut history,
        &mut on_epoch,
    )?;
    params = phase1.best_params;
    let teacher = params.clone();

    // Step 2: adversarial training from the pre-trained model, fresh
    // optimizer moments.
    let phase2 = run_phase(
        Phase::Adversarial,
        &mut params,
        Some(&teacher),
        data,
        config,
        &weights,
        &mut rng,
        &mut history,
        &mut on_epoch,
    )?;

    Ok(TrainOutcome {
        params: phase2.best_params,
        teacher,
        history,
        best_val_macro_f1: phase2.best_val,
        class_weights: weights,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    phase: Phase,
    params: &mut ModelParams,
    teacher: Option<&ModelParams>,
    data: &TrainData,
    config: &TrainConfig,
    weights: &ClassWeights,
    rng: &mut ChaCha20Rng,
    history: &mut Vec<EpochRecord>,
    on_epoch: &mut Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<PhaseOutcome> {
    let mut adam_e = Adam::new(config.lr_extractor, config.beta1, config.beta2);
    let mut adam_c = Adam::new(config.lr_classifier, config.beta1, config.beta2);
    let mut adam_d = Adam::new(config.lr_discriminator, config.beta1, config.beta2);
    let mut best_val = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut since_best = 0usize;

    let use_target = config.use_target_unlabeled && phase == Phase::Adversarial && data.target.is_some();

    // The teacher is frozen for the whole phase, so its logits per training
    // window are computed once up front.
    let teacher_table: Option<ndarray::Array2<f64>> = match (phase, teacher) {
        (Phase::Adversarial, Some(t)) => {
            let n = data.train.len();
            let mut table = ndarray::Array2::zeros((n, data.train.n_activities));
            for start in (0..n).step_by(256) {
                let end = (start + 256).min(n);
                let idx: Vec<usize> = (start..end).collect();
                let xb = data.train.select(&idx).windows;
                let part = teacher_logits(t, &xb)?;
                table.slice_mut(ndarray::s![start..end, ..]).assign(&part);
            }
            Some(table)
        }
        _ => None,
    };

    for epoch in 0..config.epochs {
        if epoch > 0 && since_best >= config.patience {
            break;
        }
        let batches = stratified_batches(&data.train.subject_labels, config.batch_size, rng);
        let target_batches: Vec<Batch> = if use_target {
            let t = data.target.expect("target present");
            let mut idx: Vec<usize> = (0..t.len()).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(rng);
            idx.chunks(config.batch_size)
                .filter(|c| c.len() >= 2)
                .map(|c| make_batch(t, c, None))
                .collect()
        } else {
            Vec::new()
        };

        let mut sum = LossBundle::default();
        let mut steps = 0usize;
        for (bi, batch_idx) in batches.iter().enumerate() {
            let batch = make_batch(data.train, batch_idx, teacher_table.as_ref());
            let mut ctx = StepCtx {
                params,
                teacher,
                adam_extractor: &mut adam_e,
                adam_classifier: &mut adam_c,
                adam_discriminator: &mut adam_d,
                hyper: &config.hyper,
                weights,
                rng,
                use_target_unlabeled: config.use_target_unlabeled,
            };
            let bundle = match phase {
                Phase::Pretrain => pretrain_step(&mut ctx, &batch)?,
                Phase::Adversarial => {
                    let target = if use_target && !target_batches.is_empty() {
                        Some(&target_batches[bi % target_batches.len()])
                    } else {
                        None
                    };
                    adversarial_step(&mut ctx, &batch, target)?
                }
            };
            sum.activity += bundle.activity;
            sum.kd += bundle.kd;
            sum.domain += bundle.domain;
            sum.mmd += bundle.mmd;
            sum.extractor_objective += bundle.extractor_objective;
            sum.classifier_objective += bundle.classifier_objective;
            sum.discriminator_objective += bundle.discriminator_objective;
            steps += 1;
        }
        if steps == 0 {
            return Err(Error::Dataset("no usable batches (training split too small)".into()));
        }
        let scale = 1.0 / steps as f64;
        let losses = LossBundle {
            activity: sum.activity * scale,
            kd: sum.kd * scale,
            domain: sum.domain * scale,
            mmd: sum.mmd * scale,
            extractor_objective: sum.extractor_objective * scale,
            classifier_objective: sum.classifier_objective * scale,
            discriminator_objective: sum.discriminator_objective * scale,
        };
        let val_macro_f1 = validation_macro_f1(params, data.val)?;
        let record = EpochRecord {
            phase,
            epoch,
            losses,
            val_macro_f1,
        };
        if let Some(cb) = on_epoch.as_mut() {
            cb(&record);
        }
        history.push(record);
        if val_macro_f1 > best_val {
            best_val = val_macro_f1;
            best_params = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    *params = best_params.clone();
    Ok(PhaseOutcome {
        best_params,
        best_val,
    })
}

/// Concatenate two window sets row-wise (shared grouping required).
pub fn concat_datasets(a: &WindowedDataset, b: &WindowedDataset) -> Result<WindowedDataset> {
    if a.sensor_grouping != b.sensor_grouping || a.n_activities != b.n_activities {
        return Err(Error::Dataset("cannot concatenate datasets with different layouts".into()));
    }
    let windows = ndarray::concatenate(Axis(0), &[a.windows.view(), b.windows.view()])
        .map_err(|e| Error::Dataset(format!("concat: {e}")))?;
    Ok(WindowedDataset {
        windows,
        activity_labels: a
            .activity_labels
            .iter()
            .chain(&b.activity_labels)
            .copied()
            .collect(),
        subject_labels: a
            .subject_labels
            .iter()
            .chain(&b.subject_labels)
            .copied()
            .collect(),
        sensor_grouping: a.sensor_grouping.clone(),
        n_activities: a.n_activities,
        subject_origin: None,
    })
}
