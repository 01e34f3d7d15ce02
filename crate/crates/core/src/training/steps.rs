//! The two training steps: multi-task pre-training and adversarial training
//! with MMD alignment and self-distillation.

use super::optimizer::Adam;
use crate::error::{Error, Result};
use crate::graph::{Arr, Gradients, Graph, Var};
use crate::losses::{
    activity_loss, classification_loss, domain_loss, mmd_regularizer, objective, ClassWeights,
    KernelBank, LossBundle, LossHyper,
};
use crate::model::{
    classify_activity, discriminate_subject, embedding_vectors, extract_features, teacher_logits,
    Bound, BnUpdates, ForwardOpts, Mode, ModelParams, Net,
};
use ndarray::{Array2, Array3, Axis, Ix2};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;

/// One minibatch: windows, activity labels, fold-local subject labels.
/// Target batches carry no activity labels. `teacher` holds the frozen
/// step-1 logits for these rows, precomputed once per phase.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array3<f64>,
    pub y: Vec<usize>,
    pub s: Vec<usize>,
    pub teacher: Option<Array2<f64>>,
}

/// Inverse-frequency class weights `w_i = n / (n_a * n_i)`, rescaled to mean
/// weight 1. Classes absent from the labels get weight 0; the flag reports
/// that degenerate case.
pub fn class_weights(labels: &[usize], n_a: usize) -> Result<(ClassWeights, bool)> {
    if labels.is_empty() {
        return Err(Error::Dataset("class_weights: empty label set".into()));
    }
    let mut counts = vec![0usize; n_a];
    for &l in labels {
        if l >= n_a {
            return Err(Error::LabelOutOfRange {
                label: l as i64,
                n_classes: n_a,
            });
        }
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    let mut w: Vec<f64> = counts
        .iter()
        .map(|&c| if c > 0 { n / (n_a as f64 * c as f64) } else { 0.0 })
        .collect();
    let present = counts.iter().filter(|&&c| c > 0).count();
    let degenerate = present < n_a || n_a == 1;
    let mean: f64 = w.iter().sum::<f64>() / n_a as f64;
    if mean > 0.0 {
        for v in w.iter_mut() {
            *v /= mean;
        }
    }
    Ok((ClassWeights { w }, degenerate))
}

fn onehot(labels: &[usize], n_a: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), n_a));
    for (i, &l) in labels.iter().enumerate() {
        y[[i, l]] = 1.0;
    }
    y
}

fn finite(g: &Graph, v: Var, context: &str) -> Result<f64> {
    let value = g.scalar_value(v);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            context: context.to_string(),
            value,
        });
    }
    Ok(value)
}

fn collect_grads(params: &ModelParams, bound: &Bound, grads: &Gradients, net: Net) -> Result<Vec<(usize, Arr)>> {
    let wanted: std::collections::BTreeSet<usize> = params.trainable(net).into_iter().collect();
    let out: Vec<(usize, Arr)> = bound
        .slots()
        .filter(|(idx, _)| wanted.contains(idx))
        .filter_map(|(idx, var)| grads.get(var).map(|g| (idx, g.clone())))
        .collect();
    for (idx, g) in &out {
        if let Some(&bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                context: format!("gradient of tensor {idx} ({net:?})"),
                value: bad,
            });
        }
    }
    Ok(out)
}

/// Split mean-pooled embedding rows into per-subject groups via constant
/// selection matrices, keeping gradients flowing to the shared forward.
fn subject_groups(g: &mut Graph, vectors: Var, subjects: &[usize]) -> Vec<Var> {
    let n = subjects.len();
    let mut distinct: Vec<usize> = subjects.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut groups = Vec::with_capacity(distinct.len());
    for subj in distinct {
        let rows: Vec<usize> = (0..n).filter(|&i| subjects[i] == subj).collect();
        let mut mask = Array2::<f64>::zeros((rows.len(), n));
        for (r, &i) in rows.iter().enumerate() {
            mask[[r, i]] = 1.0;
        }
        let mask = g.constant(mask.into_dyn());
        groups.push(g.matmul(mask, vectors));
    }
    groups
}

pub struct StepCtx<'a> {
    pub params: &'a mut ModelParams,
    pub teacher: Option<&'a ModelParams>,
    pub adam_extractor: &'a mut Adam,
    pub adam_classifier: &'a mut Adam,
    pub adam_discriminator: &'a mut Adam,
    pub hyper: &'a LossHyper,
    pub weights: &'a ClassWeights,
    pub rng: &'a mut ChaCha20Rng,
    pub use_target_unlabeled: bool,
}

impl StepCtx<'_> {
    /// One train-mode extractor forward with the current parameters held
    /// constant; the resulting embedding feeds the classifier and
    /// discriminator sub-steps, which treat E as fixed.
    fn embed_fixed(&mut self, x: &Array3<f64>) -> Result<ndarray::ArrayD<f64>> {
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, self.params, &[]);
        let mut opts = ForwardOpts {
            mode: Mode::Train,
            rng: self.rng,
        };
        let mut updates = BnUpdates::default();
        let feats = extract_features(&mut g, self.params, &bound, x, &mut opts, &mut updates)?;
        Ok(g.value(feats.embedding).clone())
    }

    /// theta_D <- minimize L_D on a fixed embedding. Returns the loss value.
    fn update_discriminator(&mut self, emb: &ndarray::ArrayD<f64>, s: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, self.params, &[Net::Discriminator]);
        let mut opts = ForwardOpts {
            mode: Mode::Train,
            rng: self.rng,
        };
        let mut updates = BnUpdates::default();
        let emb_c = g.constant(emb.clone());
        let d_logits = discriminate_subject(&mut g, self.params, &bound, emb_c, &mut opts, &mut updates);
        let l_d = domain_loss(&mut g, d_logits, s)?;
        let value = finite(&g, l_d, "discriminator update")?;
        let grads = g.backward(l_d);
        let dg = collect_grads(self.params, &bound, &grads, Net::Discriminator)?;
        self.adam_discriminator.step(self.params, &dg);
        updates.apply(self.params, Net::Discriminator);
        Ok(value)
    }

    /// theta_C <- minimize L_act on a fixed embedding (step 1).
    fn update_classifier_activity(&mut self, emb: &ndarray::ArrayD<f64>, batch: &Batch) -> Result<f64> {
        let y = onehot(&batch.y, self.params.dims.n_activities);
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, self.params, &[Net::Classifier]);
        let emb_c = g.constant(emb.clone());
        let logits = classify_activity(&mut g, &bound, emb_c);
        let l_act = activity_loss(&mut g, logits, &y, self.weights, self.hyper.dice_eps)?;
        let value = finite(&g, l_act, "classifier update")?;
        let grads = g.backward(l_act);
        let cg = collect_grads(self.params, &bound, &grads, Net::Classifier)?;
        self.adam_classifier.step(self.params, &cg);
        Ok(value)
    }

    /// theta_C <- minimize L_cls with teacher logits on a fixed embedding
    /// (step 2). Returns (total, activity, kd) values.
    fn update_classifier_distilled(
        &mut self,
        emb: &ndarray::ArrayD<f64>,
        batch: &Batch,
        t_logits: &Array2<f64>,
    ) -> Result<(f64, f64, f64)> {
        let y = onehot(&batch.y, self.params.dims.n_activities);
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, self.params, &[Net::Classifier]);
        let emb_c = g.constant(emb.clone());
        let logits = classify_activity(&mut g, &bound, emb_c);
        let (total, act, kd) = classification_loss(&mut g, logits, &y, t_logits, self.weights, self.hyper)?;
        let value = finite(&g, total, "classifier distillation update")?;
        let grads = g.backward(total);
        let cg = collect_grads(self.params, &bound, &grads, Net::Classifier)?;
        self.adam_classifier.step(self.params, &cg);
        Ok((value, g.scalar_value(act), g.scalar_value(kd)))
    }
}

/// Step-1 update (multi-task pre-training), in order: theta_C by grad L_act,
/// theta_D by grad L_D, theta_E by grad (L_D + L_act). The extractor
/// minimizes the unweighted sum; no loss weights are read in this phase.
pub fn pretrain_step(ctx: &mut StepCtx, batch: &Batch) -> Result<LossBundle> {
    let emb = ctx.embed_fixed(&batch.x)?;
    let classifier_objective = ctx.update_classifier_activity(&emb, batch)?;
    let discriminator_objective = ctx.update_discriminator(&emb, &batch.s)?;

    // theta_E by grad(L_D + L_act).
    let y = onehot(&batch.y, ctx.params.dims.n_activities);
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, ctx.params, &[Net::Extractor]);
    let mut opts = ForwardOpts {
        mode: Mode::Train,
        rng: ctx.rng,
    };
    let mut updates = BnUpdates::default();
    let feats = extract_features(&mut g, ctx.params, &bound, &batch.x, &mut opts, &mut updates)?;
    let logits = classify_activity(&mut g, &bound, feats.embedding);
    let d_logits = discriminate_subject(&mut g, ctx.params, &bound, feats.embedding, &mut opts, &mut updates);
    let l_act = activity_loss(&mut g, logits, &y, ctx.weights, ctx.hyper.dice_eps)?;
    let l_d = domain_loss(&mut g, d_logits, &batch.s)?;
    let total = g.add(l_d, l_act);
    let extractor_objective = finite(&g, total, "extractor pretrain update")?;
    let grads = g.backward(total);
    let eg = collect_grads(ctx.params, &bound, &grads, Net::Extractor)?;
    ctx.adam_extractor.step(ctx.params, &eg);
    updates.apply(ctx.params, Net::Extractor);

    Ok(LossBundle {
        activity: g.scalar_value(l_act),
        kd: 0.0,
        domain: g.scalar_value(l_d),
        mmd: 0.0,
        extractor_objective,
        classifier_objective,
        discriminator_objective,
    })
}

/// Step-2 update (adversarial phase), in order: theta_D by grad L_D on the
/// source batch; theta_C by grad L_cls with teacher logits; theta_E by grad
/// of the full objective `lambda_cls L_cls + lambda_mmd L_MMD - lambda_d
/// L_D`; then, when transductive mode is on and a target batch is given,
/// theta_D by grad L_D and theta_E by grad (L_MMD - L_D) on the combined
/// batch. Target activity labels are never read.
pub fn adversarial_step(ctx: &mut StepCtx, batch: &Batch, target: Option<&Batch>) -> Result<LossBundle> {
    if target.is_some() && !ctx.use_target_unlabeled {
        return Err(Error::UnexpectedTargetBatch);
    }
    let t_logits = match (&batch.teacher, ctx.teacher) {
        (Some(t), _) => t.clone(),
        (None, Some(teacher)) => teacher_logits(teacher, &batch.x)?,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "adversarial step requires a teacher snapshot".into(),
            ))
        }
    };

    // (i) discriminator on the source batch.
    let emb = ctx.embed_fixed(&batch.x)?;
    let discriminator_objective = ctx.update_discriminator(&emb, &batch.s)?;

    // (ii) classifier with distillation.
    let (classifier_objective, _, _) = ctx.update_classifier_distilled(&emb, batch, &t_logits)?;

    // (iii) extractor with the full objective.
    let y = onehot(&batch.y, ctx.params.dims.n_activities);
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, ctx.params, &[Net::Extractor]);
    let mut opts = ForwardOpts {
        mode: Mode::Train,
        rng: ctx.rng,
    };
    let mut updates = BnUpdates::default();
    let feats = extract_features(&mut g, ctx.params, &bound, &batch.x, &mut opts, &mut updates)?;
    let logits = classify_activity(&mut g, &bound, feats.embedding);
    let d_logits = discriminate_subject(&mut g, ctx.params, &bound, feats.embedding, &mut opts, &mut updates);
    let (l_cls, l_act, l_kd) = classification_loss(&mut g, logits, &y, &t_logits, ctx.weights, ctx.hyper)?;
    let l_d = domain_loss(&mut g, d_logits, &batch.s)?;
    let vectors = embedding_vectors(&mut g, feats.embedding);
    let vec_values = g.value(vectors).clone().into_dimensionality::<Ix2>().expect("vectors are 2-d");
    let bank = KernelBank::median_heuristic(&vec_values);
    let groups = subject_groups(&mut g, vectors, &batch.s);
    let (l_mmd, _single_group) = mmd_regularizer(&mut g, &groups, &bank)?;
    let (ext_obj, _, _) = objective(&mut g, l_cls, l_mmd, l_d, ctx.hyper);
    let extractor_objective = finite(&g, ext_obj, "extractor adversarial update")?;
    let grads = g.backward(ext_obj);
    let eg = collect_grads(ctx.params, &bound, &grads, Net::Extractor)?;
    ctx.adam_extractor.step(ctx.params, &eg);
    updates.apply(ctx.params, Net::Extractor);

    let bundle = LossBundle {
        activity: g.scalar_value(l_act),
        kd: g.scalar_value(l_kd),
        domain: g.scalar_value(l_d),
        mmd: g.scalar_value(l_mmd),
        extractor_objective,
        classifier_objective,
        discriminator_objective,
    };

    // (iv) combined source + target updates, transductive mode only.
    if let Some(t) = target {
        let combined_x = ndarray::concatenate(Axis(0), &[batch.x.view(), t.x.view()])
            .expect("window shapes agree");
        let mut combined_s = batch.s.clone();
        combined_s.extend_from_slice(&t.s);
        let combined_emb = ctx.embed_fixed(&combined_x)?;
        ctx.update_discriminator(&combined_emb, &combined_s)?;

        let mut g = Graph::new();
        let bound = Bound::new(&mut g, ctx.params, &[Net::Extractor]);
        let mut opts = ForwardOpts {
            mode: Mode::Train,
            rng: ctx.rng,
        };
        let mut updates = BnUpdates::default();
        let feats = extract_features(&mut g, ctx.params, &bound, &combined_x, &mut opts, &mut updates)?;
        let d_logits = discriminate_subject(&mut g, ctx.params, &bound, feats.embedding, &mut opts, &mut updates);
        let l_d = domain_loss(&mut g, d_logits, &combined_s)?;
        let vectors = embedding_vectors(&mut g, feats.embedding);
        let vec_values = g.value(vectors).clone().into_dimensionality::<Ix2>().expect("vectors are 2-d");
        let bank = KernelBank::median_heuristic(&vec_values);
        let groups = subject_groups(&mut g, vectors, &combined_s);
        let (l_mmd, _) = mmd_regularizer(&mut g, &groups, &bank)?;
        let combined_loss = g.sub(l_mmd, l_d);
        finite(&g, combined_loss, "extractor transductive update")?;
        let grads = g.backward(combined_loss);
        let eg = collect_grads(ctx.params, &bound, &grads, Net::Extractor)?;
        ctx.adam_extractor.step(ctx.params, &eg);
        updates.apply(ctx.params, Net::Extractor);
    }

    Ok(bundle)
}

/// Subject-stratified batch order: per-subject queues are shuffled and
/// round-robin interleaved so every batch mixes subjects whenever more than
/// one subject exists. Singleton tail batches are dropped (batch norm needs
/// at least two samples).
pub fn stratified_batches(subjects: &[usize], batch_size: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<usize>> {
    let mut queues: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &s) in subjects.iter().enumerate() {
        queues.entry(s).or_default().push(i);
    }
    let mut queue_list: Vec<Vec<usize>> = queues.into_values().collect();
    for q in queue_list.iter_mut() {
        q.shuffle(rng);
    }
    queue_list.shuffle(rng);
    let mut order = Vec::with_capacity(subjects.len());
    let mut cursors = vec![0usize; queue_list.len()];
    loop {
        let mut progressed = false;
        for (q, cursor) in queue_list.iter().zip(cursors.iter_mut()) {
            if *cursor < q.len() {
                order.push(q[*cursor]);
                *cursor += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.last().map_or(false, |b| b.len() < 2) {
        batches.pop();
    }
    batches
}
