//! Objective components: weighted cross-entropy + dice activity loss,
//! temperature-softened self-distillation, subject-domain cross-entropy,
//! multi-kernel MMD, and the combined min-max objective.
//!
//! Every operation builds onto a caller-owned [`Graph`] so gradients flow to
//! whatever leaves the caller bound. Targets, teacher outputs, and kernel
//! bandwidths enter as constants.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

/// Per-class weights for the activity cross-entropy term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(n_a: usize) -> Self {
        ClassWeights { w: vec![1.0; n_a] }
    }
}

/// Convex combination of Gaussian kernels: `k(a,b) = sum_u beta_u *
/// exp(-||a-b||^2 / (2 sigma_u^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    /// `(sigma_u, beta_u)` pairs; sigmas positive, betas on the simplex.
    pub kernels: Vec<(f64, f64)>,
}

/// Bandwidth ladder applied around the median pairwise distance.
pub const BANDWIDTH_FACTORS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

impl KernelBank {
    pub fn new(sigmas: &[f64], betas: &[f64]) -> Result<Self> {
        if sigmas.len() != betas.len() || sigmas.is_empty() {
            return Err(Error::InvalidConfig(
                "kernel bank needs matching, nonempty sigma/beta lists".into(),
            ));
        }
        if sigmas.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidConfig("kernel bandwidths must be positive".into()));
        }
        let total: f64 = betas.iter().sum();
        if betas.iter().any(|&b| b < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(
                "kernel weights must be nonnegative and sum to 1".into(),
            ));
        }
        Ok(KernelBank {
            kernels: sigmas.iter().cloned().zip(betas.iter().cloned()).collect(),
        })
    }

    /// Single Gaussian kernel with weight 1.
    pub fn single(sigma: f64) -> Self {
        KernelBank {
            kernels: vec![(sigma, 1.0)],
        }
    }

    /// Five kernels with bandwidths `factor * median pairwise distance` and
    /// uniform weights. Falls back to bandwidth 1 when all rows coincide.
    pub fn median_heuristic(embeddings: &Array2<f64>) -> Self {
        let n = embeddings.nrows();
        let mut dists = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let d2: f64 = embeddings
                    .row(i)
                    .iter()
                    .zip(embeddings.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                dists.push(d2.sqrt());
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if dists.is_empty() {
            0.0
        } else {
            dists[dists.len() / 2]
        };
        let base = if median > 0.0 { median } else { 1.0 };
        let beta = 1.0 / BANDWIDTH_FACTORS.len() as f64;
        KernelBank {
            kernels: BANDWIDTH_FACTORS.iter().map(|f| (f * base, beta)).collect(),
        }
    }
}

/// Loss hyperparameters. Defaults follow the training recipe:
/// `lambda_cls = 10`, `lambda_mmd = 5`, `lambda_d = 1`, `alpha = 0.6`,
/// `tau = 20`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossHyper {
    pub lambda_cls: f64,
    pub lambda_mmd: f64,
    pub lambda_d: f64,
    pub alpha: f64,
    pub tau: f64,
    pub dice_eps: f64,
}

impl Default for LossHyper {
    fn default() -> Self {
        LossHyper {
            lambda_cls: 10.0,
            lambda_mmd: 5.0,
            lambda_d: 1.0,
            alpha: 0.6,
            tau: 20.0,
            dice_eps: 1e-6,
        }
    }
}

impl LossHyper {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_cls < 0.0 || self.lambda_mmd < 0.0 || self.lambda_d < 0.0 {
            return Err(Error::InvalidConfig("lambda weights must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig("alpha must lie in [0, 1]".into()));
        }
        if self.tau <= 0.0 || self.dice_eps <= 0.0 {
            return Err(Error::InvalidConfig("tau and dice_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step component losses and the three network objectives.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBundle {
    pub activity: f64,
    pub kd: f64,
    pub domain: f64,
    pub mmd: f64,
    pub extractor_objective: f64,
    pub classifier_objective: f64,
    pub discriminator_objective: f64,
}

fn check_logits_targets(g: &Graph, logits: Var, y: &Array2<f64>) -> Result<()> {
    let shape = g.shape(logits);
    if shape.len() != 2 || shape[0] != y.nrows() || shape[1] != y.ncols() {
        return Err(Error::shape(
            "activity_loss",
            format!("{:?}", [y.nrows(), y.ncols()]),
            format!("{shape:?}"),
        ));
    }
    for row in y.axis_iter(Axis(0)) {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::InvalidConfig("targets must be one-hot rows".into()));
        }
    }
    Ok(())
}

/// Row-wise log-softmax on a plain array (teacher-side helper).
pub fn log_softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|x| x - lse);
    }
    out
}

/// Activity classification loss: mean weighted cross-entropy half plus a
/// global dice half computed over all samples and classes,
/// `1 - (2*sum(p .* y) + eps) / (sum(p) + sum(y) + eps)` with `p` the
/// softmax of the logits.
pub fn activity_loss(
    g: &mut Graph,
    logits: Var,
    y: &Array2<f64>,
    weights: &ClassWeights,
    eps: f64,
) -> Result<Var> {
    check_logits_targets(g, logits, y)?;
    let n = y.nrows();
    let n_a = y.ncols();
    if weights.w.len() != n_a {
        return Err(Error::shape("class weights", format!("{n_a}"), format!("{}", weights.w.len())));
    }
    // w_c * y_ic folded into one constant.
    let mut wy = y.clone();
    for (c, mut col) in wy.axis_iter_mut(Axis(1)).enumerate() {
        col.mapv_inplace(|v| v * weights.w[c]);
    }
    let wy = g.constant(wy.into_dyn());

    let logp = g.log_softmax(logits, 1);
    let p = g.exp(logp);

    let ce_inner = g.mul(logp, wy);
    let ce_sum = g.sum_all(ce_inner);
    let ce = g.scale(ce_sum, -1.0 / n as f64);

    let y_const = g.constant(y.clone().into_dyn());
    let py = g.mul(p, y_const);
    let inter = g.sum_all(py);
    let two_inter = g.scale(inter, 2.0);
    let num = g.add_scalar(two_inter, eps);
    let p_sum = g.sum_all(p);
    let y_sum: f64 = y.sum();
    let den = g.add_scalar(p_sum, y_sum + eps);
    let ratio = g.div(num, den);
    let neg_ratio = g.neg(ratio);
    let dice = g.add_scalar(neg_ratio, 1.0);

    let ce_half = g.scale(ce, 0.5);
    let dice_half = g.scale(dice, 0.5);
    Ok(g.add(ce_half, dice_half))
}

/// Temperature-softened probabilities: `softmax(logits / tau)` per row.
pub fn softened_probs(g: &mut Graph, logits: Var, tau: f64) -> Var {
    let scaled = g.scale(logits, 1.0 / tau);
    g.softmax(scaled, 1)
}

/// Self-distillation loss: `KL(p_teacher(tau) || p_student(tau))` averaged
/// over the batch. No gradient flows to the teacher.
pub fn kd_loss(g: &mut Graph, student_logits: Var, teacher_logits: &Array2<f64>, tau: f64) -> Result<Var> {
    let shape = g.shape(student_logits);
    if shape != [teacher_logits.nrows(), teacher_logits.ncols()] {
        return Err(Error::shape(
            "kd_loss",
            format!("{:?}", teacher_logits.shape()),
            format!("{shape:?}"),
        ));
    }
    let n = teacher_logits.nrows() as f64;
    let t_log = log_softmax_rows(&teacher_logits.mapv(|z| z / tau));
    let t_prob = t_log.mapv(f64::exp);
    // Entropy side of the KL; constant w.r.t. the student.
    let teacher_term: f64 = (&t_prob * &t_log).sum() / n;

    let scaled = g.scale(student_logits, 1.0 / tau);
    let s_log = g.log_softmax(scaled, 1);
    let t_prob_c = g.constant(t_prob.into_dyn());
    let cross = g.mul(s_log, t_prob_c);
    let cross_sum = g.sum_all(cross);
    let neg_cross_mean = g.scale(cross_sum, -1.0 / n);
    Ok(g.add_scalar(neg_cross_mean, teacher_term))
}

/// Combined classification loss, `(1 - alpha) * activity + alpha * kd`.
/// Returns `(total, activity, kd)`.
pub fn classification_loss(
    g: &mut Graph,
    logits: Var,
    y: &Array2<f64>,
    teacher_logits: &Array2<f64>,
    weights: &ClassWeights,
    hyper: &LossHyper,
) -> Result<(Var, Var, Var)> {
    let act = activity_loss(g, logits, y, weights, hyper.dice_eps)?;
    let kd = kd_loss(g, logits, teacher_logits, hyper.tau)?;
    let act_part = g.scale(act, 1.0 - hyper.alpha);
    let kd_part = g.scale(kd, hyper.alpha);
    let total = g.add(act_part, kd_part);
    Ok((total, act, kd))
}

/// Subject-discrimination loss: mean multi-class cross-entropy of the
/// discriminator logits against subject labels.
pub fn domain_loss(g: &mut Graph, d_logits: Var, subjects: &[usize]) -> Result<Var> {
    let shape = g.shape(d_logits).to_vec();
    if shape.len() != 2 || shape[0] != subjects.len() {
        return Err(Error::shape(
            "domain_loss",
            format!("[{}, n_subjects]", subjects.len()),
            format!("{shape:?}"),
        ));
    }
    let n_classes = shape[1];
    let mut onehot = Array2::<f64>::zeros((subjects.len(), n_classes));
    for (i, &s) in subjects.iter().enumerate() {
        if s >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: s as i64,
                n_classes,
            });
        }
        onehot[[i, s]] = 1.0;
    }
    let onehot = g.constant(onehot.into_dyn());
    let logp = g.log_softmax(d_logits, 1);
    let picked = g.mul(logp, onehot);
    let total = g.sum_all(picked);
    Ok(g.scale(total, -1.0 / subjects.len() as f64))
}

/// Multi-kernel Gaussian evaluated on two plain vectors.
pub fn kernel_eval(a: &[f64], b: &[f64], bank: &KernelBank) -> f64 {
    assert_eq!(a.len(), b.len(), "kernel_eval: length mismatch");
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    bank.kernels
        .iter()
        .map(|&(sigma, beta)| beta * (-d2 / (2.0 * sigma * sigma)).exp())
        .sum()
}

/// Multi-kernel matrix between the rows of `a` (M,d) and `b` (N,d), built on
/// the tape: `K = sum_u beta_u exp(-D / (2 sigma_u^2))` with `D` the pairwise
/// squared distances clamped at zero.
fn kernel_matrix(g: &mut Graph, a: Var, b: Var, bank: &KernelBank) -> Var {
    let a_sq = g.square(a);
    let a2 = g.sum_axes_keep(a_sq, &[1]); // (M,1)
    let b_sq = g.square(b);
    let b2 = g.sum_axes_keep(b_sq, &[1]); // (N,1)
    let n = g.shape(b)[0];
    let b2t = g.reshape(b2, &[1, n]); // (1,N)
    let bt = g.permute(b, &[1, 0]);
    let cross = g.matmul(a, bt); // (M,N)
    let neg2 = g.scale(cross, -2.0);
    let with_a = g.add(neg2, a2);
    let dist = g.add(with_a, b2t);
    let dist = g.relu(dist); // guards tiny negative round-off
    let mut acc: Option<Var> = None;
    for &(sigma, beta) in &bank.kernels {
        let scaled = g.scale(dist, -1.0 / (2.0 * sigma * sigma));
        let e = g.exp(scaled);
        let term = g.scale(e, beta);
        acc = Some(match acc {
            Some(prev) => g.add(prev, term),
            None => term,
        });
    }
    acc.expect("kernel bank is nonempty")
}

/// Squared maximum mean discrepancy (biased estimator) between two embedding
/// sets given as `(M,d)` and `(N,d)` nodes:
/// `mean(K_ss) + mean(K_tt) - 2 * mean(K_st)`.
pub fn mmd2(g: &mut Graph, e_s: Var, e_t: Var, bank: &KernelBank) -> Result<Var> {
    let (ss, ts) = (g.shape(e_s).to_vec(), g.shape(e_t).to_vec());
    if ss.len() != 2 || ts.len() != 2 || ss[1] != ts[1] {
        return Err(Error::shape("mmd2", "(M,d) and (N,d)", format!("{ss:?} vs {ts:?}")));
    }
    if ss[0] == 0 || ts[0] == 0 {
        return Err(Error::InvalidConfig("mmd2 requires nonempty sample sets".into()));
    }
    let k_ss = kernel_matrix(g, e_s, e_s, bank);
    let k_tt = kernel_matrix(g, e_t, e_t, bank);
    let k_st = kernel_matrix(g, e_s, e_t, bank);
    let m_ss = g.mean_all(k_ss);
    let m_tt = g.mean_all(k_tt);
    let m_st = g.mean_all(k_st);
    let within = g.add(m_ss, m_tt);
    let cross = g.scale(m_st, -2.0);
    Ok(g.add(within, cross))
}

/// Overall MMD regularizer over the `K` subject groups present in a batch:
/// `(1/K^2) * sum over ordered pairs (i,j) of mmd2(E_i, E_j)` with zero
/// diagonal. Returns a zero constant (flagged) when fewer than two groups
/// are present.
pub fn mmd_regularizer(g: &mut Graph, groups: &[Var], bank: &KernelBank) -> Result<(Var, bool)> {
    let k = groups.len();
    if k < 2 {
        return Ok((g.scalar(0.0), true));
    }
    let mut acc: Option<Var> = None;
    for i in 0..k {
        for j in (i + 1)..k {
            let v = mmd2(g, groups[i], groups[j], bank)?;
            acc = Some(match acc {
                Some(prev) => g.add(prev, v),
                None => v,
            });
        }
    }
    let total = acc.expect("at least one pair");
    // Ordered pairs count each unordered pair twice.
    Ok((g.scale(total, 2.0 / (k * k) as f64), false))
}

/// The three network objectives:
/// extractor minimizes `lambda_cls * L_cls + lambda_mmd * L_MMD - lambda_d * L_D`,
/// the classifier minimizes `L_cls`, the discriminator minimizes `L_D`.
pub fn objective(
    g: &mut Graph,
    l_cls: Var,
    l_mmd: Var,
    l_d: Var,
    hyper: &LossHyper,
) -> (Var, Var, Var) {
    let cls_term = g.scale(l_cls, hyper.lambda_cls);
    let mmd_term = g.scale(l_mmd, hyper.lambda_mmd);
    let d_term = g.scale(l_d, -hyper.lambda_d);
    let partial = g.add(cls_term, mmd_term);
    let extractor = g.add(partial, d_term);
    (extractor, l_cls, l_d)
}
