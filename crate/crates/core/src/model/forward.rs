//! Forward passes of the three networks on the autodiff tape.

use super::layers::{batch_norm, conv1d, dropout, linear, mean_axis, positional_encoding};
use super::params::{Bound, BnUpdates, ModelParams};
use super::Mode;
use crate::error::{Error, Result};
use crate::graph::{Arr, Graph, Var};
use ndarray::{Array3, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Attention matrices of one block, recorded when
/// `ModelConfig::collect_attention` is set: row-stochastic scores after the
/// softmax and again after drop-connect renormalization.
#[derive(Debug, Clone)]
pub struct AttentionRecord {
    pub block: usize,
    pub softmax: Arr,
    pub renormalized: Arr,
}

/// Extractor output: the shared embedding `(n, 256, W/8)` plus any recorded
/// attention matrices.
pub struct ExtractOutput {
    pub embedding: Var,
    pub attention: Vec<AttentionRecord>,
}

/// Per-call forward options. Train mode draws dropout masks from `rng`;
/// eval mode never touches it.
pub struct ForwardOpts<'r> {
    pub mode: Mode,
    pub rng: &'r mut ChaCha20Rng,
}

fn check_input(params: &ModelParams, x: &Array3<f64>) -> Result<()> {
    let dims = &params.dims;
    let (_, c, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if c != dims.n_channels() || w != dims.window {
        return Err(Error::shape(
            "extract_features input",
            format!("(n, {}, {})", dims.n_channels(), dims.window),
            format!("{:?}", x.shape()),
        ));
    }
    Ok(())
}

/// Per-sensor stem convolutions (k=3, stride 1, same padding, ReLU),
/// stacked along a new sensor axis: `(n, 32, W, S)`.
fn sensor_stems(
    g: &mut Graph,
    params: &ModelParams,
    bound: &Bound,
    x: &Array3<f64>,
) -> Result<Var> {
    let dims = &params.dims;
    let mut parts = Vec::with_capacity(dims.n_sensors());
    let mut offset = 0usize;
    for (i, (_, ch)) in dims.sensors.iter().enumerate() {
        let xs = x
            .slice(ndarray::s![.., offset..offset + ch, ..])
            .to_owned()
            .into_dyn();
        offset += ch;
        let xv = g.constant(xs);
        let w = bound.var(&format!("extractor.stem.{i}.weight"));
        let b = bound.var(&format!("extractor.stem.{i}.bias"));
        let y = conv1d(g, xv, w, Some(b), 1, 1);
        parts.push(g.relu(y));
    }
    Ok(g.stack(&parts, 3))
}

/// One spatial attention block: 1x1 Q/K/V projections, per-(time, head)
/// scaled dot-product attention across the sensor axis with drop-connect
/// renormalization, batch norm, dropout, a residual around the attention
/// sub-block, then a stride-2 temporal convolution doubling the channels.
#[allow(clippy::too_many_arguments)]
fn spatial_attention_block(
    g: &mut Graph,
    params: &ModelParams,
    bound: &Bound,
    block: usize,
    x: Var,
    opts: &mut ForwardOpts,
    updates: &mut BnUpdates,
    attention_out: &mut Vec<AttentionRecord>,
) -> Result<Var> {
    let cfg = &params.config;
    let shape = g.shape(x).to_vec();
    let (n, c, t, s) = (shape[0], shape[1], shape[2], shape[3]);
    if t % 2 != 0 {
        return Err(Error::BadWindow {
            window: t,
            reason: format!("block {block}: temporal stride-2 needs even length"),
        });
    }
    let heads = cfg.heads;
    let dh = c / heads;
    let pre = format!("extractor.block{block}");

    let x2 = g.reshape(x, &[n, c, t * s]);
    let wq = bound.var(&format!("{pre}.q.weight"));
    let bq = bound.var(&format!("{pre}.q.bias"));
    let wk = bound.var(&format!("{pre}.k.weight"));
    let wv = bound.var(&format!("{pre}.v.weight"));
    let q0 = g.mat_batch(wq, x2);
    let bq3 = g.reshape(bq, &[1, c, 1]);
    let q0 = g.add(q0, bq3);
    let k0 = g.mat_batch(wk, x2);
    let v0 = g.mat_batch(wv, x2);

    // (n, C, T*S) -> (n*H*T, S, Dh)
    let to_heads = |g: &mut Graph, v: Var| {
        let v = g.reshape(v, &[n, heads, dh, t, s]);
        let v = g.permute(v, &[0, 1, 3, 4, 2]);
        g.reshape(v, &[n * heads * t, s, dh])
    };
    let q = to_heads(g, q0);
    let k = to_heads(g, k0);
    let v = to_heads(g, v0);

    let kt = g.permute(k, &[0, 2, 1]);
    let scores_raw = g.batch_matmul(q, kt);
    let scores = g.scale(scores_raw, 1.0 / (dh as f64).sqrt());
    let attn = g.softmax(scores, 2);
    let attn_softmax_value = if cfg.collect_attention {
        Some(g.value(attn).clone())
    } else {
        None
    };

    let attn = if opts.mode == Mode::Train && cfg.drop_connect > 0.0 {
        // Zero attention entries, renormalize rows to sum 1. Rows whose
        // surviving mass is (numerically) zero fall back to uniform 1/S;
        // the threshold keeps the renormalization gradient bounded.
        const MIN_ROW_MASS: f64 = 1e-6;
        let gdim = n * heads * t;
        let keep = 1.0 - cfg.drop_connect;
        let mask_vals: Vec<f64> = (0..gdim * s * s)
            .map(|_| if opts.rng.gen::<f64>() < keep { 1.0 } else { 0.0 })
            .collect();
        let mask = g.constant(Arr::from_shape_vec(IxDyn(&[gdim, s, s]), mask_vals).unwrap());
        let masked = g.mul(attn, mask);
        let rowsum = g.sum_axes_keep(masked, &[2]);
        let rs_vals = g.value(rowsum).clone();
        let dropped = rs_vals.mapv(|v| if v <= MIN_ROW_MASS { 1.0 } else { 0.0 });
        let kept = dropped.mapv(|v| 1.0 - v);
        let uniform: Arr = dropped
            .clone()
            .into_shape(IxDyn(&[gdim, s, 1]))
            .unwrap()
            .broadcast(IxDyn(&[gdim, s, s]))
            .unwrap()
            .mapv(|v| v / s as f64);
        let kept_c = g.constant(kept);
        let dropped_c = g.constant(dropped);
        let survivors = g.mul(masked, kept_c);
        let rowsum_kept = g.mul(rowsum, kept_c);
        let denom = g.add(rowsum_kept, dropped_c);
        let renormed = g.div(survivors, denom);
        let uniform_c = g.constant(uniform);
        g.add(renormed, uniform_c)
    } else {
        attn
    };
    if let Some(softmax) = attn_softmax_value {
        attention_out.push(AttentionRecord {
            block,
            softmax,
            renormalized: g.value(attn).clone(),
        });
    }
    let attn = dropout(g, attn, cfg.attention_dropout, opts.mode, opts.rng);

    let agg = g.batch_matmul(attn, v);
    let agg = g.reshape(agg, &[n, heads, t, s, dh]);
    let agg = g.permute(agg, &[0, 1, 4, 2, 3]);
    let agg = g.reshape(agg, &[n, c, t, s]);

    let normed = batch_norm(g, bound, params, &format!("{pre}.bn"), agg, opts.mode, updates);
    let dropped = dropout(g, normed, cfg.feature_dropout, opts.mode, opts.rng);
    let residual = g.add(dropped, x);

    // Temporal stride-2 convolution, channels c -> 2c.
    let kernel = cfg.temporal_kernel;
    let perm = g.permute(residual, &[0, 3, 1, 2]);
    let flat = g.reshape(perm, &[n * s, c, t]);
    let w = bound.var(&format!("{pre}.temporal.weight"));
    let b = bound.var(&format!("{pre}.temporal.bias"));
    let y = conv1d(g, flat, w, Some(b), 2, kernel / 2);
    let c_out = g.shape(y)[1];
    let y = g.reshape(y, &[n, s, c_out, t / 2]);
    Ok(g.permute(y, &[0, 2, 3, 1]))
}

/// Full extractor: stems, positional encoding, three attention blocks
/// (32 -> 64 -> 128 -> 256 channels, time W -> W/8), then the mean over the
/// sensor axis. Output `(n, 256, W/8)`.
pub fn extract_features(
    g: &mut Graph,
    params: &ModelParams,
    bound: &Bound,
    x: &Array3<f64>,
    opts: &mut ForwardOpts,
    updates: &mut BnUpdates,
) -> Result<ExtractOutput> {
    check_input(params, x)?;
    let mut attention = Vec::new();
    let stems = sensor_stems(g, params, bound, x)?;
    let with_pe = if params.config.positional_encoding {
        let pe = positional_encoding(params.config.stem_channels, params.dims.window);
        let mut shape = vec![1];
        shape.extend_from_slice(pe.shape());
        shape.push(1);
        let pe = g.constant(pe.into_shape(IxDyn(&shape)).unwrap());
        g.add(stems, pe)
    } else {
        stems
    };
    let mut h = with_pe;
    for block in 0..3 {
        h = spatial_attention_block(g, params, bound, block, h, opts, updates, &mut attention)?;
    }
    let pooled = mean_axis(g, h, 3);
    Ok(ExtractOutput {
        embedding: pooled,
        attention,
    })
}

/// Activity head: mean over time then one fully connected map to `n_a`
/// logits (losses apply the softmax).
pub fn classify_activity(g: &mut Graph, bound: &Bound, embedding: Var) -> Var {
    let pooled = mean_axis(g, embedding, 2);
    let w = bound.var("classifier.fc.weight");
    let b = bound.var("classifier.fc.bias");
    linear(g, pooled, w, b)
}

/// Subject head: three stride-2 conv blocks (BN, LeakyReLU, dropout;
/// channels 32, 64, 128), flatten, FC to 10 with ReLU, FC to the domain
/// count.
pub fn discriminate_subject(
    g: &mut Graph,
    params: &ModelParams,
    bound: &Bound,
    embedding: Var,
    opts: &mut ForwardOpts,
    updates: &mut BnUpdates,
) -> Var {
    let cfg = &params.config;
    let mut h = embedding;
    for i in 0..3 {
        let w = bound.var(&format!("discriminator.conv{i}.weight"));
        let conv = conv1d(g, h, w, None, 2, 2);
        let normed = batch_norm(
            g,
            bound,
            params,
            &format!("discriminator.conv{i}.bn"),
            conv,
            opts.mode,
            updates,
        );
        let act = g.leaky_relu(normed, cfg.leaky_slope);
        h = dropout(g, act, cfg.discriminator_dropout, opts.mode, opts.rng);
    }
    let shape = g.shape(h).to_vec();
    let flat = g.reshape(h, &[shape[0], shape[1] * shape[2]]);
    let w1 = bound.var("discriminator.fc1.weight");
    let b1 = bound.var("discriminator.fc1.bias");
    let fc1 = linear(g, flat, w1, b1);
    let fc1 = g.relu(fc1);
    let w2 = bound.var("discriminator.fc2.weight");
    let b2 = bound.var("discriminator.fc2.bias");
    linear(g, fc1, w2, b2)
}

/// Flatten an embedding to per-window vectors by mean over time: `(n, 256)`.
/// This is the representation the MMD terms and subject probes operate on.
pub fn embedding_vectors(g: &mut Graph, embedding: Var) -> Var {
    mean_axis(g, embedding, 2)
}

/// Eval-mode argmax activity predictions over a whole window set, batched.
pub fn predict_activities(
    params: &ModelParams,
    x: &Array3<f64>,
    batch_size: usize,
) -> Result<Vec<usize>> {
    let n = x.shape()[0];
    let mut out = Vec::with_capacity(n);
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    for start in (0..n).step_by(batch_size.max(1)) {
        let end = (start + batch_size).min(n);
        let xb = x.slice(ndarray::s![start..end, .., ..]).to_owned();
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, params, &[]);
        let mut opts = ForwardOpts {
            mode: Mode::Eval,
            rng: &mut rng,
        };
        let mut updates = BnUpdates::default();
        let feats = extract_features(&mut g, params, &bound, &xb, &mut opts, &mut updates)?;
        let logits = classify_activity(&mut g, &bound, feats.embedding);
        let vals = g.value(logits);
        if let Some(&bad) = vals.iter().find(|v| !v.is_finite()) {
            return Err(crate::error::Error::NonFiniteLoss {
                context: "prediction logits".into(),
                value: bad,
            });
        }
        for row in vals.rows() {
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            out.push(pred);
        }
    }
    Ok(out)
}

/// Eval-mode mean-pooled embedding vectors `(n, 256)` for a window set.
pub fn embed_mean_vectors(
    params: &ModelParams,
    x: &Array3<f64>,
    batch_size: usize,
) -> Result<ndarray::Array2<f64>> {
    let n = x.shape()[0];
    let d = params.config.stem_channels * 8;
    let mut out = ndarray::Array2::<f64>::zeros((n, d));
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    for start in (0..n).step_by(batch_size.max(1)) {
        let end = (start + batch_size).min(n);
        let xb = x.slice(ndarray::s![start..end, .., ..]).to_owned();
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, params, &[]);
        let mut opts = ForwardOpts {
            mode: Mode::Eval,
            rng: &mut rng,
        };
        let mut updates = BnUpdates::default();
        let feats = extract_features(&mut g, params, &bound, &xb, &mut opts, &mut updates)?;
        let vecs = embedding_vectors(&mut g, feats.embedding);
        let vals = g.value(vecs);
        for (local, row) in vals.rows().into_iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                out[[start + local, j]] = v;
            }
        }
    }
    Ok(out)
}

/// Eval-mode activity logits with a fixed parameter set (the teacher side of
/// the distillation loss).
pub fn teacher_logits(params: &ModelParams, x: &Array3<f64>) -> Result<ndarray::Array2<f64>> {
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, params, &[]);
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let mut opts = ForwardOpts {
        mode: Mode::Eval,
        rng: &mut rng,
    };
    let mut updates = BnUpdates::default();
    let feats = extract_features(&mut g, params, &bound, x, &mut opts, &mut updates)?;
    let logits = classify_activity(&mut g, &bound, feats.embedding);
    Ok(g.value(logits)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("logits are 2-d"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelDims, Net};
    use rand::SeedableRng;

    fn setup(w: usize, sensors: Vec<usize>, n_a: usize, n_dom: usize) -> (ModelParams, Array3<f64>) {
        let dims = ModelDims {
            window: w,
            sensors: sensors.iter().enumerate().map(|(i, &c)| (format!("s{i}"), c)).collect(),
            n_activities: n_a,
            n_domains: n_dom,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let params = ModelParams::init(dims.clone(), ModelConfig::default(), &mut rng).unwrap();
        let x = Array3::from_shape_fn((3, dims.n_channels(), w), |(b, c, t)| {
            ((b * 100 + c * 10 + t) as f64 * 0.17).sin()
        });
        (params, x)
    }

    fn forward_all(params: &ModelParams, x: &Array3<f64>, mode: Mode, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, params, &[]);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut opts = ForwardOpts { mode, rng: &mut rng };
        let mut updates = BnUpdates::default();
        let out = extract_features(&mut g, params, &bound, x, &mut opts, &mut updates).unwrap();
        let logits = classify_activity(&mut g, &bound, out.embedding);
        let d = discriminate_subject(&mut g, params, &bound, out.embedding, &mut opts, &mut updates);
        (
            g.value(out.embedding).iter().cloned().collect(),
            g.value(logits).iter().cloned().collect(),
            g.value(d).iter().cloned().collect(),
        )
    }

    #[test]
    fn output_shapes_follow_dims() {
        for (w, sensors, n_a, n_dom) in [
            (64usize, vec![3, 2, 4], 5usize, 4usize),
            (120, vec![2, 2], 7, 3),
        ] {
            let (params, x) = setup(w, sensors.clone(), n_a, n_dom);
            let mut g = Graph::new();
            let bound = Bound::new(&mut g, &params, &[]);
            let mut rng = ChaCha20Rng::seed_from_u64(0);
            let mut opts = ForwardOpts { mode: Mode::Eval, rng: &mut rng };
            let mut updates = BnUpdates::default();
            let out = extract_features(&mut g, &params, &bound, &x, &mut opts, &mut updates).unwrap();
            assert_eq!(g.shape(out.embedding), &[3, 256, w / 8]);
            let logits = classify_activity(&mut g, &bound, out.embedding);
            assert_eq!(g.shape(logits), &[3, n_a]);
            let d = discriminate_subject(&mut g, &params, &bound, out.embedding, &mut opts, &mut updates);
            assert_eq!(g.shape(d), &[3, n_dom]);
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (params, x) = setup(64, vec![3], 4, 3);
        let a = forward_all(&params, &x, Mode::Eval, 1);
        let b = forward_all(&params, &x, Mode::Eval, 99);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn train_mode_uses_rng() {
        let (params, x) = setup(64, vec![3], 4, 3);
        let a = forward_all(&params, &x, Mode::Train, 1);
        let b = forward_all(&params, &x, Mode::Train, 2);
        assert_ne!(a.0, b.0);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (mut params, x) = setup(64, vec![2, 2, 1, 3], 4, 3);
        params.config.collect_attention = true;
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &params, &[]);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut opts = ForwardOpts { mode: Mode::Train, rng: &mut rng };
        let mut updates = BnUpdates::default();
        let out = extract_features(&mut g, &params, &bound, &x, &mut opts, &mut updates).unwrap();
        assert_eq!(out.attention.len(), 3);
        for rec in &out.attention {
            for mat in [&rec.softmax, &rec.renormalized] {
                let s = mat.shape()[2];
                for row in mat.rows() {
                    let sum: f64 = row.sum();
                    assert!((sum - 1.0).abs() < 1e-6, "row sum {sum}");
                    assert!(row.iter().all(|&v| v >= 0.0));
                }
                assert_eq!(mat.shape()[1], s);
            }
        }
    }

    #[test]
    fn single_sensor_attention_is_identity() {
        let (mut params, x) = setup(64, vec![4], 3, 3);
        params.config.collect_attention = true;
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &params, &[]);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut opts = ForwardOpts { mode: Mode::Train, rng: &mut rng };
        let mut updates = BnUpdates::default();
        let out = extract_features(&mut g, &params, &bound, &x, &mut opts, &mut updates).unwrap();
        for rec in &out.attention {
            assert!(rec.renormalized.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_stem_weights_give_positional_encoding_only() {
        let (mut params, x) = setup(64, vec![2], 3, 3);
        for i in 0..1 {
            let widx = params.idx(&format!("extractor.stem.{i}.weight"));
            let zero = Arr::zeros(IxDyn(params.value_at(widx).shape()));
            params.set_at(widx, zero);
        }
        params.config.positional_encoding = false;
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &params, &[]);
        let stems = sensor_stems(&mut g, &params, &bound, &x).unwrap();
        assert!(g.value(stems).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sensor_permutation_equivariance_post_pooling() {
        // With shared stems, no positional encoding, and eval mode, the
        // embedding is invariant to sensor order (mean over S).
        let dims = ModelDims {
            window: 64,
            sensors: vec![("a".into(), 2), ("b".into(), 2)],
            n_activities: 3,
            n_domains: 3,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut config = ModelConfig::default();
        config.positional_encoding = false;
        let mut params = ModelParams::init(dims, config, &mut rng).unwrap();
        // Tie the two stems.
        let w0 = params.value("extractor.stem.0.weight").clone();
        let b0 = params.value("extractor.stem.0.bias").clone();
        let w1_idx = params.idx("extractor.stem.1.weight");
        let b1_idx = params.idx("extractor.stem.1.bias");
        params.set_at(w1_idx, w0);
        params.set_at(b1_idx, b0);

        let x = Array3::from_shape_fn((2, 4, 64), |(b, c, t)| ((b * 31 + c * 7 + t) as f64 * 0.23).cos());
        let mut swapped = x.clone();
        for b in 0..2 {
            for t in 0..64 {
                swapped[[b, 0, t]] = x[[b, 2, t]];
                swapped[[b, 1, t]] = x[[b, 3, t]];
                swapped[[b, 2, t]] = x[[b, 0, t]];
                swapped[[b, 3, t]] = x[[b, 1, t]];
            }
        }
        let run = |inp: &Array3<f64>| {
            let mut g = Graph::new();
            let bound = Bound::new(&mut g, &params, &[]);
            let mut rng = ChaCha20Rng::seed_from_u64(0);
            let mut opts = ForwardOpts { mode: Mode::Eval, rng: &mut rng };
            let mut updates = BnUpdates::default();
            let out = extract_features(&mut g, &params, &bound, inp, &mut opts, &mut updates).unwrap();
            g.value(out.embedding).clone()
        };
        let e1 = run(&x);
        let e2 = run(&swapped);
        let max_diff = e1
            .iter()
            .zip(e2.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-9, "embedding changed under sensor permutation: {max_diff}");
    }

    #[test]
    fn gradient_reaches_every_parameter() {
        let (params, x) = setup(64, vec![2, 3], 4, 3);
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &params, &[Net::Extractor, Net::Classifier, Net::Discriminator]);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut opts = ForwardOpts { mode: Mode::Train, rng: &mut rng };
        let mut updates = BnUpdates::default();
        let out = extract_features(&mut g, &params, &bound, &x, &mut opts, &mut updates).unwrap();
        let logits = classify_activity(&mut g, &bound, out.embedding);
        let d = discriminate_subject(&mut g, &params, &bound, out.embedding, &mut opts, &mut updates);
        // A generic loss touching both heads.
        let l1 = g.square(logits);
        let l1 = g.sum_all(l1);
        let l2 = g.square(d);
        let l2 = g.sum_all(l2);
        let loss = g.add(l1, l2);
        let grads = g.backward(loss);
        for (idx, var) in bound.slots() {
            let entry = &params.entries[idx];
            if entry.kind != crate::model::TensorKind::Trainable {
                continue;
            }
            let grad = grads
                .get(var)
                .unwrap_or_else(|| panic!("no gradient for {}", entry.name));
            let norm: f64 = grad.iter().map(|v| v * v).sum();
            assert!(norm > 0.0, "dead parameter {}", entry.name);
        }
    }
}
