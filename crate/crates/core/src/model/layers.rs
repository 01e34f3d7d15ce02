//! Shared layer helpers built from tape primitives.

use super::params::{Bound, BnUpdates};
use super::Mode;
use crate::graph::{Arr, Graph, Var};
use ndarray::{Axis, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// 1-D convolution on `(B, C, T)` via im2col; `weight` is `(C_out, C_in, k)`.
pub fn conv1d(
    g: &mut Graph,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    pad: usize,
) -> Var {
    let wshape = g.shape(weight).to_vec();
    let (c_out, c_in, k) = (wshape[0], wshape[1], wshape[2]);
    let w2 = g.reshape(weight, &[c_out, c_in * k]);
    let cols = g.im2col(x, k, stride, pad);
    let y = g.mat_batch(w2, cols);
    match bias {
        Some(b) => {
            let b3 = g.reshape(b, &[1, c_out, 1]);
            g.add(y, b3)
        }
        None => y,
    }
}

/// Fully connected layer on `(B, in)`: `x @ w^T + b` with `w` of `(out, in)`.
pub fn linear(g: &mut Graph, x: Var, weight: Var, bias: Var) -> Var {
    let wt = g.permute(weight, &[1, 0]);
    let y = g.matmul(x, wt);
    let out = g.shape(bias)[0];
    let b2 = g.reshape(bias, &[1, out]);
    g.add(y, b2)
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over every axis except channel axis 1. In train mode
/// the batch statistics enter the tape (so gradients flow through them) and
/// updated running statistics are queued in `updates`; in eval mode the
/// stored running statistics are used as constants.
pub fn batch_norm(
    g: &mut Graph,
    bound: &Bound,
    params: &super::ModelParams,
    prefix: &str,
    x: Var,
    mode: Mode,
    updates: &mut BnUpdates,
) -> Var {
    let shape = g.shape(x).to_vec();
    let channels = shape[1];
    let mut keep = vec![1usize; shape.len()];
    keep[1] = channels;
    let reduce_axes: Vec<usize> = (0..shape.len()).filter(|&a| a != 1).collect();
    let gamma = bound.var(&format!("{prefix}.gamma"));
    let beta = bound.var(&format!("{prefix}.beta"));
    let gamma_k = g.reshape(gamma, &keep);
    let beta_k = g.reshape(beta, &keep);

    let (centered, denom) = match mode {
        Mode::Train => {
            let mean = g.mean_axes_keep(x, &reduce_axes);
            let centered = g.sub(x, mean);
            let sq = g.square(centered);
            let var = g.mean_axes_keep(sq, &reduce_axes);
            let var_eps = g.add_scalar(var, BN_EPS);
            let denom = g.sqrt(var_eps);

            // Running statistics (unbiased variance), updated off-tape.
            let count: usize = reduce_axes.iter().map(|&a| shape[a]).product();
            let mean_flat = g.value(mean).iter().cloned().collect::<Vec<f64>>();
            let var_flat = g.value(var).iter().cloned().collect::<Vec<f64>>();
            let correction = if count > 1 {
                count as f64 / (count as f64 - 1.0)
            } else {
                1.0
            };
            let rm_idx = params.idx(&format!("{prefix}.running_mean"));
            let rv_idx = params.idx(&format!("{prefix}.running_var"));
            let old_rm = params.value_at(rm_idx);
            let old_rv = params.value_at(rv_idx);
            let new_rm = Arr::from_shape_vec(
                IxDyn(&[channels]),
                old_rm
                    .iter()
                    .zip(&mean_flat)
                    .map(|(&o, &m)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * m)
                    .collect(),
            )
            .unwrap();
            let new_rv = Arr::from_shape_vec(
                IxDyn(&[channels]),
                old_rv
                    .iter()
                    .zip(&var_flat)
                    .map(|(&o, &v)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * v * correction)
                    .collect(),
            )
            .unwrap();
            updates.push(rm_idx, new_rm);
            updates.push(rv_idx, new_rv);
            (centered, denom)
        }
        Mode::Eval => {
            let rm = params.value(&format!("{prefix}.running_mean")).clone();
            let rv = params.value(&format!("{prefix}.running_var")).clone();
            let rm_k = g.constant(rm.into_shape(IxDyn(&keep)).unwrap());
            let denom_arr = rv.mapv(|v| (v + BN_EPS).sqrt());
            let denom = g.constant(denom_arr.into_shape(IxDyn(&keep)).unwrap());
            let centered = g.sub(x, rm_k);
            (centered, denom)
        }
    };
    let normed = g.div(centered, denom);
    let scaled = g.mul(normed, gamma_k);
    g.add(scaled, beta_k)
}

/// Inverted dropout: in train mode zero entries with probability `rate` and
/// scale survivors by `1/(1-rate)`; identity in eval mode or at rate 0.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, mode: Mode, rng: &mut ChaCha20Rng) -> Var {
    if mode == Mode::Eval || rate == 0.0 {
        return x;
    }
    let keep = 1.0 - rate;
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let vals: Vec<f64> = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = g.constant(Arr::from_shape_vec(IxDyn(&shape), vals).unwrap());
    g.mul(x, mask)
}

/// Mean over one axis, dropping it.
pub fn mean_axis(g: &mut Graph, x: Var, axis: usize) -> Var {
    let kept = g.mean_axes_keep(x, &[axis]);
    let mut shape = g.shape(kept).to_vec();
    shape.remove(axis);
    g.reshape(kept, &shape)
}

/// Sinusoidal positional encoding `(channels, time)`, shared across sensors.
pub fn positional_encoding(channels: usize, time: usize) -> Arr {
    let mut pe = ndarray::Array2::<f64>::zeros((channels, time));
    for c in 0..channels {
        let pair = (c / 2) as f64;
        let rate = 1.0 / 10000f64.powf(2.0 * pair / channels as f64);
        for (t, mut col) in pe.axis_iter_mut(Axis(1)).enumerate() {
            let angle = t as f64 * rate;
            col[c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe.into_dyn()
}
