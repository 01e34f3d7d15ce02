//! Tape operations: forward constructors on [`Graph`] and the reverse-mode
//! rules in [`Graph::backprop_node`].

use super::{accumulate, reduce_to_shape, Arr, Graph, Var};
use ndarray::{Axis, Ix2, Ix3, IxDyn};

/// Recorded operation of a tape node; parents are earlier [`Var`]s.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Recip(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Matmul(Var, Var),
    BatchMatmul(Var, Var),
    MatBatch(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    SumAxesKeep(Var, Vec<usize>),
    MeanAxesKeep(Var, Vec<usize>),
    SumAll(Var),
    MeanAll(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Im2col {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
}

fn standardize(a: Arr) -> Arr {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn broadcast_to(a: &Arr, shape: &[usize]) -> Arr {
    a.broadcast(IxDyn(shape))
        .expect("broadcast_to: incompatible shapes")
        .to_owned()
}

fn mm2(a: &Arr, b: &Arr) -> Arr {
    let a2 = a.view().into_dimensionality::<Ix2>().expect("lhs not 2-d");
    let b2 = b.view().into_dimensionality::<Ix2>().expect("rhs not 2-d");
    a2.dot(&b2).into_dyn()
}

/// `C += op(A) * op(B)` on contiguous row-major slices. The general matmul
/// path has too much per-call overhead for the many tiny per-(time, head)
/// attention products, so batched ops use this directly.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    a_trans: bool,
    b_trans: bool,
) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                let av = if a_trans { a[l * m + i] } else { a[i * k + l] };
                let bv = if b_trans { b[j * k + l] } else { b[l * n + j] };
                acc += av * bv;
            }
            c[i * n + j] += acc;
        }
    }
}

/// `(B,K,N)` tensor as a `(K, B*N)` matrix (batch folded into columns).
fn fold_batch_cols(x: &Arr) -> ndarray::Array2<f64> {
    let s = x.shape();
    let (bs, k, n) = (s[0], s[1], s[2]);
    let src = x.as_slice().expect("standard layout");
    let mut out = vec![0.0; k * bs * n];
    for b in 0..bs {
        for row in 0..k {
            let src_off = (b * k + row) * n;
            let dst_off = row * bs * n + b * n;
            out[dst_off..dst_off + n].copy_from_slice(&src[src_off..src_off + n]);
        }
    }
    ndarray::Array2::from_shape_vec((k, bs * n), out).unwrap()
}

/// Inverse of [`fold_batch_cols`] applied to an `(M, B*N)` product.
fn unfold_batch_cols(prod: &ndarray::Array2<f64>, bs: usize, m: usize, n: usize) -> Arr {
    let src = prod.as_slice().expect("standard layout");
    let mut out = vec![0.0; bs * m * n];
    for b in 0..bs {
        for row in 0..m {
            let src_off = row * bs * n + b * n;
            let dst_off = (b * m + row) * n;
            out[dst_off..dst_off + n].copy_from_slice(&src[src_off..src_off + n]);
        }
    }
    Arr::from_shape_vec(IxDyn(&[bs, m, n]), out).unwrap()
}

struct Batched3<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
}

impl<'a> Batched3<'a> {
    fn of(a: &'a Arr) -> Self {
        let s = a.shape();
        Batched3 {
            data: a.as_slice().expect("standard layout"),
            rows: s[1],
            cols: s[2],
        }
    }

    fn batch(&self, i: usize) -> &'a [f64] {
        let len = self.rows * self.cols;
        &self.data[i * len..(i + 1) * len]
    }
}

impl Graph {
    fn unary_requires(&self, a: Var) -> bool {
        self.requires(a)
    }

    fn binary_requires(&self, a: Var, b: Var) -> bool {
        self.requires(a) || self.requires(b)
    }

    /// Elementwise `a + b`; `b` may broadcast to `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let rq = self.binary_requires(a, b);
        self.push(standardize(v), Op::Add(a, b), rq)
    }

    /// Elementwise `a - b`; `b` may broadcast to `a`'s shape.
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let rq = self.binary_requires(a, b);
        self.push(standardize(v), Op::Sub(a, b), rq)
    }

    /// Elementwise `a * b`; `b` may broadcast to `a`'s shape.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let rq = self.binary_requires(a, b);
        self.push(standardize(v), Op::Mul(a, b), rq)
    }

    /// Elementwise `a / b`; `b` may broadcast to `a`'s shape.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        let rq = self.binary_requires(a, b);
        self.push(standardize(v), Op::Div(a, b), rq)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        let rq = self.unary_requires(a);
        self.push(v, Op::Neg(a), rq)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| c * x);
        let rq = self.unary_requires(a);
        self.push(v, Op::Scale(a, c), rq)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x + c);
        let rq = self.unary_requires(a);
        self.push(v, Op::AddScalar(a, c), rq)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / x);
        let rq = self.unary_requires(a);
        self.push(v, Op::Recip(a), rq)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        let rq = self.unary_requires(a);
        self.push(v, Op::Exp(a), rq)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        let rq = self.unary_requires(a);
        self.push(v, Op::Ln(a), rq)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sqrt);
        let rq = self.unary_requires(a);
        self.push(v, Op::Sqrt(a), rq)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        let rq = self.unary_requires(a);
        self.push(v, Op::Square(a), rq)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rq = self.unary_requires(a);
        self.push(v, Op::Relu(a), rq)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let rq = self.unary_requires(a);
        self.push(v, Op::LeakyRelu(a, slope), rq)
    }

    /// `(M,K) @ (K,N) -> (M,N)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = mm2(self.value(a), self.value(b));
        let rq = self.binary_requires(a, b);
        self.push(v, Op::Matmul(a, b), rq)
    }

    /// `(B,M,K) @ (B,K,N) -> (B,M,N)`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Var {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert_eq!(ashape[0], bshape[0], "batch size mismatch");
        assert_eq!(ashape[2], bshape[1], "inner dim mismatch");
        let (bs, m, k, n) = (ashape[0], ashape[1], ashape[2], bshape[2]);
        let mut out = vec![0.0; bs * m * n];
        let ab = Batched3::of(self.value(a));
        let bb = Batched3::of(self.value(b));
        for i in 0..bs {
            gemm_acc(ab.batch(i), bb.batch(i), &mut out[i * m * n..(i + 1) * m * n], m, k, n, false, false);
        }
        let out = Arr::from_shape_vec(IxDyn(&[bs, m, n]), out).unwrap();
        let rq = self.binary_requires(a, b);
        self.push(out, Op::BatchMatmul(a, b), rq)
    }

    /// `(M,K) @ (B,K,N) -> (B,M,N)`: one matrix applied across a batch,
    /// computed as a single `(M,K) @ (K, B*N)` product.
    pub fn mat_batch(&mut self, w: Var, x: Var) -> Var {
        let wshape = self.shape(w).to_vec();
        let xshape = self.shape(x).to_vec();
        let (m, k) = (wshape[0], wshape[1]);
        let (bs, n) = (xshape[0], xshape[2]);
        assert_eq!(xshape[1], k, "inner dim mismatch");
        let folded = fold_batch_cols(self.value(x)); // (K, B*N)
        let wv = self.value(w).view().into_dimensionality::<Ix2>().unwrap();
        let prod = wv.dot(&folded); // (M, B*N)
        let out = unfold_batch_cols(&prod, bs, m, n);
        let rq = self.binary_requires(w, x);
        self.push(out, Op::MatBatch(w, x), rq)
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        let v = standardize(self.value(a).clone().permuted_axes(IxDyn(axes)));
        let rq = self.unary_requires(a);
        self.push(v, Op::Permute(a, axes.to_vec()), rq)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value(a)
            .clone()
            .into_shape(IxDyn(shape))
            .expect("reshape: incompatible length or layout");
        let rq = self.unary_requires(a);
        self.push(v, Op::Reshape(a), rq)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat: shape mismatch");
        let rq = parts.iter().any(|p| self.requires(*p));
        self.push(standardize(v), Op::Concat(parts.to_vec(), axis), rq)
    }

    /// Stack along a fresh axis at `axis`.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Var {
        let expanded: Vec<Var> = parts
            .iter()
            .map(|p| {
                let mut shape = self.shape(*p).to_vec();
                shape.insert(axis, 1);
                self.reshape(*p, &shape)
            })
            .collect();
        self.concat(&expanded, axis)
    }

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum_axes_keep(&mut self, a: Var, axes: &[usize]) -> Var {
        let mut v = self.value(a).clone();
        for &ax in axes {
            let summed = v.sum_axis(Axis(ax));
            v = summed.insert_axis(Axis(ax));
        }
        let rq = self.unary_requires(a);
        self.push(standardize(v), Op::SumAxesKeep(a, axes.to_vec()), rq)
    }

    /// Mean over `axes`, keeping them as size-1 dims.
    pub fn mean_axes_keep(&mut self, a: Var, axes: &[usize]) -> Var {
        let count: usize = axes.iter().map(|&ax| self.shape(a)[ax]).product();
        let mut v = self.value(a).clone();
        for &ax in axes {
            let summed = v.sum_axis(Axis(ax));
            v = summed.insert_axis(Axis(ax));
        }
        v.mapv_inplace(|x| x / count as f64);
        let rq = self.unary_requires(a);
        self.push(standardize(v), Op::MeanAxesKeep(a, axes.to_vec()), rq)
    }

    /// Sum of all entries -> 0-d tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Arr::from_elem(IxDyn(&[]), self.value(a).sum());
        let rq = self.unary_requires(a);
        self.push(v, Op::SumAll(a), rq)
    }

    /// Mean of all entries -> 0-d tensor.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let v = Arr::from_elem(IxDyn(&[]), self.value(a).sum() / n as f64);
        let rq = self.unary_requires(a);
        self.push(v, Op::MeanAll(a), rq)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Var {
        let mut v = self.value(a).clone();
        for mut lane in v.lanes_mut(Axis(axis)) {
            let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            lane.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = lane.sum();
            lane.mapv_inplace(|x| x / sum);
        }
        let rq = self.unary_requires(a);
        self.push(v, Op::Softmax(a, axis), rq)
    }

    /// Numerically stable log-softmax along `axis`.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Var {
        let mut v = self.value(a).clone();
        for mut lane in v.lanes_mut(Axis(axis)) {
            let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = lane.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
            lane.mapv_inplace(|x| x - lse);
        }
        let rq = self.unary_requires(a);
        self.push(v, Op::LogSoftmax(a, axis), rq)
    }

    /// Unfold `(B,C,T)` into convolution columns `(B, C*kernel, T_out)` with
    /// zero padding; `T_out = (T + 2*pad - kernel)/stride + 1`.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value(x).view().into_dimensionality::<Ix3>().expect("im2col input not 3-d");
        let (b, c, t) = xv.dim();
        assert!(t + 2 * pad >= kernel, "kernel larger than padded input");
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let src_all = self.value(x).as_slice().expect("standard layout");
        let mut cols = vec![0.0; b * c * kernel * t_out];
        for bi in 0..b {
            for ci in 0..c {
                let src = &src_all[(bi * c + ci) * t..(bi * c + ci + 1) * t];
                for j in 0..kernel {
                    let row = ci * kernel + j;
                    let dst = &mut cols[(bi * c * kernel + row) * t_out..(bi * c * kernel + row + 1) * t_out];
                    for (to, slot) in dst.iter_mut().enumerate() {
                        let pos = (to * stride + j) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < t {
                            *slot = src[pos as usize];
                        }
                    }
                }
            }
        }
        let cols = Arr::from_shape_vec(IxDyn(&[b, c * kernel, t_out]), cols).unwrap();
        let rq = self.unary_requires(x);
        self.push(
            cols,
            Op::Im2col {
                x,
                kernel,
                stride,
                pad,
            },
            rq,
        )
    }

    pub(crate) fn backprop_node(&self, idx: usize, grad: &Arr, grads: &mut [Option<Arr>]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.requires(a) {
                    accumulate(grads, a, grad.clone());
                }
                if self.requires(b) {
                    accumulate(grads, b, reduce_to_shape(grad, self.shape(b)));
                }
            }
            Op::Sub(a, b) => {
                if self.requires(a) {
                    accumulate(grads, a, grad.clone());
                }
                if self.requires(b) {
                    let d = grad.mapv(|x| -x);
                    accumulate(grads, b, reduce_to_shape(&d, self.shape(b)));
                }
            }
            Op::Mul(a, b) => {
                if self.requires(a) {
                    let bb = broadcast_to(self.value(b), self.shape(a));
                    accumulate(grads, a, grad * &bb);
                }
                if self.requires(b) {
                    let d = grad * self.value(a);
                    accumulate(grads, b, reduce_to_shape(&d, self.shape(b)));
                }
            }
            Op::Div(a, b) => {
                if self.requires(a) {
                    let bb = broadcast_to(self.value(b), self.shape(a));
                    accumulate(grads, a, grad / &bb);
                }
                if self.requires(b) {
                    let bb = broadcast_to(self.value(b), self.shape(a));
                    let d = grad * &(self.value(a) / &(&bb * &bb)).mapv(|x| -x);
                    accumulate(grads, b, reduce_to_shape(&d, self.shape(b)));
                }
            }
            Op::Neg(a) => accumulate(grads, a, grad.mapv(|x| -x)),
            Op::Scale(a, c) => accumulate(grads, a, grad.mapv(|x| c * x)),
            Op::AddScalar(a, _) => accumulate(grads, a, grad.clone()),
            Op::Recip(a) => {
                let y = &self.nodes[idx].value;
                accumulate(grads, a, grad * &y.mapv(|x| -x * x));
            }
            Op::Exp(a) => {
                let y = &self.nodes[idx].value;
                accumulate(grads, a, grad * y);
            }
            Op::Ln(a) => accumulate(grads, a, grad / self.value(a)),
            Op::Sqrt(a) => {
                let y = &self.nodes[idx].value;
                accumulate(grads, a, grad * &y.mapv(|x| 0.5 / x));
            }
            Op::Square(a) => {
                accumulate(grads, a, grad * &self.value(a).mapv(|x| 2.0 * x));
            }
            Op::Relu(a) => {
                let mask = self.value(a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                accumulate(grads, a, grad * &mask);
            }
            Op::LeakyRelu(a, slope) => {
                let mask = self.value(a).mapv(|x| if x > 0.0 { 1.0 } else { slope });
                accumulate(grads, a, grad * &mask);
            }
            Op::Matmul(a, b) => {
                let g2 = grad.view().into_dimensionality::<Ix2>().unwrap();
                if self.requires(a) {
                    let bv = self.value(b).view().into_dimensionality::<Ix2>().unwrap();
                    accumulate(grads, a, g2.dot(&bv.t()).into_dyn());
                }
                if self.requires(b) {
                    let av = self.value(a).view().into_dimensionality::<Ix2>().unwrap();
                    accumulate(grads, b, av.t().dot(&g2).into_dyn());
                }
            }
            Op::BatchMatmul(a, b) => {
                let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
                let (bs, m, k, n) = (ashape[0], ashape[1], ashape[2], bshape[2]);
                let gb = Batched3::of(grad);
                if self.requires(a) {
                    // dA_i = G_i @ B_i^T
                    let bb = Batched3::of(self.value(b));
                    let mut da = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        gemm_acc(gb.batch(i), bb.batch(i), &mut da[i * m * k..(i + 1) * m * k], m, n, k, false, true);
                    }
                    accumulate(grads, a, Arr::from_shape_vec(IxDyn(&ashape), da).unwrap());
                }
                if self.requires(b) {
                    // dB_i = A_i^T @ G_i
                    let ab = Batched3::of(self.value(a));
                    let mut db = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        gemm_acc(ab.batch(i), gb.batch(i), &mut db[i * k * n..(i + 1) * k * n], k, m, n, true, false);
                    }
                    accumulate(grads, b, Arr::from_shape_vec(IxDyn(&bshape), db).unwrap());
                }
            }
            Op::MatBatch(w, x) => {
                let xshape = self.shape(x).to_vec();
                let (bs, k, n) = (xshape[0], xshape[1], xshape[2]);
                let g_folded = fold_batch_cols(grad); // (M, B*N)
                if self.requires(w) {
                    // dW = G_folded @ X_folded^T
                    let x_folded = fold_batch_cols(self.value(x));
                    let dw = g_folded.dot(&x_folded.t());
                    accumulate(grads, w, dw.into_dyn());
                }
                if self.requires(x) {
                    // dX_folded = W^T @ G_folded
                    let wv = self.value(w).view().into_dimensionality::<Ix2>().unwrap();
                    let dx = wv.t().dot(&g_folded);
                    accumulate(grads, x, unfold_batch_cols(&dx, bs, k, n));
                }
            }
            Op::Permute(a, axes) => {
                let mut inverse = vec![0usize; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let d = standardize(grad.clone().permuted_axes(IxDyn(&inverse)));
                accumulate(grads, a, d);
            }
            Op::Reshape(a) => {
                let d = grad
                    .clone()
                    .into_shape(IxDyn(self.shape(a)))
                    .expect("reshape backward");
                accumulate(grads, a, d);
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0usize;
                for p in parts {
                    let len = self.shape(p)[axis];
                    let d = grad
                        .slice_axis(Axis(axis), ndarray::Slice::from(offset..offset + len))
                        .to_owned();
                    if self.requires(p) {
                        accumulate(grads, p, standardize(d));
                    }
                    offset += len;
                }
            }
            Op::SumAxesKeep(a, _) => {
                accumulate(grads, a, broadcast_to(grad, self.shape(a)));
            }
            Op::MeanAxesKeep(a, axes) => {
                let count: usize = axes.iter().map(|&ax| self.shape(a)[ax]).product();
                let d = broadcast_to(grad, self.shape(a)).mapv(|x| x / count as f64);
                accumulate(grads, a, d);
            }
            Op::SumAll(a) => {
                let g0 = *grad.iter().next().unwrap();
                accumulate(grads, a, Arr::from_elem(IxDyn(self.shape(a)), g0));
            }
            Op::MeanAll(a) => {
                let n = self.value(a).len() as f64;
                let g0 = *grad.iter().next().unwrap();
                accumulate(grads, a, Arr::from_elem(IxDyn(self.shape(a)), g0 / n));
            }
            Op::Softmax(a, axis) => {
                let y = &self.nodes[idx].value;
                let gy = grad * y;
                let mut dot = gy.clone();
                let summed = dot.sum_axis(Axis(axis));
                dot = summed.insert_axis(Axis(axis));
                let d = &gy - &(y * &broadcast_to(&dot, y.shape()));
                accumulate(grads, a, d);
            }
            Op::LogSoftmax(a, axis) => {
                let p = self.nodes[idx].value.mapv(f64::exp);
                let summed = grad.sum_axis(Axis(axis)).insert_axis(Axis(axis));
                let d = grad - &(&p * &broadcast_to(&summed.into_dyn(), p.shape()));
                accumulate(grads, a, d);
            }
            Op::Im2col {
                x,
                kernel,
                stride,
                pad,
            } => {
                let gshape = grad.shape();
                let (b, t_out) = (gshape[0], gshape[2]);
                let xs = self.shape(x).to_vec();
                let (c, t) = (xs[1], xs[2]);
                let gsrc = grad.as_slice().expect("standard layout");
                let mut dx = vec![0.0; b * c * t];
                for bi in 0..b {
                    for ci in 0..c {
                        let dst = &mut dx[(bi * c + ci) * t..(bi * c + ci + 1) * t];
                        for j in 0..kernel {
                            let row = ci * kernel + j;
                            let gs = &gsrc[(bi * c * kernel + row) * t_out..(bi * c * kernel + row + 1) * t_out];
                            for (to, &gv) in gs.iter().enumerate() {
                                let pos = (to * stride + j) as isize - pad as isize;
                                if pos >= 0 && (pos as usize) < t {
                                    dst[pos as usize] += gv;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, x, Arr::from_shape_vec(IxDyn(&[b, c, t]), dx).unwrap());
            }
        }
    }
}
