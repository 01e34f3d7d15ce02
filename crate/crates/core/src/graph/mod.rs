//! Reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! A [`Graph`] is a tape of eagerly-evaluated nodes. Building an op computes
//! its value immediately and records enough context to run the backward pass
//! later. [`Graph::backward`] walks the tape in reverse and accumulates
//! gradients for every node on a path to a leaf created with
//! [`Graph::leaf`]. Nodes created with [`Graph::constant`] never receive
//! gradients, which is how frozen teacher outputs, dropout masks, and labels
//! enter the graph.
//!
//! One graph instance belongs to one logical training step; graphs are cheap
//! to create and are dropped after the gradients are read.

mod ops;
pub mod gradcheck;

pub use ops::Op;

use ndarray::{ArrayD, IxDyn};

/// Dynamic-rank f64 tensor, the only value type flowing through the tape.
pub type Arr = ArrayD<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node {
    pub value: Arr,
    pub op: Op,
    pub requires_grad: bool,
}

/// Eager autodiff tape.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Arr>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, if `v` required one.
    pub fn get(&self, v: Var) -> Option<&Arr> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of the loss w.r.t. `v`; panics when `v` was a constant.
    pub fn wrt(&self, v: Var) -> &Arr {
        self.get(v).expect("no gradient recorded for this var")
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a tensor that will receive a gradient.
    pub fn leaf(&mut self, value: Arr) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Insert a tensor that never receives a gradient.
    pub fn constant(&mut self, value: Arr) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Scalar constant as a 0-d tensor.
    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), value))
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 0-d (or single-element) node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.len(), 1, "scalar_value on non-scalar node");
        *a.iter().next().expect("empty tensor")
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn push(&mut self, value: Arr, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reverse pass from `loss` (any shape; seeded with ones).
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Arr>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Arr::ones(self.nodes[loss.0].value.raw_dim()));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &grad, &mut grads);
            grads[idx] = Some(grad);
        }
        Gradients { grads }
    }
}

/// Accumulate `delta` into the gradient slot for `target`.
pub(crate) fn accumulate(grads: &mut [Option<Arr>], target: Var, delta: Arr) {
    match &mut grads[target.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}

/// Sum `g` down to `shape` (inverse of an ndarray broadcast).
pub(crate) fn reduce_to_shape(g: &Arr, shape: &[usize]) -> Arr {
    let mut out = g.clone();
    // Collapse leading axes absent from the target shape.
    while out.ndim() > shape.len() {
        out = out.sum_axis(ndarray::Axis(0));
    }
    // Sum over axes that were broadcast from 1.
    for (axis, (&have, &want)) in out.shape().to_vec().iter().zip(shape).enumerate() {
        if have != want {
            debug_assert_eq!(want, 1, "invalid broadcast reduction");
            let summed = out.sum_axis(ndarray::Axis(axis));
            out = summed.insert_axis(ndarray::Axis(axis));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn add_mul_backward() {
        let mut g = Graph::new();
        let a = g.leaf(arr1(&[1.0, 2.0, 3.0]).into_dyn());
        let b = g.leaf(arr1(&[4.0, 5.0, 6.0]).into_dyn());
        let prod = g.mul(a, b);
        let s = g.sum_all(prod);
        assert_eq!(g.scalar_value(s), 32.0);
        let grads = g.backward(s);
        assert_eq!(grads.wrt(a), &arr1(&[4.0, 5.0, 6.0]).into_dyn());
        assert_eq!(grads.wrt(b), &arr1(&[1.0, 2.0, 3.0]).into_dyn());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(arr1(&[2.0]).into_dyn());
        let c = g.constant(arr1(&[10.0]).into_dyn());
        let y = g.mul(a, c);
        let s = g.sum_all(y);
        let grads = g.backward(s);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.wrt(a), &arr1(&[10.0]).into_dyn());
    }

    #[test]
    fn broadcast_reduction_shapes() {
        let g = Arr::ones(IxDyn(&[2, 3, 4]));
        let r = reduce_to_shape(&g, &[3, 1]);
        assert_eq!(r.shape(), &[3, 1]);
        assert_eq!(r[[0, 0]], 8.0);
    }
}
