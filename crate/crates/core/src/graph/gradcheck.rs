//! Central finite-difference gradient oracle.
//!
//! The oracle only ever calls a scalar-valued forward function, so it is
//! independent of the reverse-mode rules it is used to check.

use super::Arr;

/// Central-difference gradient of `f` w.r.t. the entries of `x0` listed in
/// `coords` (all entries when `coords` is `None`).
pub fn numeric_gradient<F>(mut f: F, x0: &Arr, eps: f64, coords: Option<&[usize]>) -> Vec<(usize, f64)>
where
    F: FnMut(&Arr) -> f64,
{
    let flat_len = x0.len();
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..flat_len).collect();
            &all
        }
    };
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = x.as_slice_mut().expect("standard layout")[i];
        x.as_slice_mut().unwrap()[i] = orig + eps;
        let fp = f(&x);
        x.as_slice_mut().unwrap()[i] = orig - eps;
        let fm = f(&x);
        x.as_slice_mut().unwrap()[i] = orig;
        out.push((i, (fp - fm) / (2.0 * eps)));
    }
    out
}

/// Worst relative error between an analytic gradient and the finite-difference
/// oracle over the checked coordinates. Relative error uses
/// `|a - n| / max(1, |a|, |n|)` so near-zero entries compare absolutely.
pub fn max_relative_error<F>(f: F, x0: &Arr, analytic: &Arr, eps: f64, coords: Option<&[usize]>) -> f64
where
    F: FnMut(&Arr) -> f64,
{
    assert_eq!(x0.shape(), analytic.shape(), "gradient shape mismatch");
    let numeric = numeric_gradient(f, x0, eps, coords);
    let flat = analytic.as_slice().expect("standard layout");
    numeric
        .into_iter()
        .map(|(i, n)| {
            let a = flat[i];
            (a - n).abs() / 1.0_f64.max(a.abs()).max(n.abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use ndarray::arr1;

    #[test]
    fn oracle_matches_simple_polynomial() {
        // f(x) = sum(x^2): df/dx_i = 2 x_i
        let x0 = arr1(&[1.0, -2.0, 0.5]).into_dyn();
        let grads = numeric_gradient(|x| x.mapv(|v| v * v).sum(), &x0, 1e-6, None);
        for (i, g) in grads {
            assert!((g - 2.0 * x0.as_slice().unwrap()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn elementwise_chain_checks_out() {
        let x0 = arr1(&[0.3, 1.2, -0.7, 2.0]).into_dyn();
        let forward = |x: &Arr| {
            let mut g = Graph::new();
            let v = g.leaf(x.clone());
            let e = g.exp(v);
            let s = g.sqrt(e);
            let m = g.mean_all(s);
            g.scalar_value(m)
        };
        let mut g = Graph::new();
        let v = g.leaf(x0.clone());
        let e = g.exp(v);
        let s = g.sqrt(e);
        let m = g.mean_all(s);
        let grads = g.backward(m);
        let err = max_relative_error(forward, &x0, grads.wrt(v), 1e-6, None);
        assert!(err < 1e-8, "relative error {err}");
    }
}
