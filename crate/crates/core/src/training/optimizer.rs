//! Adam optimizer over a selected set of parameter tensors.

use crate::graph::Arr;
use crate::model::ModelParams;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: BTreeMap<usize, (Arr, Arr)>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update over `(entry index, gradient)` pairs; entries without a
    /// gradient this step keep their parameters and moments untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[(usize, Arr)]) {
        if grads.is_empty() {
            return;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, grad) in grads {
            let (m, v) = self
                .moments
                .entry(*idx)
                .or_insert_with(|| (Arr::zeros(grad.raw_dim()), Arr::zeros(grad.raw_dim())));
            m.zip_mut_with(grad, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(grad, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            let mut value = params.value_at(*idx).clone();
            ndarray::Zip::from(&mut value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &mi, &vi| {
                    let m_hat = mi / bc1;
                    let v_hat = vi / bc2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                });
            params.set_at(*idx, value);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelDims};
    use ndarray::IxDyn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn adam_moves_against_gradient() {
        let dims = ModelDims {
            window: 64,
            sensors: vec![("a".into(), 2)],
            n_activities: 3,
            n_domains: 3,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut params = ModelParams::init(dims, ModelConfig::default(), &mut rng).unwrap();
        let idx = params.idx("classifier.fc.bias");
        let before = params.value_at(idx).clone();
        let grad = Arr::from_elem(IxDyn(before.shape()), 2.0);
        let mut adam = Adam::new(0.1, 0.9, 0.99);
        adam.step(&mut params, &[(idx, grad)]);
        let after = params.value_at(idx);
        for (b, a) in before.iter().zip(after.iter()) {
            assert!(a < b, "positive gradient must decrease the parameter");
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let dims = ModelDims {
            window: 64,
            sensors: vec![("a".into(), 2)],
            n_activities: 3,
            n_domains: 3,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut params = ModelParams::init(dims, ModelConfig::default(), &mut rng).unwrap();
        let hash = params.content_hash(None);
        let idx = params.idx("classifier.fc.bias");
        let grad = Arr::from_elem(IxDyn(params.value_at(idx).shape()), 2.0);
        let mut adam = Adam::new(0.0, 0.9, 0.99);
        adam.step(&mut params, &[(idx, grad)]);
        assert_eq!(params.content_hash(None), hash);
    }
}
