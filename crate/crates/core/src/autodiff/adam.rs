use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::error::AutodiffError;
use super::graph::Gradients;
use super::params::{ParamId, ParamStore};
use super::scalar::Scalar;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    first: Tensor<T>,
    second: Tensor<T>,
    steps: u64,
}

/// Adam with bias correction over a fixed group of parameters.
///
/// Parameters missing from a gradient set are skipped for that step and
/// keep their own step count, so sparse updates (single-path training)
/// get correct bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    group: Vec<ParamId>,
    moments: HashMap<ParamId, Moments<T>>,
    steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, group: Vec<ParamId>) -> Self {
        Self {
            config,
            group,
            moments: HashMap::new(),
            steps: 0,
        }
    }

    pub fn group(&self) -> &[ParamId] {
        &self.group
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<(), AutodiffError> {
        for &id in &self.group {
            if let Some(g) = grads.get(id) {
                if g.shape() != store.get(id).shape() {
                    return Err(AutodiffError::GradientShape {
                        name: store.name(id).to_string(),
                        got: g.shape().to_vec(),
                        expected: store.get(id).shape().to_vec(),
                    });
                }
                if !g.is_finite() {
                    return Err(AutodiffError::NonFiniteGradient {
                        name: store.name(id).to_string(),
                    });
                }
            }
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let one = T::one();
        for &id in &self.group {
            let Some(g) = grads.get(id) else { continue };
            let param = store.get_mut(id);
            let m = self.moments.entry(id).or_insert_with(|| Moments {
                first: Tensor::zeros(param.shape().to_vec()),
                second: Tensor::zeros(param.shape().to_vec()),
                steps: 0,
            });
            m.steps += 1;
            let t = m.steps as i32;
            let c1 = T::from_f64(1.0 - beta1.powi(t));
            let c2 = T::from_f64(1.0 - beta2.powi(t));
            let lr = T::from_f64(learning_rate);
            let e = T::from_f64(eps);
            let (first, second) = (m.first.data_mut(), m.second.data_mut());
            for (((p, &gv), mv), vv) in param.data_mut().iter_mut().zip(g.data()).zip(first.iter_mut()).zip(second.iter_mut()) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + e);
            }
        }
        self.steps += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    fn grads_of(store: &ParamStore<f64>, ids: &[ParamId], coeff: &[f64]) -> Gradients<f64> {
        // loss = sum_i coeff_i * sum(p_i)  =>  grad_i = coeff_i everywhere
        let g = Graph::new();
        let mut terms = Vec::new();
        for (&id, &c) in ids.iter().zip(coeff) {
            let p = g.param(store, id);
            terms.push(g.scale(g.sum(p).unwrap(), c).unwrap());
        }
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = g.add(loss, t).unwrap();
        }
        g.gradients(loss).unwrap()
    }

    #[test]
    fn first_step_closed_form() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::full(vec![3], 0.5)).unwrap();
        let grads = grads_of(&store, &[id], &[1.0]);
        let mut adam = Adam::new(AdamConfig::default(), vec![id]);
        adam.step(&mut store, &grads).unwrap();
        let expected = 0.5 - 1e-3 * (1.0 / (1.0 + 1e-8));
        for &v in store.get(id).data() {
            assert!((v - expected).abs() < 1e-15);
        }
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::full(vec![2], 0.25)).unwrap();
        let grads = grads_of(&store, &[id], &[0.0]);
        let mut adam = Adam::new(AdamConfig::default(), vec![id]);
        adam.step(&mut store, &grads).unwrap();
        assert_eq!(store.get(id).data(), &[0.25, 0.25]);
    }

    #[test]
    fn opposite_gradients_give_opposite_updates() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(0.0)).unwrap();
        let b = store.add("b", Tensor::scalar(0.0)).unwrap();
        let grads = grads_of(&store, &[a, b], &[1.0, -1.0]);
        let mut adam = Adam::new(AdamConfig::default(), vec![a, b]);
        adam.step(&mut store, &grads).unwrap();
        let (da, db) = (store.get(a).data()[0], store.get(b).data()[0]);
        assert!(da < 0.0);
        assert_eq!(da, -db);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = ParamStore::new();
        let id = store.add("bad", Tensor::scalar(1.0)).unwrap();
        let mut grads = grads_of(&store, &[id], &[1.0]);
        grads.insert(id, Tensor::scalar(f64::INFINITY));
        let mut adam = Adam::new(AdamConfig::default(), vec![id]);
        let err = adam.step(&mut store, &grads).unwrap_err();
        assert!(err.to_string().contains("bad"));
        assert_eq!(store.get(id).data(), &[1.0]);
    }
}
