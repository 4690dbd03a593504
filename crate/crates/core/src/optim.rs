//! Parameter update rules: plain gradient descent and Adam.

use std::collections::HashMap;

use crate::params::ParameterStore;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Gradients keyed by parameter name, as produced by `Tape::param_grads`
/// plus any analytically computed contributions.
pub type GradMap<T> = HashMap<String, Vec<T>>;

/// Merge a gradient contribution into a map, accumulating if present.
pub fn add_grad<T: Scalar>(grads: &mut GradMap<T>, name: &str, add: &[T]) {
    match grads.get_mut(name) {
        Some(g) => {
            for (gi, ai) in g.iter_mut().zip(add) {
                *gi += *ai;
            }
        }
        None => {
            grads.insert(name.to_string(), add.to_vec());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Hyperparameters plus per-parameter state. SGD keeps no state beyond the
/// step counter; Adam tracks first/second moments per parameter name.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step: u64,
    moments: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn sgd(lr: T) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: T::zero(),
            beta2: T::zero(),
            epsilon: T::zero(),
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// Adam with the usual defaults: beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn adam(lr: T) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam,
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            epsilon: T::from_f64(1e-8),
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter in the store, in store order.
    /// A parameter without a gradient entry is an error.
    pub fn step(&mut self, params: &mut ParameterStore<T>, grads: &GradMap<T>) -> Result<()> {
        self.step += 1;
        let t = self.step;
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let g = grads
                .get(&name)
                .ok_or_else(|| Error::Config(format!("missing gradient for parameter {name}")))?;
            let p = params.get_mut(&name).expect("name from iteration");
            if g.len() != p.len() {
                return Err(Error::shape(p.shape(), g.len()));
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    let lr = self.lr;
                    for (pv, gv) in p.data_mut().iter_mut().zip(g) {
                        *pv = *pv - lr * *gv;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = self
                        .moments
                        .entry(name.clone())
                        .or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
                    let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.lr);
                    let bc1 = T::one() - b1.powi(t as i32);
                    let bc2 = T::one() - b2.powi(t as i32);
                    for ((pv, gv), (mv, vv)) in
                        p.data_mut().iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        *mv = b1 * *mv + (T::one() - b1) * *gv;
                        *vv = b2 * *vv + (T::one() - b2) * *gv * *gv;
                        let mhat = *mv / bc1;
                        let vhat = *vv / bc2;
                        *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single_param(value: f64) -> ParameterStore<f64> {
        let mut store = ParameterStore::new();
        store.insert("p", Tensor::new(vec![1], vec![value])).unwrap();
        store
    }

    #[test]
    fn sgd_update_matches_definition() {
        // lr=0.1, p=1.0, g=2.0 -> p=0.8
        let mut store = single_param(1.0);
        let mut opt = Optimizer::sgd(0.1);
        let mut grads = GradMap::new();
        grads.insert("p".into(), vec![2.0]);
        opt.step(&mut store, &grads).unwrap();
        assert!((store.get("p").unwrap().data()[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn sgd_zero_gradient_is_identity() {
        let mut store = single_param(3.25);
        let mut opt = Optimizer::sgd(0.1);
        let mut grads = GradMap::new();
        grads.insert("p".into(), vec![0.0]);
        opt.step(&mut store, &grads).unwrap();
        assert_eq!(store.get("p").unwrap().data()[0], 3.25);
    }

    #[test]
    fn adam_first_step_is_bias_corrected_sign_step() {
        // Hand computation with beta1=0.9, beta2=0.999, eps=1e-8, g=0.37:
        // m=0.1g, v=0.001g^2, mhat=g, vhat=g^2, step = lr*g/(|g|+eps) ~ lr*sign(g)
        for &g in &[0.37f64, -4.2, 1e-3] {
            let mut store = single_param(0.0);
            let lr = 0.25;
            let mut opt = Optimizer::adam(lr);
            let mut grads = GradMap::new();
            grads.insert("p".into(), vec![g]);
            opt.step(&mut store, &grads).unwrap();
            let delta = store.get("p").unwrap().data()[0];
            let expected = -lr * g / (g.abs() + 1e-8);
            assert!(
                (delta - expected).abs() < 1e-12,
                "g={g}: delta={delta}, expected={expected}"
            );
            // |step| is within eps/|g| of the learning rate.
            assert!((delta.abs() - lr).abs() < 1e-5);
        }
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut store = single_param(1.0);
        let mut opt = Optimizer::adam(0.001);
        let grads = GradMap::new();
        assert!(opt.step(&mut store, &grads).is_err());
    }

    #[test]
    fn step_counter_increases() {
        let mut store = single_param(1.0);
        let mut opt = Optimizer::sgd(0.1);
        let mut grads = GradMap::new();
        grads.insert("p".into(), vec![0.0]);
        for expect in 1..=3 {
            opt.step(&mut store, &grads).unwrap();
            assert_eq!(opt.step_count(), expect);
        }
    }
}
