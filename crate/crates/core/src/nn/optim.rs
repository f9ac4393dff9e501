use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Adam with bias-corrected moments, one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect::<Vec<_>>();
        Adam { config, t: 0, m: zeros(), v: zeros() }
    }

    pub(crate) fn from_parts(config: AdamConfig, t: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Self {
        Adam { config, t, m, v }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// Applies one update. Parameters without a gradient keep their value and
    /// moments.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let corr1 = T::one() - b1.powi(t);
        let corr2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::lit(c.lr), T::lit(c.epsilon));
        for (i, (p, g)) in params.tensors_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if g.len() != p.len() {
                return Err(Error::Shape(format!("gradient {i} has {} elements, parameter {}", g.len(), p.len())));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi / corr1;
                let v_hat = *vi / corr2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let mut adam = Adam::new(cfg(2e-5), &store);
        let g = Tensor::new(vec![2], vec![3.0, -0.5]).unwrap();
        adam.step(&mut store, &[Some(g)]).unwrap();
        let w = store.by_name("w").unwrap().data();
        assert!((1.0 - w[0] - 2e-5).abs() < 1e-12);
        assert!((w[1] + 1.0 - 2e-5).abs() < 1e-12);
    }

    #[test]
    fn matches_reference_recurrence() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::new(vec![1], vec![0.3]).unwrap());
        let mut adam = Adam::new(cfg(0.1), &store);
        let (mut w, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = 2.0 * w;
            adam.step(&mut store, &[Some(Tensor::new(vec![1], vec![g]).unwrap())]).unwrap();
            m = 0.5 * m + 0.5 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.5f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((store.by_name("w").unwrap().data()[0] - w).abs() < 1e-14);
        }
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn missing_gradient_leaves_parameter() {
        let mut store = ParamStore::<f32>::new();
        store.add("a", Tensor::filled(&[3], 1.0));
        let mut adam = Adam::new(cfg(0.1), &store);
        adam.step(&mut store, &[None]).unwrap();
        assert_eq!(store.by_name("a").unwrap().data(), &[1.0; 3]);
    }
}
