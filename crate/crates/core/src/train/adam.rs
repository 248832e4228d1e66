use crate::error::{Error, Result};
use crate::scalar::Real;

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    pub fn from_moments(beta1: f64, beta2: f64, eps: f64, t: u64, m: Vec<T>, v: Vec<T>) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer moments differ in length ({} vs {})",
                m.len(),
                v.len()
            )));
        }
        Ok(Adam { beta1, beta2, eps, t, m, v })
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        assert!(params.len() == self.m.len() && grads.len() == self.m.len(), "optimizer size mismatch");
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bias1 = 1.0 - self.beta1.powi(self.t as i32);
        let bias2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = T::lit(lr * bias2.sqrt() / bias1);
        let eps = T::lit(self.eps * bias2.sqrt());
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + c1 * g;
            self.v[i] = b2 * self.v[i] + c2 * g * g;
            params[i] -= step * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}
