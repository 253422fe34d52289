use serde::{Deserialize, Serialize};

use super::Params;
use crate::error::{Error, Result};

/// Adam with bias correction, operating on a module's flattened parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn for_module<P: Params + ?Sized>(lr: f64, module: &P) -> Self {
        Self::new(lr, module.num_params())
    }

    /// One descent step on `params` along `grad`.
    pub fn step<P: Params + ?Sized>(&mut self, params: &mut P, grad: &P) -> Result<()> {
        let g = grad.flat();
        if g.len() != self.m.len() {
            return Err(Error::Shape {
                what: "adam gradient",
                expected: self.m.len(),
                actual: g.len(),
            });
        }
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        let mut k = 0;
        for t in params.tensors_mut() {
            for p in t.iter_mut() {
                let gk = g[k];
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * gk;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = self.m[k] / b1t;
                let vhat = self.v[k] / b2t;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                k += 1;
            }
        }
        Ok(())
    }
}
