//! Minimal `f64` neural-network toolkit with hand-written backward passes.
//!
//! Everything is batched row-major: a batch of `B` inputs of width `d` is an
//! `Array2<f64>` of shape `(B, d)`. Every module implements [`Params`], and a
//! module of the same shape doubles as its own gradient accumulator.

mod adam;
mod gaussian;
mod gru;
mod linear;
mod mlp;

pub use adam::Adam;
pub use gaussian::{gaussian_nll, kl_to_standard_normal, log_variance_floor, FLOOR_LOGVAR};
pub use gru::{Gru, GruCache, GruStepCache};
pub use linear::Linear;
pub use mlp::{Mlp, MlpCache};

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Uniform access to a module's parameter tensors, in a fixed order.
pub trait Params {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        let n = self.num_params();
        if values.len() != n {
            return Err(Error::Shape {
                what: "flat parameter vector",
                expected: n,
                actual: values.len(),
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }
}

/// Polyak averaging `target <- tau * online + (1 - tau) * target`.
pub fn soft_update<P: Params + ?Sized>(target: &mut P, online: &P, tau: f64) -> Result<()> {
    let src = online.tensors();
    let dst = target.tensors_mut();
    if src.len() != dst.len() {
        return Err(Error::Shape {
            what: "soft update tensor count",
            expected: src.len(),
            actual: dst.len(),
        });
    }
    for (d, s) in dst.into_iter().zip(src) {
        if d.len() != s.len() {
            return Err(Error::Shape {
                what: "soft update tensor length",
                expected: s.len(),
                actual: d.len(),
            });
        }
        for (t, &o) in d.iter_mut().zip(s) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
    Ok(())
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Concatenates matrices column-wise.
pub fn hcat(parts: &[ArrayView2<'_, f64>]) -> Array2<f64> {
    ndarray::concatenate(Axis(1), parts).expect("row counts agree")
}

/// Rows of one-hot encodings.
pub fn one_hot(indices: &[usize], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), width));
    for (r, &i) in indices.iter().enumerate() {
        out[[r, i]] = 1.0;
    }
    out
}

pub fn rows_from(vectors: &[&[f64]], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((vectors.len(), width));
    for (r, v) in vectors.iter().enumerate() {
        out.row_mut(r).assign(&ndarray::ArrayView1::from(*v));
    }
    out
}

pub fn rows_from_f32(vectors: &[&[f32]], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((vectors.len(), width));
    for (r, v) in vectors.iter().enumerate() {
        for (c, &x) in v.iter().enumerate() {
            out[[r, c]] = x as f64;
        }
    }
    out
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
