use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Params;

/// Single-layer gated recurrent unit.
///
/// ```text
/// r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
/// z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
///
/// Gate blocks are stacked `[r | z | n]` along the rows of each weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Gru {
    pub w_input: Array2<f64>,
    pub w_hidden: Array2<f64>,
    pub b_input: Array1<f64>,
    pub b_hidden: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct GruStepCache {
    x: Array2<f64>,
    h: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    hn: Array2<f64>,
}

/// Per-step caches of a sequence pass.
#[derive(Clone, Debug)]
pub struct GruCache {
    steps: Vec<GruStepCache>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut draw = |shape: (usize, usize)| Array2::from_shape_fn(shape, |_| dist.sample(rng));
        let w_input = draw((3 * hidden, input));
        let w_hidden = draw((3 * hidden, hidden));
        let b_input = draw((1, 3 * hidden)).remove_axis(Axis(0));
        let b_hidden = draw((1, 3 * hidden)).remove_axis(Axis(0));
        Self {
            w_input,
            w_hidden,
            b_input,
            b_hidden,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_input: Array2::zeros(self.w_input.raw_dim()),
            w_hidden: Array2::zeros(self.w_hidden.raw_dim()),
            b_input: Array1::zeros(self.b_input.raw_dim()),
            b_hidden: Array1::zeros(self.b_hidden.raw_dim()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.ncols()
    }

    pub fn initial_state(&self, batch: usize) -> Array2<f64> {
        Array2::zeros((batch, self.hidden_dim()))
    }

    pub fn step(&self, x: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
        self.step_cached(x, h).0
    }

    pub fn step_cached(&self, x: &Array2<f64>, h: &Array2<f64>) -> (Array2<f64>, GruStepCache) {
        let hd = self.hidden_dim();
        let gi = x.dot(&self.w_input.t()) + &self.b_input;
        let gh = h.dot(&self.w_hidden.t()) + &self.b_hidden;
        let r = (&gi.slice(s![.., 0..hd]) + &gh.slice(s![.., 0..hd])).mapv(sigmoid);
        let z = (&gi.slice(s![.., hd..2 * hd]) + &gh.slice(s![.., hd..2 * hd])).mapv(sigmoid);
        let hn = gh.slice(s![.., 2 * hd..]).to_owned();
        let n = (&gi.slice(s![.., 2 * hd..]) + &(&r * &hn)).mapv(f64::tanh);
        let out = &n + &(&z * &(h - &n));
        (
            out,
            GruStepCache {
                x: x.clone(),
                h: h.clone(),
                r,
                z,
                n,
                hn,
            },
        )
    }

    /// Backward through one step. Adds parameter gradients into `grad` and
    /// returns `(dL/dx, dL/dh)`.
    pub fn step_backward(
        &self,
        cache: &GruStepCache,
        dout: &Array2<f64>,
        grad: &mut Gru,
    ) -> (Array2<f64>, Array2<f64>) {
        let GruStepCache { x, h, r, z, n, hn } = cache;
        let hd = self.hidden_dim();
        let dn = dout * &z.mapv(|v| 1.0 - v);
        let dz = dout * &(h - n);
        let mut dh = dout * z;
        let dan = &dn * &n.mapv(|v| 1.0 - v * v);
        let dr = &dan * hn;
        let dhn = &dan * r;
        let daz = &dz * &z.mapv(|v| v * (1.0 - v));
        let dar = &dr * &r.mapv(|v| v * (1.0 - v));

        let rows = dout.nrows();
        let mut dgi = Array2::zeros((rows, 3 * hd));
        dgi.slice_mut(s![.., 0..hd]).assign(&dar);
        dgi.slice_mut(s![.., hd..2 * hd]).assign(&daz);
        dgi.slice_mut(s![.., 2 * hd..]).assign(&dan);
        let mut dgh = dgi.clone();
        dgh.slice_mut(s![.., 2 * hd..]).assign(&dhn);

        grad.w_input += &dgi.t().dot(x);
        grad.b_input += &dgi.sum_axis(Axis(0));
        grad.w_hidden += &dgh.t().dot(h);
        grad.b_hidden += &dgh.sum_axis(Axis(0));
        let dx = dgi.dot(&self.w_input);
        dh += &dgh.dot(&self.w_hidden);
        (dx, dh)
    }

    /// Runs the cell over `xs` from `h0`, returning every output state.
    pub fn forward_seq(&self, h0: &Array2<f64>, xs: &[Array2<f64>]) -> (Vec<Array2<f64>>, GruCache) {
        let mut h = h0.clone();
        let mut outs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let (next, c) = self.step_cached(x, &h);
            steps.push(c);
            outs.push(next.clone());
            h = next;
        }
        (outs, GruCache { steps })
    }

    /// Backpropagation through time. `douts[t]` is the loss gradient with
    /// respect to output `t` (excluding flow from later steps). Returns the
    /// gradient with respect to `h0`.
    pub fn backward_seq(&self, cache: &GruCache, douts: &[Array2<f64>], grad: &mut Gru) -> Array2<f64> {
        assert_eq!(cache.steps.len(), douts.len());
        let mut carry: Option<Array2<f64>> = None;
        for t in (0..douts.len()).rev() {
            let d = match carry.take() {
                Some(c) => &douts[t] + &c,
                None => douts[t].clone(),
            };
            let (_, dh) = self.step_backward(&cache.steps[t], &d, grad);
            carry = Some(dh);
        }
        carry.unwrap_or_else(|| Array2::zeros((0, self.hidden_dim())))
    }
}

impl Params for Gru {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.w_input.as_slice().expect("standard layout"),
            self.w_hidden.as_slice().expect("standard layout"),
            self.b_input.as_slice().expect("standard layout"),
            self.b_hidden.as_slice().expect("standard layout"),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_input.as_slice_mut().expect("standard layout"),
            self.w_hidden.as_slice_mut().expect("standard layout"),
            self.b_input.as_slice_mut().expect("standard layout"),
            self.b_hidden.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;

    fn inputs(t: usize, b: usize, d: usize) -> Vec<Array2<f64>> {
        (0..t)
            .map(|k| Array2::from_shape_fn((b, d), |(i, j)| ((k * 13 + i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0))
            .collect()
    }

    fn seq_loss(gru: &Gru, h0: &Array2<f64>, xs: &[Array2<f64>], ws: &[Array2<f64>]) -> f64 {
        let (outs, _) = gru.forward_seq(h0, xs);
        outs.iter().zip(ws).map(|(o, w)| (o * w).sum()).sum()
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = seeding::rng(5);
        let gru = Gru::new(3, 4, &mut rng);
        let xs = inputs(5, 2, 3);
        let ws = inputs(5, 2, 4);
        let h0 = Array2::from_shape_fn((2, 4), |(i, j)| 0.1 * (i as f64) - 0.05 * j as f64);
        let (_, cache) = gru.forward_seq(&h0, &xs);
        let mut grad = gru.zeros_like();
        let dh0 = gru.backward_seq(&cache, &ws, &mut grad);

        let flat = gru.flat();
        let g = grad.flat();
        let eps = 1e-6;
        for k in 0..flat.len() {
            let mut p = gru.clone();
            let mut v = flat.clone();
            v[k] += eps;
            p.set_flat(&v).unwrap();
            let up = seq_loss(&p, &h0, &xs, &ws);
            v[k] -= 2.0 * eps;
            p.set_flat(&v).unwrap();
            let down = seq_loss(&p, &h0, &xs, &ws);
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
        for i in 0..2 {
            for j in 0..4 {
                let mut hp = h0.clone();
                hp[[i, j]] += eps;
                let up = seq_loss(&gru, &hp, &xs, &ws);
                hp[[i, j]] -= 2.0 * eps;
                let down = seq_loss(&gru, &hp, &xs, &ws);
                assert!(((up - down) / (2.0 * eps) - dh0[[i, j]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_state_and_batch_independence() {
        let mut rng = seeding::rng(2);
        let gru = Gru::new(3, 6, &mut rng);
        let xs = inputs(3, 4, 3);
        let (outs, _) = gru.forward_seq(&gru.initial_state(4), &xs);
        // row 2 processed alone gives the same trajectory
        let single: Vec<Array2<f64>> = xs.iter().map(|x| x.slice(s![2..3, ..]).to_owned()).collect();
        let (alone, _) = gru.forward_seq(&gru.initial_state(1), &single);
        for (a, b) in outs.iter().zip(&alone) {
            assert_eq!(a.slice(s![2..3, ..]), b.view());
        }
    }
}
