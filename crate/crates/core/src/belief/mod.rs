//! Per-agent conditional VAE over the unobserved part of the state.
//!
//! A recurrent history encoder summarizes `h_i`; the encoder
//! `q_phi(z | s, h_i)` and decoder `p_theta(s | h_i, z)` both read that
//! summary. After pre-training only the history encoder and the decoder are
//! used: beliefs are decoded from prior samples `z ~ N(0, I)` and averaged.

mod pretrain;

use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use pretrain::{pretrain, BeliefTarget, PretrainConfig, PretrainReport, Sequence, SequenceSet};

use crate::checkpoint::Checkpoint;
use crate::error::{usage, Error, Result};
use crate::nn::{self, gaussian_nll, kl_to_standard_normal, log_variance_floor, Gru, Mlp, Params};
use crate::seeding;

/// One step of an agent's local trajectory as fed to the history encoder:
/// the observation and the action that led to it (`None` at `t = 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub observation: Vec<f32>,
    pub prev_action: Option<usize>,
}

/// Agent `i`'s observation-action history `o_0, a_0, o_1, ..., a_{t-1}, o_t`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub entries: Vec<HistoryEntry>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(observation: &[f32]) -> Self {
        let mut h = Self::new();
        h.push(observation, None);
        h
    }

    pub fn push(&mut self, observation: &[f32], prev_action: Option<usize>) {
        self.entries.push(HistoryEntry {
            observation: observation.to_vec(),
            prev_action,
        });
    }

    /// Builds the history from aligned observation and action sequences;
    /// `actions[k]` is taken after `observations[k]`.
    pub fn from_trajectory(observations: &[Vec<f32>], actions: &[usize]) -> Self {
        let mut h = Self::new();
        for (k, o) in observations.iter().enumerate() {
            h.push(o, if k == 0 { None } else { Some(actions[k - 1]) });
        }
        h
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Diagonal Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

/// `b(h_i)`: averaged decoded means followed by averaged decoded variances.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefState {
    pub value: Vec<f64>,
}

impl BeliefState {
    pub fn mean(&self) -> &[f64] {
        &self.value[..self.value.len() / 2]
    }

    pub fn variance(&self) -> &[f64] {
        &self.value[self.value.len() / 2..]
    }
}

/// Shapes of a belief model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefSpec {
    pub obs_dim: usize,
    pub n_actions: usize,
    /// Number of predicted (unobserved) state features.
    pub target_dim: usize,
    pub latent_dim: usize,
    pub history_hidden: usize,
    pub mlp_hidden: Vec<usize>,
}

impl BeliefSpec {
    pub fn new(obs_dim: usize, n_actions: usize, target_dim: usize, latent_dim: usize) -> Self {
        Self {
            obs_dim,
            n_actions,
            target_dim,
            latent_dim,
            history_hidden: 64,
            mlp_hidden: vec![64, 64],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions
    }

    pub fn belief_dim(&self) -> usize {
        2 * self.target_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeliefModel {
    pub spec: BeliefSpec,
    pub history_encoder: Gru,
    /// `q_phi(z | s, h)`: `[hidden, target] -> [mean, logvar]` over `z`.
    pub encoder: Mlp,
    /// `p_theta(s | h, z)`: `[hidden, z] -> [mean, raw logvar]` over the target.
    pub decoder: Mlp,
}

impl Params for BeliefModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.history_encoder.tensors();
        t.extend(self.encoder.tensors());
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.history_encoder.tensors_mut();
        t.extend(self.encoder.tensors_mut());
        t.extend(self.decoder.tensors_mut());
        t
    }
}

/// Minibatch of agent-episodes, padded to a common length.
///
/// Row `b` of `inputs[t]` is the history-encoder input of sequence `b` at step
/// `t`; `targets[t]` the decoder target; `mask[[b, t]]` is 1 on real steps.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    pub inputs: Vec<Array2<f64>>,
    pub targets: Vec<Array2<f64>>,
    pub mask: Array2<f64>,
}

impl SequenceBatch {
    pub fn batch_size(&self) -> usize {
        self.mask.nrows()
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn valid(&self) -> f64 {
        self.mask.sum()
    }
}

/// Loss terms of one evaluation of the negated ELBO.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ElboTerms {
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

impl BeliefModel {
    pub fn new<R: Rng + ?Sized>(spec: BeliefSpec, rng: &mut R) -> Self {
        let h = spec.history_hidden;
        let history_encoder = Gru::new(spec.input_dim(), h, rng);
        let encoder = Mlp::new(h + spec.target_dim, &spec.mlp_hidden, 2 * spec.latent_dim, rng);
        let decoder = Mlp::new(h + spec.latent_dim, &spec.mlp_hidden, 2 * spec.target_dim, rng);
        Self {
            spec,
            history_encoder,
            encoder,
            decoder,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            history_encoder: self.history_encoder.zeros_like(),
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }

    pub fn belief_dim(&self) -> usize {
        self.spec.belief_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.spec.history_hidden
    }

    /// History-encoder input `[o_t, onehot(a_{t-1})]`.
    pub fn input_row(&self, observation: &[f32], prev_action: Option<usize>) -> Vec<f64> {
        let mut x = vec![0.0; self.spec.input_dim()];
        for (v, &o) in x.iter_mut().zip(observation) {
            *v = o as f64;
        }
        if let Some(a) = prev_action {
            x[self.spec.obs_dim + a] = 1.0;
        }
        x
    }

    fn check_entry(&self, entry: &HistoryEntry) -> Result<()> {
        if entry.observation.len() != self.spec.obs_dim {
            return Err(Error::Shape {
                what: "history observation",
                expected: self.spec.obs_dim,
                actual: entry.observation.len(),
            });
        }
        if entry.prev_action.is_some_and(|a| a >= self.spec.n_actions) {
            return Err(usage("history action out of range"));
        }
        Ok(())
    }

    /// Recurrent summary of a history; the zero state for an empty one.
    pub fn encode_history(&self, history: &History) -> Result<Array1<f64>> {
        let mut h = self.history_encoder.initial_state(1);
        for entry in &history.entries {
            self.check_entry(entry)?;
            let x = Array2::from_shape_vec((1, self.spec.input_dim()), self.input_row(&entry.observation, entry.prev_action))
                .expect("row shape");
            h = self.history_encoder.step(&x, &h);
        }
        Ok(h.remove_axis(Axis(0)))
    }

    /// Advances summaries by one history entry per row.
    pub fn advance(&self, hidden: &Array2<f64>, inputs: &Array2<f64>) -> Array2<f64> {
        self.history_encoder.step(inputs, hidden)
    }

    fn split_gaussian(out: &Array2<f64>, dim: usize) -> (Array2<f64>, Array2<f64>) {
        (out.slice(s![.., ..dim]).to_owned(), out.slice(s![.., dim..]).to_owned())
    }

    /// `q_phi(z | s, h)` for one (target, history) pair.
    pub fn posterior(&self, target: &[f64], history: &History) -> Result<GaussianParams> {
        if target.len() != self.spec.target_dim {
            return Err(Error::Shape {
                what: "belief target",
                expected: self.spec.target_dim,
                actual: target.len(),
            });
        }
        let h = self.encode_history(history)?.insert_axis(Axis(0));
        let y = nn::rows_from(&[target], self.spec.target_dim);
        let out = self.encoder.forward(&nn::hcat(&[h.view(), y.view()]));
        let (mean, logvar) = Self::split_gaussian(&out, self.spec.latent_dim);
        Ok(GaussianParams {
            mean: mean.into_raw_vec_and_offset().0,
            log_variance: logvar.into_raw_vec_and_offset().0,
        })
    }

    /// Decoder means and floored log-variances for rows of `(hidden, z)`.
    pub fn decode_rows(&self, hidden: &Array2<f64>, z: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let out = self.decoder.forward(&nn::hcat(&[hidden.view(), z.view()]));
        let (mean, raw) = Self::split_gaussian(&out, self.spec.target_dim);
        (mean, raw.mapv(|v| log_variance_floor(v).0))
    }

    /// `p_theta(s | h, z)`.
    pub fn decode(&self, history: &History, z: &[f64]) -> Result<GaussianParams> {
        if z.len() != self.spec.latent_dim {
            return Err(Error::Shape {
                what: "latent sample",
                expected: self.spec.latent_dim,
                actual: z.len(),
            });
        }
        let h = self.encode_history(history)?.insert_axis(Axis(0));
        let (mean, logvar) = self.decode_rows(&h, &nn::rows_from(&[z], z.len()));
        Ok(GaussianParams {
            mean: mean.into_raw_vec_and_offset().0,
            log_variance: logvar.into_raw_vec_and_offset().0,
        })
    }

    /// Beliefs for a batch of history summaries, drawing `m` prior samples
    /// per row from `rng`. Never reads the encoder.
    pub fn beliefs_from_hidden<R: Rng + ?Sized>(&self, hidden: &Array2<f64>, m: usize, rng: &mut R) -> Array2<f64> {
        let rows = hidden.nrows();
        let d = self.spec.target_dim;
        let latent = self.spec.latent_dim;
        let mut hid = Array2::zeros((rows * m, hidden.ncols()));
        for r in 0..rows {
            for j in 0..m {
                hid.row_mut(r * m + j).assign(&hidden.row(r));
            }
        }
        let z = Array2::from_shape_fn((rows * m, latent), |_| rng.sample::<f64, _>(StandardNormal));
        let (mean, logvar) = self.decode_rows(&hid, &z);
        let mut out = Array2::zeros((rows, 2 * d));
        let inv_m = 1.0 / m as f64;
        for r in 0..rows {
            for j in 0..m {
                let k = r * m + j;
                for c in 0..d {
                    out[[r, c]] += mean[[k, c]] * inv_m;
                    out[[r, d + c]] += logvar[[k, c]].exp() * inv_m;
                }
            }
        }
        out
    }

    /// `b(h) = (1/m) sum_j s_hat_j` with `z_j ~ N(0, I)` drawn from `seed`.
    pub fn sample_belief(&self, history: &History, m: usize, seed: u64) -> Result<BeliefState> {
        if m < 1 {
            return Err(usage("belief needs at least one sample"));
        }
        let h = self.encode_history(history)?.insert_axis(Axis(0));
        let mut rng = seeding::rng(seed);
        let b = self.beliefs_from_hidden(&h, m, &mut rng);
        Ok(BeliefState {
            value: b.row(0).to_vec(),
        })
    }

    /// Negated ELBO for one (target, history) pair, averaged over `n_mc`
    /// reparameterized samples.
    pub fn elbo_loss<R: Rng + ?Sized>(&self, target: &[f64], history: &History, n_mc: usize, rng: &mut R) -> Result<f64> {
        if n_mc < 1 {
            return Err(usage("elbo_loss needs n_mc >= 1"));
        }
        if history.is_empty() {
            return Err(usage("elbo_loss needs a non-empty history"));
        }
        let mut xs = Vec::with_capacity(history.len());
        for e in &history.entries {
            self.check_entry(e)?;
            xs.push(nn::rows_from(&[&self.input_row(&e.observation, e.prev_action)], self.spec.input_dim()));
        }
        let t = xs.len();
        let mut targets = vec![Array2::zeros((1, self.spec.target_dim)); t];
        targets[t - 1] = nn::rows_from(&[target], self.spec.target_dim);
        let mut mask = Array2::zeros((1, t));
        mask[[0, t - 1]] = 1.0;
        let batch = SequenceBatch {
            inputs: xs,
            targets,
            mask,
        };
        let mut total = 0.0;
        for _ in 0..n_mc {
            let noise = self.draw_noise(&batch, rng);
            total += self.batch_loss(&batch, &noise).loss;
        }
        Ok(total / n_mc as f64)
    }

    /// Standard-normal noise shaped for [`BeliefModel::batch_loss`].
    pub fn draw_noise<R: Rng + ?Sized>(&self, batch: &SequenceBatch, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_fn((batch.steps() * batch.batch_size(), self.spec.latent_dim), |_| {
            rng.sample::<f64, _>(StandardNormal)
        })
    }

    /// Negated ELBO averaged over the valid steps of `batch`, with frozen
    /// reparameterization noise (row `t * B + b` drives step `t` of `b`).
    pub fn batch_loss(&self, batch: &SequenceBatch, noise: &Array2<f64>) -> ElboTerms {
        self.forward_backward(batch, noise, None)
    }

    /// Like [`BeliefModel::batch_loss`], also returning parameter gradients.
    pub fn batch_loss_and_grad(&self, batch: &SequenceBatch, noise: &Array2<f64>) -> (ElboTerms, BeliefModel) {
        let mut grad = self.zeros_like();
        let terms = self.forward_backward(batch, noise, Some(&mut grad));
        (terms, grad)
    }

    fn forward_backward(&self, batch: &SequenceBatch, noise: &Array2<f64>, grad: Option<&mut BeliefModel>) -> ElboTerms {
        let b = batch.batch_size();
        let t_max = batch.steps();
        let hd = self.spec.history_hidden;
        let d = self.spec.target_dim;
        let latent = self.spec.latent_dim;
        let count = batch.valid().max(1.0);

        let h0 = self.history_encoder.initial_state(b);
        let (hs, gru_cache) = self.history_encoder.forward_seq(&h0, &batch.inputs);
        let rows = t_max * b;
        let mut hidden = Array2::zeros((rows, hd));
        let mut target = Array2::zeros((rows, d));
        let mut weight = vec![0.0; rows];
        for t in 0..t_max {
            hidden.slice_mut(s![t * b..(t + 1) * b, ..]).assign(&hs[t]);
            target.slice_mut(s![t * b..(t + 1) * b, ..]).assign(&batch.targets[t]);
            for r in 0..b {
                weight[t * b + r] = batch.mask[[r, t]] / count;
            }
        }

        let enc_in = nn::hcat(&[hidden.view(), target.view()]);
        let (enc_out, enc_cache) = self.encoder.forward_cached(&enc_in);
        let q_mean = enc_out.slice(s![.., ..latent]).to_owned();
        let q_logvar = enc_out.slice(s![.., latent..]).to_owned();
        let q_std = q_logvar.mapv(|v| (0.5 * v).exp());
        let z = &q_mean + &(&q_std * noise);

        let dec_in = nn::hcat(&[hidden.view(), z.view()]);
        let (dec_out, dec_cache) = self.decoder.forward_cached(&dec_in);

        let mut terms = ElboTerms::default();
        let mut d_dec = Array2::zeros(dec_out.raw_dim());
        let mut d_enc = Array2::zeros(enc_out.raw_dim());
        for r in 0..rows {
            let w = weight[r];
            if w == 0.0 {
                continue;
            }
            let mean: Vec<f64> = dec_out.slice(s![r, ..d]).to_vec();
            let (logvar, dfloor): (Vec<f64>, Vec<f64>) =
                dec_out.slice(s![r, d..]).iter().map(|&v| log_variance_floor(v)).unzip();
            let x: Vec<f64> = target.row(r).to_vec();
            let (nll, dm, dlv) = gaussian_nll(&x, &mean, &logvar);
            let (kl, dkm, dklv) =
                kl_to_standard_normal(&q_mean.row(r).to_vec(), &q_logvar.row(r).to_vec());
            debug_assert!(kl >= -1e-12);
            terms.reconstruction += w * nll;
            terms.kl += w * kl;
            for c in 0..d {
                d_dec[[r, c]] = w * dm[c];
                d_dec[[r, d + c]] = w * dlv[c] * dfloor[c];
            }
            for c in 0..latent {
                d_enc[[r, c]] = w * dkm[c];
                d_enc[[r, latent + c]] = w * dklv[c];
            }
        }
        terms.loss = terms.reconstruction + terms.kl;

        let Some(grad) = grad else {
            return terms;
        };
        let d_dec_in = self.decoder.backward(&dec_cache, &d_dec, &mut grad.decoder);
        let d_hidden_dec = d_dec_in.slice(s![.., ..hd]).to_owned();
        let dz = d_dec_in.slice(s![.., hd..]).to_owned();
        // z = mean + exp(logvar / 2) * eps
        {
            let mut dmean = d_enc.slice_mut(s![.., ..latent]);
            dmean += &dz;
        }
        {
            let dstd = &dz * noise * &q_std * 0.5;
            let mut dlogvar = d_enc.slice_mut(s![.., latent..]);
            dlogvar += &dstd;
        }
        let d_enc_in = self.encoder.backward(&enc_cache, &d_enc, &mut grad.encoder);
        let d_hidden = &d_hidden_dec + &d_enc_in.slice(s![.., ..hd]);
        let douts: Vec<Array2<f64>> = (0..t_max)
            .map(|t| d_hidden.slice(s![t * b..(t + 1) * b, ..]).to_owned())
            .collect();
        self.history_encoder
            .backward_seq(&gru_cache, &douts, &mut grad.history_encoder);
        terms
    }

    pub fn to_checkpoint(&self, env: &str, agent: &str) -> Checkpoint {
        let mut c = Checkpoint::new(
            "belief_model",
            serde_json::json!({
                "env": env,
                "agent": agent,
                "latent_dim": self.spec.latent_dim,
                "spec": self.spec,
            }),
        );
        c.push_params("history_encoder", &self.history_encoder);
        c.push_params("encoder", &self.encoder);
        c.push_params("decoder", &self.decoder);
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.kind != "belief_model" {
            return Err(usage(format!("expected a belief_model checkpoint, found {}", c.kind)));
        }
        let spec: BeliefSpec = serde_json::from_value(c.metadata["spec"].clone())?;
        let mut model = BeliefModel::new(spec, &mut seeding::rng(0));
        c.load_params("history_encoder", &mut model.history_encoder)?;
        c.load_params("encoder", &mut model.encoder)?;
        c.load_params("decoder", &mut model.decoder)?;
        Ok(model)
    }
}

/// Trained belief models for a team: one shared model, or one per agent.
#[derive(Clone, Debug)]
pub enum BeliefSet {
    Shared(Arc<BeliefModel>),
    PerAgent(Vec<Arc<BeliefModel>>),
}

impl BeliefSet {
    pub fn for_agent(&self, agent: usize) -> Arc<BeliefModel> {
        match self {
            BeliefSet::Shared(m) => Arc::clone(m),
            BeliefSet::PerAgent(ms) => Arc::clone(&ms[agent]),
        }
    }

    /// Writes `belief_shared.ckpt` or `belief_agent{i}.ckpt` into `dir`.
    pub fn save(&self, dir: &Path, env: &str) -> Result<()> {
        match self {
            BeliefSet::Shared(m) => m.to_checkpoint(env, "shared").save(&dir.join("belief_shared.ckpt")),
            BeliefSet::PerAgent(ms) => {
                for (i, m) in ms.iter().enumerate() {
                    m.to_checkpoint(env, &i.to_string())
                        .save(&dir.join(format!("belief_agent{i}.ckpt")))?;
                }
                Ok(())
            }
        }
    }

    /// Loads whatever [`BeliefSet::save`] wrote into `dir`.
    pub fn load(dir: &Path, n_agents: usize) -> Result<Self> {
        let shared = dir.join("belief_shared.ckpt");
        if shared.exists() {
            return Ok(BeliefSet::Shared(Arc::new(BeliefModel::from_checkpoint(&Checkpoint::load(&shared)?)?)));
        }
        let models = (0..n_agents)
            .map(|i| {
                let c = Checkpoint::load(&dir.join(format!("belief_agent{i}.ckpt")))?;
                Ok(Arc::new(BeliefModel::from_checkpoint(&c)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BeliefSet::PerAgent(models))
    }
}
