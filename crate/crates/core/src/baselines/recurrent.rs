use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::{masked_mean_sq, stack_steps, unstack_steps, EpisodeBatch, HystereticRates};
use crate::checkpoint::Checkpoint;
use crate::data::{AgentView, BeliefCache};
use crate::error::{usage, Error, Result};
use crate::i2q::greedy_or_random;
use crate::learner::{AgentLearner, LossSummary};
use crate::nn::{self, Adam, Gru, Mlp, Params};
use crate::seeding::{self, tag};

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentConfig {
    pub gru_hidden: usize,
    pub hidden: Vec<usize>,
    pub lr_qss: f64,
    pub lr_f: f64,
    /// Also used for the history encoder.
    pub lr_q: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub tau: f64,
    pub batch_episodes: usize,
    pub warmup_episodes: usize,
    pub rates: HystereticRates,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        Self {
            gru_hidden: 64,
            hidden: vec![128, 128, 128],
            lr_qss: 0.001,
            lr_f: 0.001,
            lr_q: 0.001,
            gamma: 0.99,
            lambda: 0.1,
            tau: 0.005,
            batch_episodes: 32,
            warmup_episodes: 32,
            rates: HystereticRates { alpha: 1.0, beta: 0.1 },
        }
    }
}

fn row_argmax(values: &Array2<f64>) -> Vec<usize> {
    values.rows().into_iter().map(|r| nn::argmax(&r.to_vec())).collect()
}

fn row_max(values: &Array2<f64>) -> Array1<f64> {
    values.map_axis(Axis(1), |r| r.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
}

fn taken(values: &Array2<f64>, actions: &[usize]) -> Array1<f64> {
    Array1::from_iter(actions.iter().enumerate().map(|(r, &a)| values[[r, a]]))
}

fn scatter(shape: (usize, usize), actions: &[usize], d: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(shape);
    for (r, &a) in actions.iter().enumerate() {
        out[[r, a]] = d[r];
    }
    out
}

/// Recurrent I2Q: one history encoder shared by the `Qss` and `Q` heads; `f`
/// predicts the next encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct RecI2qNetworks {
    pub encoder: Gru,
    pub qss: Mlp,
    pub f: Mlp,
    pub q: Mlp,
    pub qss_target: Mlp,
    pub q_target: Mlp,
}

impl RecI2qNetworks {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, n_actions: usize, gru_hidden: usize, hidden: &[usize], rng: &mut R) -> Self {
        let encoder = Gru::new(obs_dim + n_actions, gru_hidden, rng);
        let qss = Mlp::new(2 * gru_hidden, hidden, 1, rng);
        let f = Mlp::new(gru_hidden + n_actions, hidden, gru_hidden, rng);
        let q = Mlp::new(gru_hidden, hidden, n_actions, rng);
        Self {
            qss_target: qss.clone(),
            q_target: q.clone(),
            encoder,
            qss,
            f,
            q,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            qss: self.qss.zeros_like(),
            f: self.f.zeros_like(),
            q: self.q.zeros_like(),
            qss_target: self.qss_target.zeros_like(),
            q_target: self.q_target.zeros_like(),
        }
    }

    pub fn n_actions(&self) -> usize {
        self.q.output_dim()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RecI2qLosses {
    pub qss: f64,
    pub f: f64,
    pub q: f64,
}

/// The three I2Q objectives with the state replaced by the recurrent
/// encoding. Gradients: `qss` and `q` (and through them the encoder) from
/// their TD losses, `f` from its own objective with encodings held fixed.
/// Targets use detached online encodings and the target heads.
pub fn rec_i2q_losses(nets: &RecI2qNetworks, batch: &EpisodeBatch, gamma: f64, lambda: f64) -> (RecI2qLosses, RecI2qNetworks) {
    let mut grad = nets.zeros_like();
    let b = batch.batch_size();
    let steps = batch.steps();
    let hd = nets.encoder.hidden_dim();
    let n_actions = nets.n_actions();
    let (outs, cache) = nets.encoder.forward_seq(&nets.encoder.initial_state(b), &batch.inputs);
    let (e, e_next) = stack_steps(&outs);
    let actions = batch.flat_actions();
    let rewards = batch.flat(&batch.rewards);
    let not_done = batch.flat(&batch.not_done);
    let weight = batch.flat(&batch.mask);
    let count = weight.iter().filter(|&&w| w > 0.0).count().max(1) as f64;
    let mut losses = RecI2qLosses::default();

    // Qss
    let best = row_argmax(&nets.q.forward(&e_next));
    let proposed_next = nets
        .f
        .forward(&nn::hcat(&[e_next.view(), nn::one_hot(&best, n_actions).view()]));
    let bootstrap = nets
        .qss_target
        .forward(&nn::hcat(&[e_next.view(), proposed_next.view()]))
        .column(0)
        .to_owned();
    let target = &rewards + &(bootstrap * &not_done * gamma);
    let (pred, qss_cache) = nets.qss.forward_cached(&nn::hcat(&[e.view(), e_next.view()]));
    let (loss, d) = masked_mean_sq(&pred.column(0).to_owned(), &target, &weight);
    losses.qss = loss;
    let dx = nets.qss.backward(&qss_cache, &d.insert_axis(Axis(1)), &mut grad.qss);
    let mut de = dx.slice(s![.., ..hd]).to_owned();
    let de_next = dx.slice(s![.., hd..]).to_owned();

    // f
    let (proposed, f_cache) = nets
        .f
        .forward_cached(&nn::hcat(&[e.view(), nn::one_hot(&actions, n_actions).view()]));
    let (value, v_cache) = nets.qss.forward_cached(&nn::hcat(&[e.view(), proposed.view()]));
    let err = &proposed - &e_next;
    let sq = err.mapv(|v| v * v).sum_axis(Axis(1));
    let objective = &value.column(0) * lambda - &sq;
    losses.f = -(&objective * &weight).sum() / count;
    let dvalue = nets
        .qss
        .input_gradient(&v_cache, &Array2::from_elem((value.nrows(), 1), 1.0));
    let scale = weight.mapv(|w| -w / count).insert_axis(Axis(1));
    let dproposed = (&dvalue.slice(s![.., hd..]) * lambda - &(err * 2.0)) * &scale;
    nets.f.backward(&f_cache, &dproposed, &mut grad.f);

    // Q
    let bootstrap = row_max(&nets.q_target.forward(&proposed));
    let target = &rewards + &(bootstrap * &not_done * gamma);
    let (qvals, q_cache) = nets.q.forward_cached(&e);
    let (loss, d) = masked_mean_sq(&taken(&qvals, &actions), &target, &weight);
    losses.q = loss;
    de += &nets.q.backward(&q_cache, &scatter(qvals.dim(), &actions, &d), &mut grad.q);

    let douts = unstack_steps(&de, Some(&de_next), b, steps);
    nets.encoder.backward_seq(&cache, &douts, &mut grad.encoder);
    (losses, grad)
}

/// Recurrent hysteretic IQL: history encoder feeding `Q`, with delayed
/// copies of both.
#[derive(Clone, Debug, PartialEq)]
pub struct RecHystNetworks {
    pub encoder: Gru,
    pub q: Mlp,
    pub encoder_target: Gru,
    pub q_target: Mlp,
}

impl RecHystNetworks {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, n_actions: usize, gru_hidden: usize, hidden: &[usize], rng: &mut R) -> Self {
        let encoder = Gru::new(obs_dim + n_actions, gru_hidden, rng);
        let q = Mlp::new(gru_hidden, hidden, n_actions, rng);
        Self {
            encoder_target: encoder.clone(),
            q_target: q.clone(),
            encoder,
            q,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            q: self.q.zeros_like(),
            encoder_target: self.encoder_target.zeros_like(),
            q_target: self.q_target.zeros_like(),
        }
    }
}

/// Squared TD error weighted per sample by `alpha` (positive error) or
/// `beta`; returns the loss and gradients for `encoder` and `q`.
pub fn hyst_losses(nets: &RecHystNetworks, batch: &EpisodeBatch, gamma: f64, rates: HystereticRates) -> (f64, RecHystNetworks) {
    let mut grad = nets.zeros_like();
    let b = batch.batch_size();
    let steps = batch.steps();
    let (outs, cache) = nets.encoder.forward_seq(&nets.encoder.initial_state(b), &batch.inputs);
    let (target_outs, _) = nets
        .encoder_target
        .forward_seq(&nets.encoder_target.initial_state(b), &batch.inputs);
    let (e, _) = stack_steps(&outs);
    let (_, e_next_target) = stack_steps(&target_outs);
    let actions = batch.flat_actions();
    let mask = batch.flat(&batch.mask);
    let target = batch.flat(&batch.rewards)
        + &(row_max(&nets.q_target.forward(&e_next_target)) * &batch.flat(&batch.not_done) * gamma);
    let (qvals, q_cache) = nets.q.forward_cached(&e);
    let pred = taken(&qvals, &actions);
    let weight = Array1::from_iter(
        (&target - &pred)
            .iter()
            .zip(&mask)
            .map(|(&psi, &m)| m * rates.rate(psi)),
    );
    // normalize by valid steps, not by the weights
    let count = mask.iter().filter(|&&w| w > 0.0).count().max(1) as f64;
    let diff = &pred - &target;
    let loss = (&diff * &diff * &weight).sum() / count;
    let d = diff * &weight * (2.0 / count);
    let de = nets.q.backward(&q_cache, &scatter(qvals.dim(), &actions, &d), &mut grad.q);
    let douts = unstack_steps(&de, None, b, steps);
    nets.encoder.backward_seq(&cache, &douts, &mut grad.encoder);
    (loss, grad)
}

struct Rollout {
    hidden: Option<Array2<f64>>,
    obs_dim: usize,
    n_actions: usize,
}

impl Rollout {
    fn step(&mut self, encoder: &Gru, prev_action: Option<usize>, observation: &[f32]) -> Result<()> {
        if observation.len() != self.obs_dim {
            return Err(Error::Shape {
                what: "agent observation",
                expected: self.obs_dim,
                actual: observation.len(),
            });
        }
        let mut x = Array2::zeros((1, self.obs_dim + self.n_actions));
        for (c, &v) in observation.iter().enumerate() {
            x[[0, c]] = v as f64;
        }
        if let Some(a) = prev_action {
            x[[0, self.obs_dim + a]] = 1.0;
        }
        let h = self.hidden.take().unwrap_or_else(|| encoder.initial_state(1));
        self.hidden = Some(encoder.step(&x, &h));
        Ok(())
    }

    fn current(&self) -> Result<&Array2<f64>> {
        self.hidden.as_ref().ok_or_else(|| usage("act called before begin_episode"))
    }
}

fn sample_batch(
    view: &AgentView<'_>,
    config: &RecurrentConfig,
    obs_dim: usize,
    n_actions: usize,
    rng: &mut seeding::Rng,
) -> Result<Option<EpisodeBatch>> {
    if view.n_episodes() < config.warmup_episodes.max(1) {
        return Ok(None);
    }
    let episodes = view.sample_episodes(config.batch_episodes.max(1), rng)?;
    EpisodeBatch::from_episodes(&episodes, obs_dim, n_actions).map(Some)
}

pub struct RecI2qAgent {
    agent: usize,
    config: RecurrentConfig,
    nets: RecI2qNetworks,
    adam_encoder: Adam,
    adam_qss: Adam,
    adam_f: Adam,
    adam_q: Adam,
    sample_rng: seeding::Rng,
    rollout: Rollout,
}

impl RecI2qAgent {
    pub fn new(agent: usize, obs_dim: usize, n_actions: usize, config: RecurrentConfig, seed: u64) -> Self {
        let seed = seeding::derive(seed, &[tag("rec-i2q"), agent as u64]);
        let nets = RecI2qNetworks::new(
            obs_dim,
            n_actions,
            config.gru_hidden,
            &config.hidden,
            &mut seeding::child_rng(seed, &[tag("init")]),
        );
        Self {
            agent,
            adam_encoder: Adam::for_module(config.lr_q, &nets.encoder),
            adam_qss: Adam::for_module(config.lr_qss, &nets.qss),
            adam_f: Adam::for_module(config.lr_f, &nets.f),
            adam_q: Adam::for_module(config.lr_q, &nets.q),
            nets,
            config,
            sample_rng: seeding::child_rng(seed, &[tag("sample")]),
            rollout: Rollout {
                hidden: None,
                obs_dim,
                n_actions,
            },
        }
    }

    pub fn networks(&self) -> &RecI2qNetworks {
        &self.nets
    }
}

impl AgentLearner for RecI2qAgent {
    fn begin_episode(&mut self, observation: &[f32]) -> Result<()> {
        self.rollout.hidden = None;
        self.rollout.step(&self.nets.encoder, None, observation)
    }

    fn act(&mut self, epsilon: f64, rng: &mut seeding::Rng) -> Result<usize> {
        let q = self.nets.q.forward(self.rollout.current()?);
        Ok(greedy_or_random(&q.row(0).to_vec(), epsilon, rng))
    }

    fn observe(&mut self, action: usize, observation: &[f32]) -> Result<()> {
        self.rollout.step(&self.nets.encoder, Some(action), observation)
    }

    fn end_episode(&mut self) -> Option<BeliefCache> {
        None
    }

    fn update(&mut self, view: AgentView<'_>) -> Result<LossSummary> {
        debug_assert_eq!(view.agent(), self.agent);
        let mut summary = LossSummary::default();
        let (obs_dim, n_actions) = (self.rollout.obs_dim, self.rollout.n_actions);
        if let Some(batch) = sample_batch(&view, &self.config, obs_dim, n_actions, &mut self.sample_rng)? {
            let (losses, grad) = rec_i2q_losses(&self.nets, &batch, self.config.gamma, self.config.lambda);
            self.adam_encoder.step(&mut self.nets.encoder, &grad.encoder)?;
            self.adam_qss.step(&mut self.nets.qss, &grad.qss)?;
            self.adam_f.step(&mut self.nets.f, &grad.f)?;
            self.adam_q.step(&mut self.nets.q, &grad.q)?;
            summary = LossSummary {
                qss: Some(losses.qss),
                f: Some(losses.f),
                q: Some(losses.q),
            };
        }
        nn::soft_update(&mut self.nets.qss_target, &self.nets.qss, self.config.tau)?;
        nn::soft_update(&mut self.nets.q_target, &self.nets.q, self.config.tau)?;
        Ok(summary)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(
            "rec_i2q_agent",
            serde_json::json!({
                "agent": self.agent,
                "obs_dim": self.rollout.obs_dim,
                "n_actions": self.rollout.n_actions,
                "gru_hidden": self.config.gru_hidden,
                "hidden": self.config.hidden,
            }),
        );
        c.push_params("encoder", &self.nets.encoder);
        c.push_params("qss", &self.nets.qss);
        c.push_params("f", &self.nets.f);
        c.push_params("q", &self.nets.q);
        c.push_params("qss_target", &self.nets.qss_target);
        c.push_params("q_target", &self.nets.q_target);
        c
    }
}

pub struct RecHystIqlAgent {
    agent: usize,
    config: RecurrentConfig,
    nets: RecHystNetworks,
    adam_encoder: Adam,
    adam_q: Adam,
    sample_rng: seeding::Rng,
    rollout: Rollout,
}

impl RecHystIqlAgent {
    pub fn new(agent: usize, obs_dim: usize, n_actions: usize, config: RecurrentConfig, seed: u64) -> Self {
        let seed = seeding::derive(seed, &[tag("rec-hyst-iql"), agent as u64]);
        let nets = RecHystNetworks::new(
            obs_dim,
            n_actions,
            config.gru_hidden,
            &config.hidden,
            &mut seeding::child_rng(seed, &[tag("init")]),
        );
        Self {
            agent,
            adam_encoder: Adam::for_module(config.lr_q, &nets.encoder),
            adam_q: Adam::for_module(config.lr_q, &nets.q),
            nets,
            config,
            sample_rng: seeding::child_rng(seed, &[tag("sample")]),
            rollout: Rollout {
                hidden: None,
                obs_dim,
                n_actions,
            },
        }
    }

    pub fn networks(&self) -> &RecHystNetworks {
        &self.nets
    }

    #[cfg(test)]
    pub(crate) fn rollout_hidden(&self) -> Option<&Array2<f64>> {
        self.rollout.hidden.as_ref()
    }
}

impl AgentLearner for RecHystIqlAgent {
    fn begin_episode(&mut self, observation: &[f32]) -> Result<()> {
        self.rollout.hidden = None;
        self.rollout.step(&self.nets.encoder, None, observation)
    }

    fn act(&mut self, epsilon: f64, rng: &mut seeding::Rng) -> Result<usize> {
        let q = self.nets.q.forward(self.rollout.current()?);
        Ok(greedy_or_random(&q.row(0).to_vec(), epsilon, rng))
    }

    fn observe(&mut self, action: usize, observation: &[f32]) -> Result<()> {
        self.rollout.step(&self.nets.encoder, Some(action), observation)
    }

    fn end_episode(&mut self) -> Option<BeliefCache> {
        None
    }

    fn update(&mut self, view: AgentView<'_>) -> Result<LossSummary> {
        debug_assert_eq!(view.agent(), self.agent);
        let mut summary = LossSummary::default();
        let (obs_dim, n_actions) = (self.rollout.obs_dim, self.rollout.n_actions);
        if let Some(batch) = sample_batch(&view, &self.config, obs_dim, n_actions, &mut self.sample_rng)? {
            let (loss, grad) = hyst_losses(&self.nets, &batch, self.config.gamma, self.config.rates);
            self.adam_encoder.step(&mut self.nets.encoder, &grad.encoder)?;
            self.adam_q.step(&mut self.nets.q, &grad.q)?;
            summary.q = Some(loss);
        }
        nn::soft_update(&mut self.nets.encoder_target, &self.nets.encoder, self.config.tau)?;
        nn::soft_update(&mut self.nets.q_target, &self.nets.q, self.config.tau)?;
        Ok(summary)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(
            "rec_hyst_iql_agent",
            serde_json::json!({
                "agent": self.agent,
                "obs_dim": self.rollout.obs_dim,
                "n_actions": self.rollout.n_actions,
                "gru_hidden": self.config.gru_hidden,
                "hidden": self.config.hidden,
                "alpha": self.config.rates.alpha,
                "beta": self.config.rates.beta,
            }),
        );
        c.push_params("encoder", &self.nets.encoder);
        c.push_params("q", &self.nets.q);
        c.push_params("encoder_target", &self.nets.encoder_target);
        c.push_params("q_target", &self.nets.q_target);
        c
    }
}

impl Params for RecI2qNetworks {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        for m in [&self.qss, &self.f, &self.q, &self.qss_target, &self.q_target] {
            t.extend(m.tensors());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        for m in [&mut self.qss, &mut self.f, &mut self.q, &mut self.qss_target, &mut self.q_target] {
            t.extend(m.tensors_mut());
        }
        t
    }
}

impl Params for RecHystNetworks {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.q.tensors());
        t.extend(self.encoder_target.tensors());
        t.extend(self.q_target.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.q.tensors_mut());
        t.extend(self.encoder_target.tensors_mut());
        t.extend(self.q_target.tensors_mut());
        t
    }
}
