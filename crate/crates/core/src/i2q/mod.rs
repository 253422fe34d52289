//! Belief-conditioned I2Q.
//!
//! Each agent learns a state-state value `Qss(o, o')` over its own
//! observations, a transition model `f(g, a)` that proposes the best
//! reachable next observation, and `Q(g, a)` that evaluates actions through
//! `f`. The encoding `g = [o, b(h)]` appends the frozen belief model's output.

pub mod tabular;

use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use crate::belief::BeliefModel;
use crate::checkpoint::Checkpoint;
use crate::data::{AgentView, BeliefCache, LocalTransition};
use crate::error::{usage, Error, Result};
use crate::learner::{AgentLearner, LossSummary};
use crate::nn::{self, Adam, Mlp};
use crate::seeding::{self, tag};

/// Input and output sizes of one agent's networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentSpec {
    pub obs_dim: usize,
    /// Zero when no belief model is used.
    pub belief_dim: usize,
    pub n_actions: usize,
}

impl AgentSpec {
    pub fn encoding_dim(&self) -> usize {
        self.obs_dim + self.belief_dim
    }
}

/// `g = [o, b]`, observation first.
pub fn encode_joint(spec: &AgentSpec, observation: &[f64], belief: &[f64]) -> Result<Vec<f64>> {
    if observation.len() != spec.obs_dim {
        return Err(Error::Shape {
            what: "encoding observation",
            expected: spec.obs_dim,
            actual: observation.len(),
        });
    }
    if belief.len() != spec.belief_dim {
        return Err(Error::Shape {
            what: "encoding belief",
            expected: spec.belief_dim,
            actual: belief.len(),
        });
    }
    let mut g = observation.to_vec();
    g.extend_from_slice(belief);
    Ok(g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentNetworks {
    pub spec: AgentSpec,
    /// `[o, o'] -> value`.
    pub qss: Mlp,
    /// `[g, onehot(a)] -> o'`.
    pub f: Mlp,
    /// `g -> value per action`.
    pub q: Mlp,
    pub qss_target: Mlp,
    pub q_target: Mlp,
}

impl AgentNetworks {
    pub fn new<R: Rng + ?Sized>(spec: AgentSpec, hidden: &[usize], rng: &mut R) -> Self {
        let qss = Mlp::new(2 * spec.obs_dim, hidden, 1, rng);
        let f = Mlp::new(spec.encoding_dim() + spec.n_actions, hidden, spec.obs_dim, rng);
        let q = Mlp::new(spec.encoding_dim(), hidden, spec.n_actions, rng);
        Self {
            spec,
            qss_target: qss.clone(),
            q_target: q.clone(),
            qss,
            f,
            q,
        }
    }

    /// Polyak-averages both target networks toward their online copies.
    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        nn::soft_update(&mut self.qss_target, &self.qss, tau)?;
        nn::soft_update(&mut self.q_target, &self.q, tau)
    }

    pub fn q_values(&self, encoding: &[f64]) -> Vec<f64> {
        self.q
            .forward(&nn::rows_from(&[encoding], encoding.len()))
            .row(0)
            .to_vec()
    }
}

/// Epsilon-greedy over `Q(g, .)`; ties go to the lowest index.
pub fn select_action<R: Rng + ?Sized>(nets: &AgentNetworks, encoding: &[f64], epsilon: f64, rng: &mut R) -> usize {
    greedy_or_random(&nets.q_values(encoding), epsilon, rng)
}

pub(crate) fn greedy_or_random<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q_values.len())
    } else {
        nn::argmax(q_values)
    }
}

/// Local transitions stacked row-wise.
#[derive(Clone, Debug)]
pub struct TransitionBatch {
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
    /// 0 on the final step of a terminated episode, 1 otherwise.
    pub not_done: Array1<f64>,
    /// `b(h_t)` and `b(h_{t+1})`; zero columns without a belief model.
    pub belief: Array2<f64>,
    pub next_belief: Array2<f64>,
    /// History summaries after `o_t`; zero columns without a belief model.
    pub hidden: Array2<f64>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn from_transitions(spec: &AgentSpec, hidden_dim: usize, transitions: &[LocalTransition<'_>]) -> Result<Self> {
        if transitions.is_empty() {
            return Err(usage("empty transition batch"));
        }
        let n = transitions.len();
        let mut batch = Self {
            obs: Array2::zeros((n, spec.obs_dim)),
            actions: Vec::with_capacity(n),
            rewards: Array1::zeros(n),
            next_obs: Array2::zeros((n, spec.obs_dim)),
            not_done: Array1::ones(n),
            belief: Array2::zeros((n, spec.belief_dim)),
            next_belief: Array2::zeros((n, spec.belief_dim)),
            hidden: Array2::zeros((n, if spec.belief_dim > 0 { hidden_dim } else { 0 })),
        };
        for (r, tr) in transitions.iter().enumerate() {
            if tr.observation().len() != spec.obs_dim {
                return Err(Error::Shape {
                    what: "transition observation",
                    expected: spec.obs_dim,
                    actual: tr.observation().len(),
                });
            }
            for (c, &v) in tr.observation().iter().enumerate() {
                batch.obs[[r, c]] = v as f64;
            }
            for (c, &v) in tr.next_observation().iter().enumerate() {
                batch.next_obs[[r, c]] = v as f64;
            }
            batch.actions.push(tr.action());
            batch.rewards[r] = tr.reward();
            if tr.terminal() {
                batch.not_done[r] = 0.0;
            }
            if spec.belief_dim > 0 {
                let cache = tr
                    .trajectory
                    .belief
                    .as_ref()
                    .ok_or_else(|| usage("transition has no cached beliefs"))?;
                batch.belief.row_mut(r).assign(&ndarray::ArrayView1::from(&cache.beliefs[tr.t]));
                batch
                    .next_belief
                    .row_mut(r)
                    .assign(&ndarray::ArrayView1::from(&cache.beliefs[tr.t + 1]));
                batch.hidden.row_mut(r).assign(&ndarray::ArrayView1::from(&cache.hiddens[tr.t]));
            }
        }
        Ok(batch)
    }

    fn encoding(&self) -> Array2<f64> {
        nn::hcat(&[self.obs.view(), self.belief.view()])
    }

    fn next_encoding(&self) -> Array2<f64> {
        nn::hcat(&[self.next_obs.view(), self.next_belief.view()])
    }
}

fn row_argmax(values: &Array2<f64>) -> Vec<usize> {
    values
        .rows()
        .into_iter()
        .map(|r| nn::argmax(&r.to_vec()))
        .collect()
}

fn row_max(values: &Array2<f64>) -> Array1<f64> {
    values.map_axis(Axis(1), |r| r.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
}

fn squared_error(pred: &Array1<f64>, target: &Array1<f64>) -> (f64, Array1<f64>) {
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.mapv(|d| d * d).sum() / n;
    (loss, diff * (2.0 / n))
}

/// `r + gamma * (1 - done) * Qss_target(o', f(g', a*))` with
/// `a* = argmax_a Q(g', a)`.
pub fn qss_targets(nets: &AgentNetworks, batch: &TransitionBatch, gamma: f64) -> Array1<f64> {
    let g_next = batch.next_encoding();
    let best = row_argmax(&nets.q.forward(&g_next));
    let proposed = nets
        .f
        .forward(&nn::hcat(&[g_next.view(), nn::one_hot(&best, nets.spec.n_actions).view()]));
    let bootstrap = nets
        .qss_target
        .forward(&nn::hcat(&[batch.next_obs.view(), proposed.view()]))
        .column(0)
        .to_owned();
    &batch.rewards + &(bootstrap * &batch.not_done * gamma)
}

fn qss_pass(nets: &AgentNetworks, batch: &TransitionBatch, gamma: f64, grad: Option<&mut Mlp>) -> f64 {
    let target = qss_targets(nets, batch, gamma);
    let input = nn::hcat(&[batch.obs.view(), batch.next_obs.view()]);
    let (out, cache) = nets.qss.forward_cached(&input);
    let (loss, d) = squared_error(&out.column(0).to_owned(), &target);
    if let Some(grad) = grad {
        nets.qss.backward(&cache, &d.insert_axis(Axis(1)), grad);
    }
    loss
}

pub fn qss_loss(nets: &AgentNetworks, batch: &TransitionBatch, gamma: f64) -> f64 {
    qss_pass(nets, batch, gamma, None)
}

/// Loss and its gradient with respect to the `qss` parameters.
pub fn qss_loss_and_grad(nets: &AgentNetworks, batch: &TransitionBatch, gamma: f64) -> (f64, Mlp) {
    let mut grad = nets.qss.zeros_like();
    let loss = qss_pass(nets, batch, gamma, Some(&mut grad));
    (loss, grad)
}

fn f_pass(nets: &AgentNetworks, batch: &TransitionBatch, lambda: f64, grad: Option<&mut Mlp>) -> f64 {
    let n = batch.len() as f64;
    let d_obs = nets.spec.obs_dim;
    let input = nn::hcat(&[batch.encoding().view(), nn::one_hot(&batch.actions, nets.spec.n_actions).view()]);
    let (pred, f_cache) = nets.f.forward_cached(&input);
    let (value, q_cache) = nets.qss.forward_cached(&nn::hcat(&[batch.obs.view(), pred.view()]));
    let err = &pred - &batch.next_obs;
    let objective = value.sum() * lambda - err.mapv(|e| e * e).sum();
    let loss = -objective / n;
    if let Some(grad) = grad {
        let dvalue = nets
            .qss
            .input_gradient(&q_cache, &Array2::from_elem((batch.len(), 1), 1.0));
        let dpred = (&dvalue.slice(s![.., d_obs..]) * lambda - &(err * 2.0)) * (-1.0 / n);
        nets.f.backward(&f_cache, &dpred, grad);
    }
    loss
}

/// Negated transition objective `-mean[lambda Qss(o, f) - |f - o'|^2]`.
pub fn f_loss(nets: &AgentNetworks, batch: &TransitionBatch, lambda: f64) -> f64 {
    f_pass(nets, batch, lambda, None)
}

/// Loss and its gradient with respect to the `f` parameters (`Qss` frozen).
pub fn f_loss_and_grad(nets: &AgentNetworks, batch: &TransitionBatch, lambda: f64) -> (f64, Mlp) {
    let mut grad = nets.f.zeros_like();
    let loss = f_pass(nets, batch, lambda, Some(&mut grad));
    (loss, grad)
}

/// Beliefs over the histories extended by `(predicted o', a)`, with `m`
/// prior samples per row drawn from `seed`.
pub fn extended_beliefs(
    belief: &BeliefModel,
    batch: &TransitionBatch,
    predicted: &Array2<f64>,
    m: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if m < 1 {
        return Err(usage("belief needs at least one sample"));
    }
    let input = nn::hcat(&[predicted.view(), nn::one_hot(&batch.actions, belief.spec.n_actions).view()]);
    let extended = belief.advance(&batch.hidden, &input);
    Ok(belief.beliefs_from_hidden(&extended, m, &mut seeding::rng(seed)))
}

/// `r + gamma * (1 - done) * max_a' Q_target([f(g, a), b(h')], a')`.
pub fn q_targets(
    nets: &AgentNetworks,
    belief: Option<&BeliefModel>,
    batch: &TransitionBatch,
    gamma: f64,
    m: usize,
    seed: u64,
) -> Result<Array1<f64>> {
    let input = nn::hcat(&[batch.encoding().view(), nn::one_hot(&batch.actions, nets.spec.n_actions).view()]);
    let predicted = nets.f.forward(&input);
    let g_next = match belief {
        Some(model) if nets.spec.belief_dim > 0 => {
            let b = extended_beliefs(model, batch, &predicted, m, seed)?;
            nn::hcat(&[predicted.view(), b.view()])
        }
        None if nets.spec.belief_dim == 0 => predicted,
        _ => return Err(usage("belief model presence does not match the network spec")),
    };
    let bootstrap = row_max(&nets.q_target.forward(&g_next));
    Ok(&batch.rewards + &(bootstrap * &batch.not_done * gamma))
}

fn q_pass(
    nets: &AgentNetworks,
    belief: Option<&BeliefModel>,
    batch: &TransitionBatch,
    gamma: f64,
    m: usize,
    seed: u64,
    grad: Option<&mut Mlp>,
) -> Result<f64> {
    let target = q_targets(nets, belief, batch, gamma, m, seed)?;
    let (out, cache) = nets.q.forward_cached(&batch.encoding());
    let taken = Array1::from_iter(batch.actions.iter().enumerate().map(|(r, &a)| out[[r, a]]));
    let (loss, d) = squared_error(&taken, &target);
    if let Some(grad) = grad {
        let mut dout = Array2::zeros(out.raw_dim());
        for (r, &a) in batch.actions.iter().enumerate() {
            dout[[r, a]] = d[r];
        }
        nets.q.backward(&cache, &dout, grad);
    }
    Ok(loss)
}

pub fn q_loss(
    nets: &AgentNetworks,
    belief: Option<&BeliefModel>,
    batch: &TransitionBatch,
    gamma: f64,
    m: usize,
    seed: u64,
) -> Result<f64> {
    q_pass(nets, belief, batch, gamma, m, seed, None)
}

/// Loss and its gradient with respect to the `q` parameters.
pub fn q_loss_and_grad(
    nets: &AgentNetworks,
    belief: Option<&BeliefModel>,
    batch: &TransitionBatch,
    gamma: f64,
    m: usize,
    seed: u64,
) -> Result<(f64, Mlp)> {
    let mut grad = nets.q.zeros_like();
    let loss = q_pass(nets, belief, batch, gamma, m, seed, Some(&mut grad))?;
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct I2qConfig {
    pub hidden: Vec<usize>,
    pub lr_qss: f64,
    pub lr_f: f64,
    pub lr_q: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Prior samples per belief.
    pub belief_samples: usize,
    /// Transitions per update = `batch_episodes` x mean episode length...
    pub batch_episodes: usize,
    /// ...capped at this many, when set.
    pub max_batch_transitions: Option<usize>,
    /// Updates start once the buffer holds this many episodes.
    pub warmup_episodes: usize,
}

impl Default for I2qConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            lr_qss: 0.001,
            lr_f: 0.001,
            lr_q: 0.001,
            gamma: 0.99,
            lambda: 0.1,
            tau: 0.005,
            belief_samples: 10,
            batch_episodes: 32,
            max_batch_transitions: None,
            warmup_episodes: 32,
        }
    }
}

/// One agent's Belief-I2Q learner. Owns its networks, optimizers and random
/// streams; reads its frozen belief model.
pub struct BeliefI2qAgent {
    agent: usize,
    config: I2qConfig,
    nets: AgentNetworks,
    adam_qss: Adam,
    adam_f: Adam,
    adam_q: Adam,
    belief: Option<Arc<BeliefModel>>,
    seed: u64,
    updates: u64,
    sample_rng: seeding::Rng,
    rollout_belief_rng: seeding::Rng,
    // episode state
    hidden: Option<Array2<f64>>,
    observation: Vec<f64>,
    current_belief: Vec<f64>,
    cache: BeliefCache,
}

impl BeliefI2qAgent {
    /// `belief = None` runs plain observation-space I2Q.
    pub fn new(
        agent: usize,
        obs_dim: usize,
        n_actions: usize,
        belief: Option<Arc<BeliefModel>>,
        config: I2qConfig,
        seed: u64,
    ) -> Result<Self> {
        if let Some(b) = &belief {
            if b.spec.obs_dim != obs_dim || b.spec.n_actions != n_actions {
                return Err(usage("belief model was trained for a different observation or action space"));
            }
        }
        if config.belief_samples < 1 {
            return Err(usage("belief needs at least one sample"));
        }
        let spec = AgentSpec {
            obs_dim,
            belief_dim: belief.as_ref().map_or(0, |b| b.belief_dim()),
            n_actions,
        };
        let seed = seeding::derive(seed, &[tag("belief-i2q"), agent as u64]);
        let nets = AgentNetworks::new(spec, &config.hidden, &mut seeding::child_rng(seed, &[tag("init")]));
        Ok(Self {
            agent,
            adam_qss: Adam::for_module(config.lr_qss, &nets.qss),
            adam_f: Adam::for_module(config.lr_f, &nets.f),
            adam_q: Adam::for_module(config.lr_q, &nets.q),
            nets,
            config,
            belief,
            seed,
            updates: 0,
            sample_rng: seeding::child_rng(seed, &[tag("sample")]),
            rollout_belief_rng: seeding::child_rng(seed, &[tag("rollout-belief")]),
            hidden: None,
            observation: Vec::new(),
            current_belief: Vec::new(),
            cache: BeliefCache {
                hiddens: Vec::new(),
                beliefs: Vec::new(),
            },
        })
    }

    pub fn networks(&self) -> &AgentNetworks {
        &self.nets
    }

    fn consume(&mut self, prev_action: Option<usize>, observation: &[f32]) -> Result<()> {
        if observation.len() != self.nets.spec.obs_dim {
            return Err(Error::Shape {
                what: "agent observation",
                expected: self.nets.spec.obs_dim,
                actual: observation.len(),
            });
        }
        self.observation = observation.iter().map(|&v| v as f64).collect();
        if let Some(model) = &self.belief {
            let h = self
                .hidden
                .take()
                .unwrap_or_else(|| model.history_encoder.initial_state(1));
            let x = nn::rows_from(&[&model.input_row(observation, prev_action)], model.spec.input_dim());
            let h = model.advance(&h, &x);
            let b = model.beliefs_from_hidden(&h, self.config.belief_samples, &mut self.rollout_belief_rng);
            self.current_belief = b.row(0).to_vec();
            self.cache.hiddens.push(h.row(0).to_vec());
            self.cache.beliefs.push(self.current_belief.clone());
            self.hidden = Some(h);
        }
        Ok(())
    }
}

impl AgentLearner for BeliefI2qAgent {
    fn begin_episode(&mut self, observation: &[f32]) -> Result<()> {
        self.hidden = None;
        self.cache.hiddens.clear();
        self.cache.beliefs.clear();
        self.consume(None, observation)
    }

    fn act(&mut self, epsilon: f64, rng: &mut seeding::Rng) -> Result<usize> {
        let g = encode_joint(&self.nets.spec, &self.observation, &self.current_belief)?;
        Ok(select_action(&self.nets, &g, epsilon, rng))
    }

    fn observe(&mut self, action: usize, observation: &[f32]) -> Result<()> {
        self.consume(Some(action), observation)
    }

    fn end_episode(&mut self) -> Option<BeliefCache> {
        self.belief.as_ref().map(|_| std::mem::replace(&mut self.cache, BeliefCache {
            hiddens: Vec::new(),
            beliefs: Vec::new(),
        }))
    }

    fn update(&mut self, view: AgentView<'_>) -> Result<LossSummary> {
        debug_assert_eq!(view.agent(), self.agent);
        let mut summary = LossSummary::default();
        if view.n_episodes() >= self.config.warmup_episodes.max(1) {
            let mut n = (self.config.batch_episodes as f64 * view.mean_episode_len()).round().max(1.0) as usize;
            if let Some(cap) = self.config.max_batch_transitions {
                n = n.min(cap.max(1));
            }
            let transitions = view.sample_transitions(n, &mut self.sample_rng)?;
            let hidden_dim = self.belief.as_ref().map_or(0, |b| b.hidden_dim());
            let batch = TransitionBatch::from_transitions(&self.nets.spec, hidden_dim, &transitions)?;
            let gamma = self.config.gamma;

            let (loss, grad) = qss_loss_and_grad(&self.nets, &batch, gamma);
            self.adam_qss.step(&mut self.nets.qss, &grad)?;
            summary.qss = Some(loss);

            let (loss, grad) = f_loss_and_grad(&self.nets, &batch, self.config.lambda);
            self.adam_f.step(&mut self.nets.f, &grad)?;
            summary.f = Some(loss);

            let belief_seed = seeding::derive(self.seed, &[tag("q-belief"), self.updates]);
            let (loss, grad) = q_loss_and_grad(
                &self.nets,
                self.belief.as_deref(),
                &batch,
                gamma,
                self.config.belief_samples,
                belief_seed,
            )?;
            self.adam_q.step(&mut self.nets.q, &grad)?;
            summary.q = Some(loss);
            self.updates += 1;
        }
        self.nets.soft_update(self.config.tau)?;
        Ok(summary)
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(
            "belief_i2q_agent",
            serde_json::json!({
                "agent": self.agent,
                "obs_dim": self.nets.spec.obs_dim,
                "belief_dim": self.nets.spec.belief_dim,
                "n_actions": self.nets.spec.n_actions,
                "hidden": self.config.hidden,
                "updates": self.updates,
                "adam_steps": [self.adam_qss.step, self.adam_f.step, self.adam_q.step],
            }),
        );
        c.push_params("qss", &self.nets.qss);
        c.push_params("f", &self.nets.f);
        c.push_params("q", &self.nets.q);
        c.push_params("qss_target", &self.nets.qss_target);
        c.push_params("q_target", &self.nets.q_target);
        for (name, adam) in [("qss", &self.adam_qss), ("f", &self.adam_f), ("q", &self.adam_q)] {
            c.push(format!("adam_{name}_m"), adam.m.clone());
            c.push(format!("adam_{name}_v"), adam.v.clone());
        }
        c
    }
}
