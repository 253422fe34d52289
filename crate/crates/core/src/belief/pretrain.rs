//! Belief pre-training on state-labelled roll-outs.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{BeliefModel, BeliefSpec, SequenceBatch};
use crate::data::LabeledDataset;
use crate::error::{usage, Result};
use crate::nn::{Adam, Params};
use crate::seeding::{self, tag};

/// Which agents' histories a model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeliefTarget {
    /// Histories of every agent, pooled into one model.
    Shared,
    Agent(usize),
}

/// One agent-episode: encoder inputs and decoder targets per step.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// Agent-episodes cut from a labelled dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSet {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub target_dim: usize,
    pub sequences: Vec<Sequence>,
}

impl SequenceSet {
    pub fn from_dataset(dataset: &LabeledDataset, target: BeliefTarget) -> Result<Self> {
        let env = dataset.env.build()?;
        let agents: Vec<usize> = match target {
            BeliefTarget::Shared => (0..env.n_agents()).collect(),
            BeliefTarget::Agent(i) if i < env.n_agents() => vec![i],
            BeliefTarget::Agent(i) => return Err(usage(format!("no agent {i}"))),
        };
        let obs_dim = env.obs_dim(agents[0]);
        if agents.iter().any(|&i| env.obs_dim(i) != obs_dim) {
            return Err(usage("a shared belief model needs identical observation spaces"));
        }
        let n_actions = env.n_actions();
        let target_dim = env.unobserved_dim(agents[0]);
        let mut sequences = Vec::new();
        for ep in &dataset.episodes {
            for &i in &agents {
                let mut inputs = Vec::with_capacity(ep.states.len());
                let mut targets = Vec::with_capacity(ep.states.len());
                for (t, state) in ep.states.iter().enumerate() {
                    let mut x = vec![0.0; obs_dim + n_actions];
                    for (v, &o) in x.iter_mut().zip(&ep.observations[t][i]) {
                        *v = o as f64;
                    }
                    if t > 0 {
                        x[obs_dim + ep.actions[t - 1][i]] = 1.0;
                    }
                    inputs.push(x);
                    targets.push(env.unobserved_features(state, i).into_iter().map(f64::from).collect());
                }
                sequences.push(Sequence { inputs, targets });
            }
        }
        Ok(Self {
            obs_dim,
            n_actions,
            target_dim,
            sequences,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Pads the chosen sequences to a common length.
    pub fn batch(&self, indices: &[usize]) -> SequenceBatch {
        let b = indices.len();
        let t_max = indices.iter().map(|&i| self.sequences[i].inputs.len()).max().unwrap_or(0);
        let width = self.obs_dim + self.n_actions;
        let mut inputs = vec![Array2::zeros((b, width)); t_max];
        let mut targets = vec![Array2::zeros((b, self.target_dim)); t_max];
        let mut mask = Array2::zeros((b, t_max));
        for (row, &i) in indices.iter().enumerate() {
            let seq = &self.sequences[i];
            for t in 0..seq.inputs.len() {
                for (c, &v) in seq.inputs[t].iter().enumerate() {
                    inputs[t][[row, c]] = v;
                }
                for (c, &v) in seq.targets[t].iter().enumerate() {
                    targets[t][[row, c]] = v;
                }
                mask[[row, t]] = 1.0;
            }
        }
        SequenceBatch { inputs, targets, mask }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub history_hidden: usize,
    pub mlp_hidden: Vec<usize>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            latent_dim: 16,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            validation_fraction: 0.1,
            history_hidden: 64,
            mlp_hidden: vec![64, 64],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation loss before training, then after every epoch.
    pub validation_loss: Vec<f64>,
    /// Epoch whose parameters were kept (0 = initial).
    pub best_epoch: usize,
}

fn evaluate(model: &BeliefModel, set: &SequenceSet, indices: &[usize], batch_size: usize, seed: u64) -> f64 {
    let mut rng = seeding::rng(seed);
    let mut total = 0.0;
    let mut count = 0.0;
    for chunk in indices.chunks(batch_size) {
        let batch = set.batch(chunk);
        let noise = model.draw_noise(&batch, &mut rng);
        let n = batch.valid();
        total += model.batch_loss(&batch, &noise).loss * n;
        count += n;
    }
    total / count.max(1.0)
}

/// Trains a belief model with Adam until `max_epochs` or until the
/// validation loss has not improved for `patience` epochs; returns the
/// parameters with the best validation loss.
pub fn pretrain(set: &SequenceSet, config: &PretrainConfig, seed: u64) -> Result<(BeliefModel, PretrainReport)> {
    if set.is_empty() {
        return Err(usage("cannot pre-train on an empty dataset"));
    }
    if config.batch_size == 0 || config.latent_dim == 0 {
        return Err(usage("batch size and latent dimension must be positive"));
    }
    let mut spec = BeliefSpec::new(set.obs_dim, set.n_actions, set.target_dim, config.latent_dim);
    spec.history_hidden = config.history_hidden;
    spec.mlp_hidden = config.mlp_hidden.clone();
    let mut model = BeliefModel::new(spec, &mut seeding::child_rng(seed, &[tag("belief-init")]));
    let mut adam = Adam::for_module(config.learning_rate, &model);

    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut seeding::child_rng(seed, &[tag("belief-split")]));
    let n_val = ((set.len() as f64 * config.validation_fraction).round() as usize).min(set.len() - 1);
    let (val, train) = order.split_at(n_val);
    let (val, mut train) = (val.to_vec(), train.to_vec());
    // With nothing held out, early stopping watches the training set.
    let monitor = if val.is_empty() { train.clone() } else { val };
    let val_seed = seeding::derive(seed, &[tag("belief-val")]);

    let mut report = PretrainReport::default();
    let mut best = evaluate(&model, set, &monitor, config.batch_size, val_seed);
    report.validation_loss.push(best);
    let mut best_model = model.clone();
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        let mut rng = seeding::child_rng(seed, &[tag("belief-epoch"), epoch as u64]);
        train.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0.0;
        for chunk in train.chunks(config.batch_size) {
            let batch = set.batch(chunk);
            let noise = model.draw_noise(&batch, &mut rng);
            let (terms, grad) = model.batch_loss_and_grad(&batch, &noise);
            adam.step(&mut model, &grad)?;
            total += terms.loss * batch.valid();
            count += batch.valid();
        }
        report.train_loss.push(total / count.max(1.0));
        let v = evaluate(&model, set, &monitor, config.batch_size, val_seed);
        report.validation_loss.push(v);
        if v < best {
            best = v;
            best_model = model.clone();
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    debug_assert_eq!(best_model.num_params(), model.num_params());
    Ok((best_model, report))
}
