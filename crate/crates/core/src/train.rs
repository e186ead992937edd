//! Joint training of encoder, latent dynamics and auxiliary head.
//!
//! The objective is `L = L_dyn + c_p * L_aux`, both plain mean squared
//! errors:
//!
//! * `L_dyn = mean ||T(E(o_t), a_t) - E(o_{t+1})||²`, with gradients flowing
//!   into both encoder calls (no stop-gradient, no target encoder);
//! * `L_aux = mean ||P(E(o_t)) - p(o_t)||²`.
//!
//! A decoder probe is trained alongside on a detached copy of `E(o_t)`, so its
//! loss never reaches the encoder.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, EmbeddingSet};
use crate::autodiff::{Tape, Tensor};
use crate::dataset::{CollectedData, TransitionDataset};
use crate::env::{CountingEnv, CountingEnvConfig, Observation};
use crate::error::{Error, Result};
use crate::mdp::INC;
use crate::model::{Architecture, ConvSpec, InputSpec, ModelParams};
use crate::optim::{Adam, AdamConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AuxMode {
    /// `p(o) = r(o)`, taken from the dataset.
    Reward,
    /// `p(o) = W x(o)` for a fixed random `W` with this many outputs.
    RandomLinear(usize),
    None,
}

impl fmt::Display for AuxMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuxMode::Reward => f.write_str("reward"),
            AuxMode::RandomLinear(d) => write!(f, "random:{d}"),
            AuxMode::None => f.write_str("none"),
        }
    }
}

impl FromStr for AuxMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reward" => Ok(AuxMode::Reward),
            "none" => Ok(AuxMode::None),
            _ => s
                .strip_prefix("random:")
                .and_then(|d| d.parse().ok())
                .filter(|&d| d > 0)
                .map(AuxMode::RandomLinear)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown aux mode {s:?}"))),
        }
    }
}

impl TryFrom<String> for AuxMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AuxMode> for String {
    fn from(m: AuxMode) -> String {
        m.to_string()
    }
}

/// How the learning rate moves over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linearly from `base_lr` at step 1 to 0 after the last step.
    LinearDecay,
}

impl LrSchedule {
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::LinearDecay => 1.0 - (step - 1) as f64 / total as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub c_p: f64,
    pub latent_dim: usize,
    /// Convolutional front end for image inputs; ignored for one-hot inputs.
    pub conv: Option<ConvSpec>,
    pub encoder_hidden: Vec<usize>,
    pub dynamics_hidden: usize,
    pub aux_hidden: usize,
    pub decoder_hidden: usize,
    pub base_lr: f64,
    pub encoder_lr_scale: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub aux_mode: AuxMode,
    pub dyn_loss_enabled: bool,
    pub decoder_enabled: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub replay_capacity: usize,
    pub report_every: usize,
    pub eval_every: usize,
    pub holdout_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c_p: 1.0,
            latent_dim: 32,
            conv: None,
            encoder_hidden: vec![256, 128, 64],
            dynamics_hidden: 128,
            aux_hidden: 128,
            decoder_hidden: 128,
            base_lr: 3e-4,
            encoder_lr_scale: 0.3,
            lr_schedule: LrSchedule::Constant,
            batch_size: 64,
            steps: 5_000,
            seed: 0,
            aux_mode: AuxMode::Reward,
            dyn_loss_enabled: true,
            decoder_enabled: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            replay_capacity: 10_000,
            report_every: 500,
            eval_every: 500,
            holdout_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.c_p >= 0.0) {
            return fail("c_p must be >= 0");
        }
        if self.latent_dim == 0
            || self.dynamics_hidden == 0
            || self.aux_hidden == 0
            || self.decoder_hidden == 0
            || self.encoder_hidden.contains(&0)
        {
            return fail("layer widths must be positive");
        }
        if self.batch_size == 0 || self.steps == 0 || self.replay_capacity == 0 {
            return fail("batch_size, steps and replay_capacity must be positive");
        }
        if !self.dyn_loss_enabled && self.aux_mode == AuxMode::None {
            return fail("at least one of the dynamics and auxiliary losses must be enabled");
        }
        if !(self.base_lr > 0.0) || !(self.encoder_lr_scale >= 0.0) {
            return fail("learning rates must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.base_lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// A frozen random linear map used as the auxiliary function.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjection {
    /// `in_dim x out_dim`, entries `N(0, 1/in_dim)`.
    pub matrix: Tensor,
}

impl RandomProjection {
    pub fn apply(&self, inputs: &Tensor) -> Tensor {
        inputs.dot(&self.matrix)
    }
}

pub fn random_linear_aux(seed: u64, out_dim: usize, in_dim: usize) -> Result<RandomProjection> {
    if out_dim == 0 || in_dim == 0 {
        return Err(Error::InvalidConfig("projection dims must be positive".into()));
    }
    let mut rng = rng::seeded(rng::derive_seed(seed, rng::stream::AUX_PROJECTION));
    let scale = 1.0 / (in_dim as f64).sqrt();
    let matrix = Tensor::from_shape_fn((in_dim, out_dim), |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    });
    Ok(RandomProjection { matrix })
}

/// Where encoder inputs come from.
#[derive(Debug, Clone)]
pub enum Inputs {
    OneHot(usize),
    Frames(Vec<Observation>),
}

impl Inputs {
    pub fn spec(&self) -> InputSpec {
        match self {
            Inputs::OneHot(n) => InputSpec::OneHot { num_observations: *n },
            Inputs::Frames(f) => InputSpec::Image {
                channels: f[0].channels,
                size: f[0].size,
            },
        }
    }

    /// Encoder input: one-hot ids as is, pixels shifted to `[-0.5, 0.5]`.
    fn fill_input(&self, id: usize, row: &mut [f64]) {
        match self {
            Inputs::OneHot(_) => {
                row.fill(0.0);
                row[id] = 1.0;
            }
            Inputs::Frames(f) => {
                for (r, &p) in row.iter_mut().zip(&f[id].pixels) {
                    *r = f64::from(p) / 255.0 - 0.5;
                }
            }
        }
    }

    /// Decoder target in `[-1, 1]`.
    fn fill_target(&self, id: usize, row: &mut [f64]) {
        match self {
            Inputs::OneHot(_) => {
                row.fill(-1.0);
                row[id] = 1.0;
            }
            Inputs::Frames(f) => {
                for (r, &p) in row.iter_mut().zip(&f[id].pixels) {
                    *r = 2.0 * f64::from(p) / 255.0 - 1.0;
                }
            }
        }
    }

    fn label(&self, id: usize) -> usize {
        match self {
            Inputs::OneHot(_) => id,
            Inputs::Frames(f) => f[id].count,
        }
    }

    /// Preprocessed encoder inputs for `ids`, one row each.
    pub fn batch(&self, ids: &[usize]) -> Tensor {
        let dim = self.spec().dim();
        let mut out = Tensor::zeros((ids.len(), dim));
        for (row, &id) in out.rows_mut().into_iter().zip(ids) {
            self.fill_input(id, row.into_slice().expect("standard layout"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub source: usize,
    pub action: usize,
    pub successor: usize,
    pub reward_aux: Vec<f64>,
}

/// Transitions plus the observations they index and a held-out evaluation
/// set.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub inputs: Inputs,
    pub transitions: Vec<Transition>,
    pub num_actions: usize,
    pub reward_dim: usize,
    pub holdout_inputs: Inputs,
    pub holdout_ids: Vec<usize>,
    /// Number of ground-truth classes (observations for tabular data, counts
    /// for frames).
    pub num_labels: usize,
}

impl TrainingData {
    /// One-hot observations of a tabular MDP; the holdout cycles through all
    /// observation ids.
    pub fn tabular(dataset: &TransitionDataset, holdout_size: usize) -> Result<Self> {
        dataset.validate()?;
        let n = dataset.num_observations;
        Ok(Self {
            inputs: Inputs::OneHot(n),
            transitions: dataset
                .records
                .iter()
                .map(|r| Transition {
                    source: r.source,
                    action: r.action,
                    successor: r.successor,
                    reward_aux: r.aux_value.clone(),
                })
                .collect(),
            num_actions: dataset.num_actions,
            reward_dim: dataset.aux_dim,
            holdout_inputs: Inputs::OneHot(n),
            holdout_ids: (0..holdout_size).map(|i| i % n).collect(),
            num_labels: n,
        })
    }

    /// Rendered frames from the counting environment. The holdout is freshly
    /// rendered with every count equally represented.
    pub fn frames(data: &CollectedData, env: &CountingEnvConfig, holdout_size: usize) -> Result<Self> {
        data.dataset.validate()?;
        let transitions = data
            .dataset
            .records
            .iter()
            .zip(&data.frame_index)
            .map(|(r, &(s, t))| Transition {
                source: s,
                action: r.action,
                successor: t,
                reward_aux: r.aux_value.clone(),
            })
            .collect();
        let holdout = holdout_frames(env, holdout_size)?;
        Ok(Self {
            inputs: Inputs::Frames(data.frames.clone()),
            transitions,
            num_actions: data.dataset.num_actions,
            reward_dim: data.dataset.aux_dim,
            holdout_ids: (0..holdout.len()).collect(),
            holdout_inputs: Inputs::Frames(holdout),
            num_labels: env.max_count + 1,
        })
    }

    /// Tabular inputs take one-hot actions, frames a single signed real.
    pub fn action_dim(&self) -> usize {
        match self.inputs {
            Inputs::OneHot(_) => self.num_actions,
            Inputs::Frames(_) => 1,
        }
    }

    fn fill_action(&self, action: usize, row: &mut [f64]) {
        match self.inputs {
            Inputs::OneHot(_) => {
                row.fill(0.0);
                row[action] = 1.0;
            }
            Inputs::Frames(_) => row[0] = if action == INC { 1.0 } else { -1.0 },
        }
    }

    pub fn architecture(&self, config: &TrainConfig) -> Architecture {
        let aux_dim = match config.aux_mode {
            AuxMode::Reward => self.reward_dim,
            AuxMode::RandomLinear(d) => d,
            AuxMode::None => self.reward_dim.max(1),
        };
        Architecture {
            input: self.inputs.spec(),
            action_dim: self.action_dim(),
            latent_dim: config.latent_dim,
            aux_dim,
            conv: match self.inputs {
                Inputs::Frames(_) => config.conv.clone(),
                Inputs::OneHot(_) => None,
            },
            encoder_hidden: config.encoder_hidden.clone(),
            dynamics_hidden: config.dynamics_hidden,
            aux_hidden: config.aux_hidden,
            decoder_hidden: config.decoder_hidden,
        }
    }

    /// Assembles a minibatch from transition indices.
    pub fn batch(&self, indices: &[usize], aux: &AuxSource) -> Batch {
        let b = indices.len();
        let dim = self.inputs.spec().dim();
        let mut obs = Tensor::zeros((b, dim));
        let mut next_obs = Tensor::zeros((b, dim));
        let mut actions = Tensor::zeros((b, self.action_dim()));
        let mut decoder_target = Tensor::zeros((b, dim));
        for (k, &i) in indices.iter().enumerate() {
            let t = &self.transitions[i];
            self.inputs.fill_input(t.source, obs.row_mut(k).into_slice().expect("contiguous"));
            self.inputs
                .fill_input(t.successor, next_obs.row_mut(k).into_slice().expect("contiguous"));
            self.inputs
                .fill_target(t.source, decoder_target.row_mut(k).into_slice().expect("contiguous"));
            self.fill_action(t.action, actions.row_mut(k).into_slice().expect("contiguous"));
        }
        let aux_target = match aux {
            AuxSource::Reward => Some(Tensor::from_shape_fn((b, self.reward_dim), |(k, d)| {
                self.transitions[indices[k]].reward_aux[d]
            })),
            AuxSource::Projection(p) => Some(p.apply(&obs)),
            AuxSource::None => None,
        };
        Batch {
            obs,
            actions,
            next_obs,
            aux_target,
            decoder_target,
        }
    }

    /// Embeddings of the holdout set, labelled by ground-truth class.
    pub fn holdout_embeddings(&self, params: &ModelParams) -> Result<EmbeddingSet> {
        let x = self.holdout_inputs.batch(&self.holdout_ids);
        let z = params.encode(&x)?;
        let labels: Vec<usize> = self
            .holdout_ids
            .iter()
            .map(|&i| self.holdout_inputs.label(i))
            .collect();
        EmbeddingSet::new(z, labels.clone(), self.num_labels)?.with_source_ids(labels)
    }
}

fn holdout_frames(env: &CountingEnvConfig, size: usize) -> Result<Vec<Observation>> {
    let mut cfg = env.clone();
    cfg.seed = rng::derive_seed(env.seed, rng::stream::HOLDOUT);
    let mut renderer = CountingEnv::new(cfg)?;
    Ok((0..size)
        .map(|i| renderer.sample_observation(i % (env.max_count + 1)))
        .collect())
}

/// How auxiliary targets are produced for a batch.
#[derive(Debug, Clone)]
pub enum AuxSource {
    Reward,
    Projection(RandomProjection),
    None,
}

impl AuxSource {
    pub fn new(mode: AuxMode, seed: u64, input_dim: usize) -> Result<Self> {
        Ok(match mode {
            AuxMode::Reward => AuxSource::Reward,
            AuxMode::RandomLinear(d) => AuxSource::Projection(random_linear_aux(seed, d, input_dim)?),
            AuxMode::None => AuxSource::None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Tensor,
    pub actions: Tensor,
    pub next_obs: Tensor,
    pub aux_target: Option<Tensor>,
    pub decoder_target: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub c_p: f64,
    pub dynamics: bool,
    pub aux: bool,
    pub decoder: bool,
}

impl LossWeights {
    pub fn from_config(config: &TrainConfig) -> Self {
        Self {
            c_p: config.c_p,
            dynamics: config.dyn_loss_enabled,
            aux: config.aux_mode != AuxMode::None,
            decoder: config.decoder_enabled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradNorms {
    pub encoder: f64,
    pub dynamics: f64,
    pub aux_head: f64,
    pub decoder: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub step: usize,
    pub dyn_loss: f64,
    pub aux_loss: f64,
    /// `dyn_loss + c_p * aux_loss` over the enabled terms.
    pub total: f64,
    pub decoder_loss: f64,
    pub grad_norms: GradNorms,
}

/// Loss terms and the gradient of `total + decoder_loss` for every parameter
/// tensor, in [`ModelParams::tensors`] order. Disabled terms report 0.
pub fn loss(params: &ModelParams, batch: &Batch, weights: LossWeights) -> Result<(LossReport, Vec<Tensor>)> {
    if batch.obs.nrows() == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let z = params.encode_on_tape(&mut tape, &vars, &batch.obs);

    let mut terms = Vec::new();
    let mut dyn_loss = 0.0;
    if weights.dynamics {
        let z_next = params.encode_on_tape(&mut tape, &vars, &batch.next_obs);
        let actions = tape.input(batch.actions.clone());
        let joined = tape.concat_cols(z, actions);
        let predicted = vars.dynamics.forward(&mut tape, joined);
        let l = tape.mean_squared_error(predicted, z_next);
        dyn_loss = tape.scalar(l);
        terms.push(l);
    }
    let mut aux_loss = 0.0;
    if weights.aux {
        let target = batch
            .aux_target
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("aux loss enabled without targets".into()))?;
        let target = tape.input(target.clone());
        let predicted = vars.aux_head.forward(&mut tape, z);
        let l = tape.mean_squared_error(predicted, target);
        aux_loss = tape.scalar(l);
        terms.push(tape.scale(l, weights.c_p));
    }
    let mut decoder_loss = 0.0;
    if weights.decoder {
        let barrier = tape.detach(z);
        let target = tape.input(batch.decoder_target.clone());
        let recon = vars.decoder.forward(&mut tape, barrier);
        let l = tape.mean_squared_error(recon, target);
        decoder_loss = tape.scalar(l);
        terms.push(l);
    }
    tape.check_finite()?;

    let total = match (weights.dynamics, weights.aux) {
        (true, true) => dyn_loss + weights.c_p * aux_loss,
        (true, false) => dyn_loss,
        (false, true) => weights.c_p * aux_loss,
        (false, false) => 0.0,
    };

    let Some((&first, rest)) = terms.split_first() else {
        return Err(Error::InvalidConfig("no loss term enabled".into()));
    };
    let objective = rest.iter().fold(first, |acc, &t| tape.add(acc, t));
    let mut adjoints = tape.backward(objective);
    let grads: Vec<Tensor> = params
        .tensors()
        .iter()
        .zip(vars.all())
        .map(|(p, v)| adjoints.take(v).unwrap_or_else(|| Tensor::zeros(p.raw_dim())))
        .collect();

    let enc = params.encoder_tensor_count();
    let dyn_end = enc + 2 * params.dynamics.layers.len();
    let aux_end = dyn_end + 2 * params.aux_head.layers.len();
    let norm = |gs: &[Tensor]| gs.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    let grad_norms = GradNorms {
        encoder: norm(&grads[..enc]),
        dynamics: norm(&grads[enc..dyn_end]),
        aux_head: norm(&grads[dyn_end..aux_end]),
        decoder: norm(&grads[aux_end..]),
    };
    Ok((
        LossReport {
            step: 0,
            dyn_loss,
            aux_loss,
            total,
            decoder_loss,
            grad_norms,
        },
        grads,
    ))
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub dyn_loss: f64,
    pub aux_loss: f64,
    pub total: f64,
    pub decoder_loss: f64,
    pub centroid_acc: Option<f64>,
}

pub fn metrics_jsonl(records: &[MetricsRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("plain data serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: usize,
    pub centroid_acc: f64,
    pub params: ModelParams,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Parameters with the highest holdout nearest-centroid accuracy seen at
    /// an evaluation step (later steps win ties).
    pub best: Option<Checkpoint>,
    pub metrics: Vec<MetricsRecord>,
    pub last_report: LossReport,
}

/// FIFO buffer of transition indices with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: std::collections::VecDeque<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: std::collections::VecDeque::with_capacity(capacity.min(1 << 20)),
        }
    }

    pub fn push(&mut self, item: usize) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Vec<usize> {
        (0..n)
            .map(|_| self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}

pub fn train(config: &TrainConfig, data: &TrainingData) -> Result<TrainOutcome> {
    train_from(config, data, None)
}

/// Trains from `init` (or a fresh seeded initialization).
pub fn train_from(config: &TrainConfig, data: &TrainingData, init: Option<ModelParams>) -> Result<TrainOutcome> {
    config.validate()?;
    if data.transitions.is_empty() {
        return Err(Error::InvalidConfig("no transitions to train on".into()));
    }
    let arch = data.architecture(config);
    arch.validate()?;
    let mut params = init.unwrap_or_else(|| ModelParams::init(arch.clone(), config.seed));
    if params.arch != arch {
        return Err(Error::DimensionMismatch("initial parameters do not match the architecture".into()));
    }
    let aux = AuxSource::new(config.aux_mode, config.seed, arch.input.dim())?;
    let weights = LossWeights::from_config(config);

    let mut buffer = ReplayBuffer::new(config.replay_capacity);
    (0..data.transitions.len()).for_each(|i| buffer.push(i));

    let enc = params.encoder_tensor_count();
    let scales = (0..params.tensors().len())
        .map(|i| if i < enc { config.encoder_lr_scale } else { 1.0 })
        .collect();
    let mut adam = Adam::new(config.adam(), params.tensors(), scales);
    let mut batch_rng = rng::seeded(rng::derive_seed(config.seed, rng::stream::BATCHES));

    let mut metrics = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut last_report = None;
    for step in 1..=config.steps {
        let indices = buffer.sample(&mut batch_rng, config.batch_size);
        let batch = data.batch(&indices, &aux);
        let (mut report, grads) = loss(&params, &batch, weights).map_err(|e| Error::Divergence {
            step,
            detail: e.to_string(),
        })?;
        report.step = step;
        adam.config.lr = config.base_lr * config.lr_schedule.factor(step, config.steps);
        adam.step(&mut params.tensors_mut(), &grads);

        let is_last = step == config.steps;
        let centroid_acc = if step % config.eval_every.max(1) == 0 || is_last {
            let embs = data.holdout_embeddings(&params).map_err(|e| Error::Divergence {
                step,
                detail: e.to_string(),
            })?;
            let acc = analysis::nearest_centroid_accuracy(&embs)?;
            if best.as_ref().is_none_or(|b| acc >= b.centroid_acc) {
                best = Some(Checkpoint {
                    step,
                    centroid_acc: acc,
                    params: params.clone(),
                });
            }
            Some(acc)
        } else {
            None
        };
        if step % config.report_every.max(1) == 0 || is_last {
            log::debug!(
                "step {step}: dyn {:.3e} aux {:.3e} dec {:.3e} acc {centroid_acc:?}",
                report.dyn_loss,
                report.aux_loss,
                report.decoder_loss
            );
            metrics.push(MetricsRecord {
                step,
                dyn_loss: report.dyn_loss,
                aux_loss: report.aux_loss,
                total: report.total,
                decoder_loss: report.decoder_loss,
                centroid_acc,
            });
        }
        last_report = Some(report);
    }
    Ok(TrainOutcome {
        params,
        best,
        metrics,
        last_report: last_report.expect("steps > 0"),
    })
}

/// Loss terms over every transition (in chunks of `chunk`), averaged with
/// equal weight per transition.
pub fn dataset_loss(
    params: &ModelParams,
    data: &TrainingData,
    config: &TrainConfig,
    chunk: usize,
) -> Result<LossReport> {
    let aux = AuxSource::new(config.aux_mode, config.seed, params.arch.input.dim())?;
    let weights = LossWeights::from_config(config);
    let n = data.transitions.len();
    let mut acc = [0.0; 4];
    let indices: Vec<usize> = (0..n).collect();
    for part in indices.chunks(chunk.max(1)) {
        let (r, _) = loss(params, &data.batch(part, &aux), weights)?;
        let w = part.len() as f64 / n as f64;
        acc[0] += w * r.dyn_loss;
        acc[1] += w * r.aux_loss;
        acc[2] += w * r.total;
        acc[3] += w * r.decoder_loss;
    }
    Ok(LossReport {
        step: 0,
        dyn_loss: acc[0],
        aux_loss: acc[1],
        total: acc[2],
        decoder_loss: acc[3],
        grad_norms: GradNorms {
            encoder: f64::NAN,
            dynamics: f64::NAN,
            aux_head: f64::NAN,
            decoder: f64::NAN,
        },
    })
}
