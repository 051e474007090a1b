//! Minibatch training.
//!
//! A training unit is one time-ordered sequence of frames (a single frame
//! for spatial tasks); its loss is the mean per-frame loss. A batch averages
//! the gradients of its units. Units of a batch are differentiated in
//! parallel, each on its own tape, and their gradients are summed in batch
//! order so results do not depend on the worker count.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{Checkpoint, Moments};
use crate::error::{Error, Result};
use crate::eval::anticipation_shift;
use crate::graph::SceneGraph;
use crate::losses::{inverse_frequency_weights, total_loss, LossConfig, Targets};
use crate::model::{GpnnModel, ReadoutActivation};
use crate::params::{Bound, ParamStore};
use crate::synth::Dataset;
use crate::tensor::Tensor;

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "GPNN_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Per-frame structure and label inference.
    #[default]
    SpatialDetection,
    /// Per-frame labels over sequences, link state carried across frames.
    TemporalRecognition,
    /// Frame `t-1` observations supervised with frame `t` labels.
    TemporalAnticipation,
}

/// Splits a dataset into training units for `task`.
pub fn units(data: &Dataset, task: Task) -> Result<Vec<Vec<SceneGraph>>> {
    match task {
        Task::SpatialDetection => Ok(data.scenes().map(|s| vec![s.clone()]).collect()),
        Task::TemporalRecognition => Ok(data.sequences.clone()),
        Task::TemporalAnticipation => data
            .sequences
            .iter()
            .map(|s| anticipation_shift(s))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimizerKind::Sgd,
            lr: 1e-3,
            decay: 0.8,
            decay_every: 5,
            batch_size: 32,
            epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!(
                "decay {} must lie in (0, 1]",
                self.decay
            )));
        }
        if self.decay_every == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "decay_every and batch_size must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0
        {
            return Err(Error::Config(
                "beta1, beta2 must lie in [0, 1) and eps must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate used during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub loss: LossConfig,
    /// Seed of the per-epoch shuffling stream.
    pub seed: u64,
    /// Recompute sigmoid-head class weights from the training labels.
    pub inverse_frequency: bool,
}

/// Per-head inverse-frequency class weights over the nodes each head
/// applies to; softmax heads get unit weights.
pub fn class_weights(model: &GpnnModel, units: &[Vec<SceneGraph>]) -> Vec<Vec<f64>> {
    model
        .heads()
        .enumerate()
        .map(|(h, spec)| match spec.activation {
            ReadoutActivation::Softmax => vec![1.0; spec.classes],
            ReadoutActivation::Sigmoid => {
                let selected: Vec<Tensor> = units
                    .iter()
                    .flatten()
                    .filter_map(|s| {
                        let labels = s.gt_labels.as_ref()?;
                        let rows: Vec<usize> = (0..s.node_count())
                            .filter(|&v| spec.nodes.accepts(s.node_kinds[v]))
                            .collect();
                        (!rows.is_empty()).then(|| crate::graph::select_rows(&labels[h], &rows))
                    })
                    .collect();
                if selected.is_empty() {
                    vec![1.0; spec.classes]
                } else {
                    inverse_frequency_weights(&selected)
                }
            }
        })
        .collect()
}

/// Mean per-frame loss of one unit on `tape`, plus the mean adjacency term.
pub fn unit_loss(
    tape: &mut Tape,
    model: &GpnnModel,
    params: &Bound,
    unit: &[SceneGraph],
    cfg: &LossConfig,
) -> Result<(Var, f64)> {
    if unit.is_empty() {
        return Err(Error::Config("empty training unit".into()));
    }
    let heads: Vec<_> = model.heads().cloned().collect();
    let vars = model.forward_sequence(tape, params, unit)?;
    let mut acc: Option<Var> = None;
    let mut adjacency = 0.0;
    for (v, frame) in vars.iter().zip(unit) {
        let parts = total_loss(tape, v, Targets::of(frame)?, &heads, &frame.node_kinds, cfg)?;
        adjacency += parts.adjacency;
        acc = Some(match acc {
            None => parts.total,
            Some(a) => tape.add(a, parts.total)?,
        });
    }
    let k = unit.len() as f64;
    let mean = tape.scale(acc.expect("nonempty unit"), 1.0 / k)?;
    Ok((mean, adjacency / k))
}

/// Loss value and parameter gradients of one unit.
pub fn unit_gradients(
    model: &GpnnModel,
    unit: &[SceneGraph],
    cfg: &LossConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let params = model.params.bind(&mut tape);
    let (loss, _) = unit_loss(&mut tape, model, &params, unit, cfg)?;
    let value = tape.value(loss).item();
    tape.backward(loss)?;
    Ok((value, params.grads(&tape)?))
}

/// Loss without recording gradients.
pub fn unit_loss_value(
    model: &GpnnModel,
    unit: &[SceneGraph],
    cfg: &LossConfig,
) -> Result<(f64, f64)> {
    let mut tape = Tape::inference();
    let params = model.params.bind(&mut tape);
    let (loss, adjacency) = unit_loss(&mut tape, model, &params, unit, cfg)?;
    Ok((tape.value(loss).item(), adjacency))
}

/// Node-level label accuracy: a node counts as correct for a head when the
/// arg-max class matches (softmax) or every class thresholded at 0.5
/// matches (sigmoid).
pub fn label_accuracy(model: &GpnnModel, units: &[Vec<SceneGraph>]) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for unit in units {
        let parsed = model.parse_sequence(unit)?;
        for (res, frame) in parsed.iter().zip(unit) {
            let labels = Targets::of(frame)?.labels;
            for (h, spec) in model.heads().enumerate() {
                let out = &res.outputs[h];
                for v in
                    (0..frame.node_count()).filter(|&v| spec.nodes.accepts(frame.node_kinds[v]))
                {
                    let (y, t) = (out.row(v), labels[h].row(v));
                    let ok = match spec.activation {
                        ReadoutActivation::Softmax => t[argmax(y)] == 1.0,
                        ReadoutActivation::Sigmoid => {
                            y.iter().zip(t).all(|(&p, &l)| (p > 0.5) == (l == 1.0))
                        }
                    };
                    correct += usize::from(ok);
                    total += 1;
                }
            }
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Worker count from [`WORKERS_ENV`]; `None` when unset.
pub fn worker_count() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
    }
}

/// Thread pool sized by [`WORKERS_ENV`], or rayon's default when unset.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count()? {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// Completed epochs; row 0 describes the initial parameters.
    pub epoch: usize,
    pub lr: f64,
    /// Mean minibatch loss seen during the epoch (0 for row 0).
    pub train_loss: f64,
    /// Mean loss over all units after the epoch.
    pub loss: f64,
    pub adjacency_loss: f64,
    pub accuracy: f64,
}

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,loss,adjacency_loss,accuracy";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.lr, r.train_loss, r.loss, r.adjacency_loss, r.accuracy
        );
    }
    out
}

/// Owns a model and its optimizer state.
pub struct Trainer {
    pub model: GpnnModel,
    pub config: TrainConfig,
    pub epoch: usize,
    step: u64,
    moments: Option<Moments>,
    pool: rayon::ThreadPool,
}

fn zeros_like(store: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, t) in store.iter() {
        out.register(name, Tensor::zeros(t.shape()));
    }
    out
}

impl Trainer {
    pub fn new(model: GpnnModel, config: TrainConfig) -> Result<Self> {
        config.optim.validate()?;
        config.loss.validate()?;
        let moments = (config.optim.kind == OptimizerKind::Adam).then(|| Moments {
            m: zeros_like(&model.params),
            v: zeros_like(&model.params),
        });
        Ok(Trainer {
            model,
            config,
            epoch: 0,
            step: 0,
            moments,
            pool: worker_pool()?,
        })
    }

    /// Resumes from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ckpt: &Checkpoint, config: TrainConfig) -> Result<Self> {
        let mut t = Trainer::new(ckpt.model()?, config)?;
        t.epoch = ckpt.epoch;
        t.step = ckpt.step;
        match (&mut t.moments, &ckpt.moments) {
            (Some(mine), Some(saved)) => {
                mine.m.load_from(&saved.m)?;
                mine.v.load_from(&saved.v)?;
            }
            (None, None) => {}
            (Some(_), None) if ckpt.step == 0 => {}
            _ => {
                return Err(Error::Config(
                    "checkpoint optimizer state does not match the configured optimizer".into(),
                ))
            }
        }
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.config.clone(),
            params: self.model.params.clone(),
            epoch: self.epoch,
            step: self.step,
            moments: self.moments.clone(),
        }
    }

    /// Mean loss, mean adjacency loss and label accuracy over `units`.
    pub fn evaluate(&self, units: &[Vec<SceneGraph>]) -> Result<(f64, f64, f64)> {
        let model = &self.model;
        let cfg = &self.config.loss;
        let parts: Vec<(f64, f64)> = self.pool.install(|| {
            units
                .par_iter()
                .map(|u| unit_loss_value(model, u, cfg))
                .collect::<Result<_>>()
        })?;
        let k = units.len().max(1) as f64;
        let loss = parts.iter().map(|p| p.0).sum::<f64>() / k;
        let adjacency = parts.iter().map(|p| p.1).sum::<f64>() / k;
        Ok((loss, adjacency, label_accuracy(model, units)?))
    }

    /// Gradient averaged over `batch`, and the mean loss.
    pub fn batch_gradients(&self, batch: &[&[SceneGraph]]) -> Result<(f64, Vec<Tensor>)> {
        let model = &self.model;
        let cfg = &self.config.loss;
        let results: Vec<(f64, Vec<Tensor>)> = self.pool.install(|| {
            batch
                .par_iter()
                .map(|u| unit_gradients(model, u, cfg))
                .collect::<Result<_>>()
        })?;
        let k = batch.len() as f64;
        let mut iter = results.into_iter();
        let (mut loss, mut grads) = iter
            .next()
            .ok_or_else(|| Error::Config("empty batch".into()))?;
        for (l, g) in iter {
            loss += l;
            for (acc, x) in grads.iter_mut().zip(&g) {
                acc.add_assign(x);
            }
        }
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|x| *x /= k);
        }
        Ok((loss / k, grads))
    }

    fn apply(&mut self, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let o = &self.config.optim;
        match &mut self.moments {
            None => {
                for (p, g) in self.model.params.values_mut().iter_mut().zip(grads) {
                    for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= lr * d;
                    }
                }
            }
            Some(mom) => {
                let t = self.step as i32;
                let c1 = 1.0 - o.beta1.powi(t);
                let c2 = 1.0 - o.beta2.powi(t);
                let params = self.model.params.values_mut();
                let (ms, vs) = (mom.m.values_mut(), mom.v.values_mut());
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(ms.iter_mut())
                    .zip(vs.iter_mut())
                {
                    let it = p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut());
                    for (((x, &d), mi), vi) in it {
                        *mi = o.beta1 * *mi + (1.0 - o.beta1) * d;
                        *vi = o.beta2 * *vi + (1.0 - o.beta2) * d * d;
                        *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + o.eps);
                    }
                }
            }
        }
    }

    /// One pass over `units` in a seeded shuffled order.
    pub fn run_epoch(&mut self, units: &[Vec<SceneGraph>]) -> Result<EpochMetrics> {
        if units.is_empty() {
            return Err(Error::Config("no training units".into()));
        }
        let lr = self.config.optim.lr_at(self.epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let mut order: Vec<usize> = (0..units.len()).collect();
        order.shuffle(&mut rng);
        let mut seen = 0.0;
        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.config.optim.batch_size) {
            let batch: Vec<&[SceneGraph]> = chunk.iter().map(|&i| units[i].as_slice()).collect();
            let (loss, grads) = self.batch_gradients(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Config(format!(
                    "loss diverged to {loss} in epoch {}",
                    self.epoch + 1
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len() as f64;
            self.apply(&grads, lr);
        }
        self.epoch += 1;
        let (loss, adjacency_loss, accuracy) = self.evaluate(units)?;
        Ok(EpochMetrics {
            epoch: self.epoch,
            lr,
            train_loss: loss_sum / seen,
            loss,
            adjacency_loss,
            accuracy,
        })
    }

    /// Trains for `epochs` more epochs. When starting from epoch 0 the first
    /// row describes the untrained model.
    pub fn fit(&mut self, units: &[Vec<SceneGraph>], epochs: usize) -> Result<Vec<EpochMetrics>> {
        let mut rows = Vec::with_capacity(epochs + 1);
        if self.epoch == 0 {
            let (loss, adjacency_loss, accuracy) = self.evaluate(units)?;
            rows.push(EpochMetrics {
                epoch: 0,
                lr: self.config.optim.lr_at(0),
                train_loss: 0.0,
                loss,
                adjacency_loss,
                accuracy,
            });
        }
        for _ in 0..epochs {
            rows.push(self.run_epoch(units)?);
        }
        Ok(rows)
    }
}
