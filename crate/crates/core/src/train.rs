//! Training loop: parameter groups with a fusion learning-rate multiplier,
//! SGD / AdamW, decay schedules, evaluation, and prediction.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{score, Labels, MetricError, MetricKind};
use crate::model::{cls_loss, predict_span, qa_loss, Group, HeadKind, ModelError, RoofModel};
use crate::pipeline::{span_text, Example, Target};
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training needs at least one example")]
    EmptyDataset,
    #[error("example {0} has no training target")]
    Unlabeled(String),
    #[error("bad train config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl OptimizerKind {
    pub fn adamw_default() -> OptimizerKind {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    LinearDecay,
    CosineDecay,
}

/// Scheduled learning rate at `step` of `total_steps`, without warmup.
pub fn lr_at(step: usize, total_steps: usize, scheduler: SchedulerKind, group_lr: f64) -> f64 {
    assert!(total_steps >= 1, "scheduler needs at least one step");
    assert!(step <= total_steps, "step beyond schedule");
    let frac = step as f64 / total_steps as f64;
    match scheduler {
        SchedulerKind::LinearDecay => group_lr * (1.0 - frac),
        SchedulerKind::CosineDecay => group_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Learning-rate multiplier applied to the fusion group only.
    pub fusion_lr_multiplier: f64,
    pub optimizer: OptimizerKind,
    pub scheduler: SchedulerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.base_lr > 0.0) {
            return Err(TrainError::BadConfig("base_lr must be positive".into()));
        }
        if !(self.fusion_lr_multiplier >= 1.0) {
            return Err(TrainError::BadConfig(
                "fusion_lr_multiplier must be at least 1".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(TrainError::BadConfig("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One parameter group: its label, learning-rate multiplier relative to the
/// base rate, and member tensors.
#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub group: Group,
    pub multiplier: f64,
    pub tensors: Vec<Tensor>,
}

/// The trainable partition of the model's tensors. The frozen knowledge
/// group is excluded entirely in cached mode.
#[derive(Debug, Clone)]
pub struct ParamGroups {
    pub groups: Vec<ParamGroup>,
}

pub fn make_param_groups(model: &RoofModel, cfg: &TrainConfig) -> ParamGroups {
    let mut by_group: HashMap<Group, Vec<Tensor>> = HashMap::new();
    for (_, group, tensor) in model.weights.named_tensors() {
        if model.cfg.cached_kb && group == Group::Kb {
            continue;
        }
        by_group.entry(group).or_default().push(tensor);
    }
    let mut groups = Vec::new();
    for group in [Group::Task, Group::Kb, Group::Fusion, Group::Head] {
        if let Some(tensors) = by_group.remove(&group) {
            let multiplier = if group == Group::Fusion {
                cfg.fusion_lr_multiplier
            } else {
                1.0
            };
            groups.push(ParamGroup { group, multiplier, tensors });
        }
    }
    ParamGroups { groups }
}

impl ParamGroups {
    pub fn zero_grads(&self) {
        for pg in &self.groups {
            for t in &pg.tensors {
                t.zero_grad();
            }
        }
    }

    /// Multiplier for a group, or None when the group is not trainable.
    pub fn multiplier(&self, group: Group) -> Option<f64> {
        self.groups.iter().find(|pg| pg.group == group).map(|pg| pg.multiplier)
    }

    /// Scales every gradient so the global L2 norm does not exceed `clip`.
    pub fn clip_grads(&self, clip: f64) {
        let mut sq = 0.0;
        for pg in &self.groups {
            for t in &pg.tensors {
                if let Some(g) = t.grad() {
                    sq += g.iter().map(|x| x * x).sum::<f64>();
                }
            }
        }
        let norm = sq.sqrt();
        if norm > clip {
            let scale = clip / norm;
            for pg in &self.groups {
                for t in &pg.tensors {
                    t.map_grad(|g| {
                        for x in g {
                            *x *= scale;
                        }
                    });
                }
            }
        }
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Stateful optimizer over the param groups. Parameters without a gradient
/// this step are skipped.
pub struct Optimizer {
    kind: OptimizerKind,
    state: HashMap<u64, AdamState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Optimizer {
        Optimizer { kind, state: HashMap::new() }
    }

    /// Applies one update with the scheduled base rate. Every per-element
    /// step is computed as (rate x gradient term) x group multiplier, so
    /// groups with identical gradients move in exact multiplier proportion.
    pub fn step(&mut self, groups: &ParamGroups, scheduled_base_lr: f64) {
        for pg in &groups.groups {
            let mult = pg.multiplier;
            for tensor in &pg.tensors {
                let Some(grad) = tensor.grad() else { continue };
                match self.kind {
                    OptimizerKind::Sgd => {
                        let delta: Vec<f64> =
                            grad.iter().map(|&g| (scheduled_base_lr * g) * mult).collect();
                        tensor.add_scaled(&delta, -1.0);
                    }
                    OptimizerKind::AdamW { beta1, beta2, eps, weight_decay } => {
                        let n = grad.len();
                        let state = self.state.entry(tensor.id()).or_insert_with(|| AdamState {
                            m: vec![0.0; n],
                            v: vec![0.0; n],
                            t: 0,
                        });
                        state.t += 1;
                        let bc1 = 1.0 - beta1.powi(state.t as i32);
                        let bc2 = 1.0 - beta2.powi(state.t as i32);
                        let data = tensor.to_vec();
                        let mut delta = vec![0.0; n];
                        for i in 0..n {
                            let g = grad[i];
                            state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                            state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                            let m_hat = state.m[i] / bc1;
                            let v_hat = state.v[i] / bc2;
                            let term = m_hat / (v_hat.sqrt() + eps) + weight_decay * data[i];
                            delta[i] = (scheduled_base_lr * term) * mult;
                        }
                        tensor.add_scaled(&delta, -1.0);
                    }
                }
            }
        }
    }
}

/// One optimizer step's log entry. Learning rates are the effective
/// (scheduled x multiplier) values; a frozen group logs 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr_task: f64,
    pub lr_kb: f64,
    pub lr_fusion: f64,
    pub lr_head: f64,
}

fn example_loss(
    model: &RoofModel,
    g: &Graph,
    example: &Example,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor, TrainError> {
    let out = model.forward(g, &example.task, example.kb.source(), rng)?;
    match example.target {
        Target::Span { start, end } => Ok(qa_loss(g, &out.logits, start, end)?),
        Target::Class(label) => Ok(cls_loss(g, &out.logits, label)?),
        Target::None => Err(TrainError::Unlabeled(example.id.clone())),
    }
}

/// Runs the full loop: seeded shuffling per epoch, mean loss per batch, one
/// optimizer step per batch under the decay schedule. Returns one record per
/// step.
pub fn train(
    model: &RoofModel,
    examples: &[Example],
    cfg: &TrainConfig,
) -> Result<Vec<StepRecord>, TrainError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let groups = make_param_groups(model, cfg);
    let mut optimizer = Optimizer::new(cfg.optimizer);

    let batches_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let mut log = Vec::with_capacity(total_steps);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            groups.zero_grads();
            let inv = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &idx in batch {
                let g = Graph::train();
                let loss = example_loss(model, &g, &examples[idx], &mut dropout_rng)?;
                batch_loss += loss.item() * inv;
                let scaled = g.scale(&loss, inv)?;
                g.backward(&scaled)?;
            }
            if let Some(clip) = cfg.grad_clip {
                groups.clip_grads(clip);
            }
            let base = lr_at(step, total_steps, cfg.scheduler, cfg.base_lr);
            optimizer.step(&groups, base);
            log.push(StepRecord {
                step,
                epoch,
                loss: batch_loss,
                lr_task: base * groups.multiplier(Group::Task).unwrap_or(0.0),
                lr_kb: base * groups.multiplier(Group::Kb).unwrap_or(0.0),
                lr_fusion: base * groups.multiplier(Group::Fusion).unwrap_or(0.0),
                lr_head: base * groups.multiplier(Group::Head).unwrap_or(0.0),
            });
            step += 1;
        }
    }
    Ok(log)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// A decoded model output for one example.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Span {
        id: String,
        start: usize,
        end: usize,
        text: String,
    },
    Class {
        id: String,
        class: usize,
    },
}

/// Runs inference (eval mode, dropout off) and decodes per the head.
pub fn predict(model: &RoofModel, examples: &[Example]) -> Result<Vec<Prediction>, TrainError> {
    let mut out = Vec::with_capacity(examples.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for example in examples {
        let g = Graph::eval();
        let fwd = model.forward(&g, &example.task, example.kb.source(), &mut rng)?;
        match model.cfg.head {
            HeadKind::Qa => {
                let (lo, hi) = example.window.ok_or(ModelError::EmptyWindow {
                    lo: 0,
                    hi: 0,
                    len: fwd.logits.rows(),
                })?;
                let (start, end) = predict_span(&fwd.logits, lo, hi)?;
                out.push(Prediction::Span {
                    id: example.id.clone(),
                    start,
                    end,
                    text: span_text(example, start, end),
                });
            }
            HeadKind::Classification { .. } => {
                let class = argmax(&fwd.logits.to_vec());
                out.push(Prediction::Class { id: example.id.clone(), class });
            }
        }
    }
    Ok(out)
}

/// Scores the model's predictions on labeled examples with the given metric.
pub fn evaluate(
    model: &RoofModel,
    examples: &[Example],
    kind: MetricKind,
) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let predictions = predict(model, examples)?;
    match model.cfg.head {
        HeadKind::Qa => {
            let mut pred = Vec::with_capacity(examples.len());
            let mut gold = Vec::with_capacity(examples.len());
            for (example, p) in examples.iter().zip(&predictions) {
                let Target::Span { start, end } = example.target else {
                    return Err(TrainError::Unlabeled(example.id.clone()));
                };
                let Prediction::Span { start: ps, end: pe, .. } = p else { unreachable!() };
                pred.push((*ps, *pe));
                gold.push((start, end));
            }
            Ok(score(kind, Labels::Spans { pred: &pred, gold: &gold })?)
        }
        HeadKind::Classification { .. } => {
            let mut pred = Vec::with_capacity(examples.len());
            let mut gold = Vec::with_capacity(examples.len());
            for (example, p) in examples.iter().zip(&predictions) {
                let Target::Class(label) = example.target else {
                    return Err(TrainError::Unlabeled(example.id.clone()));
                };
                let Prediction::Class { class, .. } = p else { unreachable!() };
                pred.push(*class);
                gold.push(label);
            }
            if kind == MetricKind::PearsonSpearman {
                let p: Vec<f64> = pred.iter().map(|&x| x as f64).collect();
                let g: Vec<f64> = gold.iter().map(|&x| x as f64).collect();
                Ok(score(kind, Labels::Reals { pred: &p, gold: &g })?)
            } else {
                Ok(score(kind, Labels::Classes { pred: &pred, gold: &gold })?)
            }
        }
    }
}
