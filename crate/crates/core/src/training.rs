//! Losses, the teacher-forced forward pass and the per-sample SGD loop.

use std::path::Path;
use std::sync::Arc;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tgmr_autograd::{checkpoint, sgd_step, AutogradError, BoundParams, Graph, Tensor, Var};

use crate::config::{Config, TrainMode};
use crate::error::{Error, Result};
use crate::model::{Model, ScaleModel, StepInput};
use crate::replay::{replay_decode, DecodeInputs};
use crate::scene::{Point, TrajectorySample};

/// Log-probabilities below this are clamped in the classification loss.
pub const LOG_FLOOR: f64 = -30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Time-weighting scale of the regression loss; `None` is `+inf`.
    pub mu: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.2,
            mu: Some(10.0),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!("alpha and beta must be non-negative, got {} and {}", self.alpha, self.beta)));
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0) {
                return Err(Error::Config(format!("mu must be positive or null, got {mu}")));
            }
        }
        Ok(())
    }

    /// `mu` as applied under `mode`: the time weighting is single-future only.
    pub fn effective_mu(&self, mode: TrainMode) -> Option<f64> {
        match mode {
            TrainMode::SingleFuture => self.mu,
            TrainMode::MultiFuture => None,
        }
    }
}

/// Weight of 1-based step `t` out of `t_loss`: `exp((t_loss - t + 1) / mu)`.
pub fn step_weight(t: usize, t_loss: usize, mu: Option<f64>) -> f64 {
    match mu {
        Some(mu) if mu.is_finite() => ((t_loss + 1 - t) as f64 / mu).exp(),
        _ => 1.0,
    }
}

pub fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

/// Mean negative log-probability of the targets; `pred_dists[t]` are
/// probabilities over nodes.
pub fn classification_loss(pred_dists: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if pred_dists.len() != targets.len() || targets.is_empty() {
        return Err(Error::Shape(format!("{} distributions for {} targets", pred_dists.len(), targets.len())));
    }
    let mut total = 0.0;
    for (d, &t) in pred_dists.iter().zip(targets) {
        let p = *d.get(t).ok_or_else(|| Error::Shape(format!("target node {t} outside {} nodes", d.len())))?;
        total -= p.ln().max(LOG_FLOOR);
    }
    Ok(total / targets.len() as f64)
}

/// Time-weighted smooth-L1 over per-step 2D offsets.
pub fn regression_loss(pred: &[Point], target: &[Point], mu: Option<f64>) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let n = pred.len();
    let total: f64 = pred
        .iter()
        .zip(target)
        .enumerate()
        .map(|(i, (p, q))| (smooth_l1(q[0] - p[0]) + smooth_l1(q[1] - p[1])) * step_weight(i + 1, n, mu))
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleLoss {
    pub classification: f64,
    /// Absent without a location stream.
    pub regression: Option<f64>,
}

pub fn total_loss(per_scale: &[ScaleLoss], cfg: &LossConfig) -> f64 {
    per_scale
        .iter()
        .map(|s| cfg.alpha * s.classification + cfg.beta * s.regression.unwrap_or(0.0))
        .sum()
}

fn classification_var(g: &mut Graph, log_probs: &[Var], targets: &[usize]) -> Result<(Var, bool)> {
    let mut terms = Vec::with_capacity(targets.len());
    let mut floored = false;
    for (&lp, &t) in log_probs.iter().zip(targets) {
        let v = g.select(lp, t)?;
        if g.value(v).data()[0] < LOG_FLOOR {
            floored = true;
            terms.push(g.constant(Tensor::scalar(LOG_FLOOR)?));
        } else {
            terms.push(v);
        }
    }
    let stacked = stack_scalars(g, &terms)?;
    let s = g.sum(stacked)?;
    Ok((g.scale(s, -1.0 / targets.len() as f64)?, floored))
}

fn stack_scalars(g: &mut Graph, xs: &[Var]) -> Result<Var> {
    let rs: Vec<Var> = xs.iter().map(|&x| g.reshape(x, &[1])).collect::<std::result::Result<_, _>>()?;
    Ok(g.concat(&rs, 0)?)
}

fn regression_var(g: &mut Graph, offsets: &[Var], targets: &[StepInput], mu: Option<f64>) -> Result<Var> {
    let n = targets.len();
    let mut terms = Vec::with_capacity(n);
    for (i, (&o, t)) in offsets.iter().zip(targets).enumerate() {
        let row: Arc<[usize]> = vec![t.node].into();
        let p = g.gather_rows(o, row)?;
        let q = g.constant(Tensor::new(vec![1, 2], t.offset.to_vec())?);
        let l = g.smooth_l1(p, q)?;
        let l = g.sum(l)?;
        terms.push(g.scale(l, step_weight(i + 1, n, mu))?);
    }
    let stacked = stack_scalars(g, &terms)?;
    let s = g.sum(stacked)?;
    Ok(g.scale(s, 1.0 / n as f64)?)
}

/// Decoder inputs and targets at one scale for future `future`.
pub fn teacher_schedule(scale: &ScaleModel, sample: &TrajectorySample, future: usize) -> Result<(Vec<StepInput>, Vec<StepInput>)> {
    let fut = sample.futures.get(future).ok_or_else(|| Error::Dataset {
        location: format!("sample `{}`", sample.id),
        msg: format!("no future {future}"),
    })?;
    let last = *sample.observed.last().ok_or(Error::Empty("observed trajectory"))?;
    let targets: Vec<StepInput> = fut.iter().map(|&p| scale.step_input(p)).collect::<Result<_>>()?;
    let mut inputs = Vec::with_capacity(targets.len());
    inputs.push(scale.step_input(last)?);
    inputs.extend_from_slice(&targets[..targets.len() - 1]);
    Ok((inputs, targets))
}

/// Loss nodes for one sample across every scale of the model.
pub struct LossGraph {
    pub total: Var,
    pub per_scale: Vec<(Var, Option<Var>)>,
    pub floored: bool,
}

pub fn loss_graph(
    g: &mut Graph,
    model: &Model,
    params: &BoundParams,
    sample: &TrajectorySample,
    cfg: &LossConfig,
    mode: TrainMode,
) -> Result<LossGraph> {
    let mu = cfg.effective_mu(mode);
    let mut per_scale = Vec::with_capacity(model.scales.len());
    let mut terms = Vec::new();
    let mut floored = false;
    for sm in &model.scales {
        let (inputs, targets) = teacher_schedule(sm, sample, 0)?;
        let enc = sm.encode(g, params, sample)?;
        let steps = targets.len();
        let out = replay_decode(
            g,
            sm,
            params,
            &enc,
            &DecodeInputs::TeacherForced(inputs),
            steps,
            model.config.use_memory_replay,
        )?;
        let lps: Vec<Var> = out.iter().map(|r| r.log_probs).collect();
        let nodes: Vec<usize> = targets.iter().map(|t| t.node).collect();
        let (lc, f) = classification_var(g, &lps, &nodes)?;
        floored |= f;
        terms.push(g.scale(lc, cfg.alpha)?);
        let lr = match out.iter().map(|r| r.offsets).collect::<Option<Vec<Var>>>() {
            Some(offs) => {
                let lr = regression_var(g, &offs, &targets, mu)?;
                terms.push(g.scale(lr, cfg.beta)?);
                Some(lr)
            }
            None => None,
        };
        per_scale.push((lc, lr));
    }
    let stacked = stack_scalars(g, &terms)?;
    let total = g.sum(stacked)?;
    Ok(LossGraph { total, per_scale, floored })
}

fn non_finite(e: Error, id: &str) -> Error {
    match e {
        Error::Autograd(AutogradError::NonFinite { .. }) => Error::NonFiniteLoss(id.to_string()),
        other => other,
    }
}

/// Loss of one sample without recording gradients.
pub fn sample_loss(model: &Model, sample: &TrajectorySample, cfg: &LossConfig, mode: TrainMode) -> Result<Vec<ScaleLoss>> {
    let mut g = Graph::new();
    let params = model.params.bind(&mut g, false);
    let lg = loss_graph(&mut g, model, &params, sample, cfg, mode).map_err(|e| non_finite(e, &sample.id))?;
    Ok(lg
        .per_scale
        .iter()
        .map(|&(c, r)| ScaleLoss {
            classification: g.value(c).data()[0],
            regression: r.map(|r| g.value(r).data()[0]),
        })
        .collect())
}

/// Forward, backward and one SGD update. Returns the pre-update loss.
pub fn train_sample(model: &mut Model, sample: &TrajectorySample, cfg: &Config, lr: f64) -> Result<f64> {
    let mut g = Graph::new();
    let params = model.params.bind(&mut g, true);
    let lg = loss_graph(&mut g, model, &params, sample, &cfg.loss, cfg.train.mode).map_err(|e| non_finite(e, &sample.id))?;
    if lg.floored {
        warn!("sample `{}`: target probability below e^{LOG_FLOOR}, log clamped", sample.id);
    }
    let loss = g.value(lg.total).data()[0];
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(sample.id.clone()));
    }
    let grads = g.backward(lg.total).map_err(|e| non_finite(e.into(), &sample.id))?;
    model.params.accumulate(&params, &grads);
    model.params.fill_missing_grads();
    if let Some(max) = cfg.train.grad_clip_norm {
        let norm = model.params.clip_grad_norm(max);
        if !norm.is_finite() {
            model.params.zero_grads();
            return Err(Error::NonFiniteLoss(sample.id.clone()));
        }
    }
    sgd_step(&mut model.params, lr, cfg.train.weight_decay)?;
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub lr_decay_per_epoch: f64,
    pub weight_decay: f64,
    /// Mean pre-update sample loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainState {
    pub fn new(cfg: &Config) -> Self {
        Self {
            epoch: 0,
            seed: cfg.seed,
            learning_rate: cfg.train.learning_rate,
            lr_decay_per_epoch: cfg.train.lr_decay_per_epoch,
            weight_decay: cfg.train.weight_decay,
            epoch_losses: Vec::new(),
        }
    }

    /// Learning rate for the next epoch.
    pub fn current_lr(&self) -> f64 {
        self.learning_rate * self.lr_decay_per_epoch.powi(self.epoch as i32)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Visiting order for an epoch, fixed by `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One pass with per-sample updates, then advances the epoch counter.
pub fn train_epoch(model: &mut Model, data: &[TrajectorySample], state: &mut TrainState, cfg: &Config) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let lr = state.current_lr();
    let mut total = 0.0;
    for i in epoch_order(state.seed, state.epoch, data.len()) {
        total += train_sample(model, &data[i], cfg, lr)?;
    }
    let mean = total / data.len() as f64;
    state.epoch += 1;
    state.epoch_losses.push(mean);
    Ok(mean)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    Ok(checkpoint::save(path, &model.params)?)
}

pub fn load_checkpoint(model: &mut Model, path: &Path) -> Result<()> {
    Ok(checkpoint::load(path, &mut model.params)?)
}
