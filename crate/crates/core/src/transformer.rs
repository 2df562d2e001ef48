//! Graph attention over each node's 3x3 neighbourhood and the decoder step
//! built on it.
//!
//! Messages for a receiving node `i` and neighbour `j`:
//!
//! - attention: `sum(v_i * (q_i || k_j)) + sum(b)` with `q = h Wq`, `k = h Wk`,
//!   `v = h Wv`, where `v` is twice as wide as `q` and `k`;
//! - global: `h_i . h_j`.
//!
//! Their sum is softmax-normalised over the valid neighbourhood slots.

use std::sync::Arc;

use rand::Rng;
use tgmr_autograd::{BoundParams, Graph, ParamId, ParamStore, Tensor, Var};

use crate::encoder::{convlstm_step, ConvLstmCell, HiddenVars};
use crate::error::{Error, Result};
use crate::scene::{SceneGraph, SLOTS};

fn uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Result<Tensor> {
    let b = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Ok(Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-b..b)).collect())?)
}

#[derive(Clone, Debug)]
pub struct ProjectionSet {
    pub state_dim: usize,
    pub attn_dim: usize,
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub bias: ParamId,
}

impl ProjectionSet {
    pub fn register(store: &mut ParamStore, prefix: &str, state_dim: usize, attn_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if state_dim == 0 || attn_dim == 0 {
            return Err(Error::Config("projection dims must be positive".into()));
        }
        Ok(Self {
            state_dim,
            attn_dim,
            query: store.register(format!("{prefix}.q"), uniform(rng, &[state_dim, attn_dim], state_dim)?)?,
            key: store.register(format!("{prefix}.k"), uniform(rng, &[state_dim, attn_dim], state_dim)?)?,
            value: store.register(format!("{prefix}.v"), uniform(rng, &[state_dim, 2 * attn_dim], state_dim)?)?,
            bias: store.register(format!("{prefix}.b"), Tensor::zeros(&[2 * attn_dim]))?,
        })
    }

    pub fn weights(&self, store: &ParamStore) -> ProjectionWeights {
        ProjectionWeights {
            query: store.tensor(self.query).clone(),
            key: store.tensor(self.key).clone(),
            value: store.tensor(self.value).clone(),
            bias: store.tensor(self.bias).clone(),
        }
    }
}

/// Plain projection matrices, `query`/`key` `[d, a]`, `value` `[d, 2a]`, `bias` `[2a]`.
#[derive(Clone, Debug)]
pub struct ProjectionWeights {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub bias: Tensor,
}

impl ProjectionWeights {
    pub fn zeros(d: usize, a: usize) -> Self {
        Self {
            query: Tensor::zeros(&[d, a]),
            key: Tensor::zeros(&[d, a]),
            value: Tensor::zeros(&[d, 2 * a]),
            bias: Tensor::zeros(&[2 * a]),
        }
    }
}

fn project(h: &[f64], w: &Tensor) -> Vec<f64> {
    let (d, n) = (w.shape()[0], w.shape()[1]);
    (0..n).map(|c| (0..d).map(|r| h[r] * w.data()[r * n + c]).sum()).collect()
}

pub fn attention_message(h_i: &[f64], h_j: &[f64], proj: &ProjectionWeights) -> Result<f64> {
    let d = proj.query.shape()[0];
    if h_i.len() != d || h_j.len() != d {
        return Err(Error::Shape(format!("node states of dims {} and {} vs projection dim {d}", h_i.len(), h_j.len())));
    }
    let q = project(h_i, &proj.query);
    let k = project(h_j, &proj.key);
    let v = project(h_i, &proj.value);
    let qk = q.iter().chain(&k);
    Ok(v.iter().zip(qk).map(|(a, b)| a * b).sum::<f64>() + proj.bias.data().iter().sum::<f64>())
}

pub fn global_message(h_i: &[f64], h_j: &[f64]) -> Result<f64> {
    if h_i.len() != h_j.len() {
        return Err(Error::Shape(format!("node states of dims {} and {}", h_i.len(), h_j.len())));
    }
    Ok(h_i.iter().zip(h_j).map(|(a, b)| a * b).sum())
}

pub fn total_message(attn: f64, global: f64) -> f64 {
    attn + global
}

/// Per-node weights over the 9 neighbourhood slots; invalid slots hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeights {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub mask: Arc<[bool]>,
}

impl EdgeWeights {
    pub fn from_tensor(scene: &SceneGraph, t: &Tensor) -> Result<Self> {
        if t.shape() != [scene.num_nodes(), SLOTS] {
            return Err(Error::Shape(format!("edge weights {:?} for {} nodes", t.shape(), scene.num_nodes())));
        }
        Ok(Self {
            rows: scene.spec.rows,
            cols: scene.spec.cols,
            weights: t.data().to_vec(),
            mask: Arc::clone(scene.mask()),
        })
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.weights[i * SLOTS..(i + 1) * SLOTS]
    }

    /// Largest deviation of a valid row sum from 1, or an error if an invalid
    /// slot is nonzero or a valid one is outside `(0, 1]`.
    pub fn max_row_error(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, (row, m)) in self.weights.chunks(SLOTS).zip(self.mask.chunks(SLOTS)).enumerate() {
            for (s, (&w, &ok)) in row.iter().zip(m).enumerate() {
                if !ok && w != 0.0 {
                    return Err(Error::Shape(format!("node {i} slot {s} is masked but holds {w}")));
                }
                if ok && !(w > 0.0 && w <= 1.0) {
                    return Err(Error::Shape(format!("node {i} slot {s} weight {w} outside (0, 1]")));
                }
            }
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        Ok(worst)
    }
}

/// Plain-data edge weights: per-node softmax of `messages[i * 9 + s]` over
/// valid slots.
pub fn edge_weights(scene: &SceneGraph, messages: &[f64]) -> Result<EdgeWeights> {
    let n = scene.num_nodes();
    if messages.len() != n * SLOTS {
        return Err(Error::Shape(format!("{} messages for {n} nodes", messages.len())));
    }
    let mut g = Graph::new();
    let m = g.constant(Tensor::new(vec![n, SLOTS], messages.to_vec())?);
    let w = g.masked_softmax(m, Arc::clone(scene.mask()))?;
    EdgeWeights::from_tensor(scene, g.value(w))
}

/// Plain-data aggregation: `out[i] = sum_s w[i, s] * h[nbr(i, s)]` over a
/// `rows x cols x d` state.
pub fn aggregate(scene: &SceneGraph, weights: &EdgeWeights, states: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let n = scene.num_nodes();
    let w = g.constant(Tensor::new(vec![n, SLOTS], weights.weights.clone())?);
    let h = g.constant(states.clone());
    let out = aggregate_var(&mut g, scene, w, h)?;
    Ok(g.value(out).clone())
}

/// Projection parameters bound to a graph.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub bias: Var,
}

impl ProjectionVars {
    pub fn bind(p: &ProjectionSet, params: &BoundParams) -> Self {
        Self {
            query: params.var(p.query),
            key: params.var(p.key),
            value: params.var(p.value),
            bias: params.var(p.bias),
        }
    }
}

/// Total messages `[n, 9]` for every node and slot. Values at invalid slots
/// are computed against the node itself and later masked out.
pub fn messages_var(g: &mut Graph, scene: &SceneGraph, h: Var, proj: ProjectionVars) -> Result<Var> {
    let s = g.shape(h).to_vec();
    let n = scene.num_nodes();
    if s.len() != 3 || s[0] * s[1] != n {
        return Err(Error::Shape(format!("hidden {s:?} for {n} nodes")));
    }
    let d = s[2];
    let a = g.shape(proj.query)[1];
    let hf = g.reshape(h, &[n, d])?;
    let q = g.matmul(hf, proj.query)?;
    let k = g.matmul(hf, proj.key)?;
    let v = g.matmul(hf, proj.value)?;
    let vq = g.slice(v, 1, 0, a)?;
    let vk = g.slice(v, 1, a, 2 * a)?;

    // receiver term, identical for all 9 slots of a node
    let self_term = g.mul(vq, q)?;
    let self_term = g.sum_last(self_term)?;
    let self_term = g.reshape(self_term, &[n, 1])?;
    let self_term = g.gather_rows(self_term, Arc::clone(scene.repeat_table()))?;
    let self_term = g.reshape(self_term, &[n * SLOTS])?;

    let kj = g.gather_rows(k, Arc::clone(scene.slot_table()))?;
    let vki = g.gather_rows(vk, Arc::clone(scene.repeat_table()))?;
    let pair = g.mul(kj, vki)?;
    let pair = g.sum_last(pair)?;

    let hj = g.gather_rows(hf, Arc::clone(scene.slot_table()))?;
    let hi = g.gather_rows(hf, Arc::clone(scene.repeat_table()))?;
    let glob = g.mul(hj, hi)?;
    let glob = g.sum_last(glob)?;

    let m = g.add(self_term, pair)?;
    let m = g.add(m, glob)?;
    let b = g.sum(proj.bias)?;
    let b = g.reshape(b, &[1])?;
    let m = g.reshape(m, &[n * SLOTS, 1])?;
    let m = g.add_bias(m, b)?;
    Ok(g.reshape(m, &[n, SLOTS])?)
}

/// `[n, 9]` messages -> masked softmax edge weights.
pub fn edge_weights_var(g: &mut Graph, scene: &SceneGraph, messages: Var) -> Result<Var> {
    Ok(g.masked_softmax(messages, Arc::clone(scene.mask()))?)
}

/// Weighted neighbourhood sum of a `rows x cols x d` state.
pub fn aggregate_var(g: &mut Graph, scene: &SceneGraph, weights: Var, h: Var) -> Result<Var> {
    let s = g.shape(h).to_vec();
    let n = scene.num_nodes();
    if s.len() != 3 || s[0] * s[1] != n || g.shape(weights) != [n, SLOTS] {
        return Err(Error::Shape(format!("aggregate weights {:?} over hidden {s:?}", g.shape(weights))));
    }
    let d = s[2];
    let hf = g.reshape(h, &[n, d])?;
    let hj = g.gather_rows(hf, Arc::clone(scene.slot_table()))?;
    let wf = g.reshape(weights, &[n * SLOTS])?;
    let weighted = g.mul_rows(hj, wf)?;
    let weighted = g.reshape(weighted, &[n, SLOTS, d])?;
    let out = g.sum_axis(weighted, 1)?;
    Ok(g.reshape(out, &s)?)
}

/// Pointwise linear map on a `rows x cols x cin` grid.
#[derive(Clone, Debug)]
pub struct Pointwise {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Pointwise {
    pub fn register(store: &mut ParamStore, prefix: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            weight: store.register(format!("{prefix}.w"), uniform(rng, &[cin, cout], cin)?)?,
            bias: store.register(format!("{prefix}.b"), Tensor::zeros(&[cout]))?,
            in_channels: cin,
            out_channels: cout,
        })
    }

    pub fn apply(&self, g: &mut Graph, params: &BoundParams, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 3 || s[2] != self.in_channels {
            return Err(Error::Shape(format!("pointwise layer expects {} channels, got {s:?}", self.in_channels)));
        }
        let xf = g.reshape(x, &[s[0] * s[1], s[2]])?;
        let y = g.matmul(xf, params.var(self.weight))?;
        let y = g.add_bias(y, params.var(self.bias))?;
        Ok(g.reshape(y, &[s[0], s[1], self.out_channels])?)
    }
}

/// Which kind of output a decoder stream produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    /// One logit per node, normalised over all nodes.
    Graph,
    /// Two pixel offsets per node.
    Location,
}

/// Decoder ConvLSTM with its output (`delta1`) and feedback (`delta2`) layers.
#[derive(Clone, Debug)]
pub struct DecoderStream {
    pub kind: StreamKind,
    pub cell: ConvLstmCell,
    pub delta1: Pointwise,
    pub delta2: Pointwise,
}

impl DecoderStream {
    pub fn output_channels(&self) -> usize {
        self.delta1.out_channels
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    /// Graph stream: log-probabilities `[n]`. Location stream: offsets `[n, 2]`.
    pub output: Var,
    pub next: HiddenVars,
}

/// One decoder step: aggregate the previous hidden state with `weights`, run
/// the ConvLSTM on the fed-back previous output, then read the new output off
/// the new hidden state.
pub fn decode_step(
    g: &mut Graph,
    scene: &SceneGraph,
    stream: &DecoderStream,
    params: &BoundParams,
    prev: HiddenVars,
    prev_output: Var,
    weights: Var,
) -> Result<StepOutput> {
    let agg = aggregate_var(g, scene, weights, prev.h)?;
    let x = stream.delta2.apply(g, params, prev_output)?;
    let next = convlstm_step(g, &stream.cell, params, x, HiddenVars { h: agg, c: prev.c })?;
    let y = stream.delta1.apply(g, params, next.h)?;
    let n = scene.num_nodes();
    let output = match stream.kind {
        StreamKind::Graph => {
            let logits = g.reshape(y, &[n])?;
            g.log_softmax(logits, 0)?
        }
        StreamKind::Location => g.reshape(y, &[n, 2])?,
    };
    Ok(StepOutput { output, next })
}
