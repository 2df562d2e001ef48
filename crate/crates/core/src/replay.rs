//! Memory Replay: smoothing each step's edge weights with a per-scale memory
//! of the previous step's smoothed weights.
//!
//! At every decode step the transformer's weights `e` are combined with the
//! memory `G` as `softmax(e + G)` over each node's valid slots, and `G` is
//! overwritten with the result. `G` starts at zero.

use std::sync::Arc;

use tgmr_autograd::{BoundParams, Graph, Tensor, Var};

use crate::encoder::{EncoderOutput, HiddenGrid, HiddenVars};
use crate::error::{Error, Result};
use crate::model::{ScaleModel, StepInput};
use crate::scene::{SceneGraph, SLOTS};
use crate::transformer::{decode_step, edge_weights_var, messages_var, EdgeWeights, ProjectionVars};

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryGraph {
    pub scale: usize,
    /// `[num_nodes, 9]`.
    pub weights: Tensor,
    pub mask: Arc<[bool]>,
}

impl MemoryGraph {
    pub fn init(scene: &SceneGraph, scale: usize) -> Self {
        Self {
            scale,
            weights: Tensor::zeros(&[scene.num_nodes(), SLOTS]),
            mask: Arc::clone(scene.mask()),
        }
    }

    pub fn as_edge_weights(&self, scene: &SceneGraph) -> Result<EdgeWeights> {
        EdgeWeights::from_tensor(scene, &self.weights)
    }
}

/// Plain-data smoothing step. Returns the smoothed weights and the updated
/// memory, which holds the same values.
pub fn smooth(scene: &SceneGraph, e: &EdgeWeights, memory: &MemoryGraph) -> Result<(EdgeWeights, MemoryGraph)> {
    if e.mask != memory.mask || memory.weights.shape() != [scene.num_nodes(), SLOTS] {
        return Err(Error::Shape(format!(
            "memory graph of scale {} does not match the edge weights' grid",
            memory.scale
        )));
    }
    let mut g = Graph::new();
    let ev = g.constant(Tensor::new(vec![scene.num_nodes(), SLOTS], e.weights.clone())?);
    let mv = g.constant(memory.weights.clone());
    let s = smooth_var(&mut g, scene, ev, mv)?;
    let out = EdgeWeights::from_tensor(scene, g.value(s))?;
    let mem = MemoryGraph {
        scale: memory.scale,
        weights: g.value(s).clone(),
        mask: Arc::clone(&memory.mask),
    };
    Ok((out, mem))
}

pub fn smooth_var(g: &mut Graph, scene: &SceneGraph, e: Var, memory: Var) -> Result<Var> {
    let sum = g.add(e, memory)?;
    Ok(g.masked_softmax(sum, Arc::clone(scene.mask()))?)
}

/// Decoder state recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct DecoderVars {
    pub graph: HiddenVars,
    pub location: Option<HiddenVars>,
    pub memory: Var,
}

impl DecoderVars {
    pub fn from_encoder(g: &mut Graph, scale: &ScaleModel, enc: &EncoderOutput) -> Self {
        Self {
            graph: enc.graph,
            location: enc.location,
            memory: g.constant(MemoryGraph::init(&scale.scene, scale.index).weights),
        }
    }

    pub fn snapshot(&self, g: &Graph) -> DecoderState {
        DecoderState {
            graph: self.graph.snapshot(g),
            location: self.location.map(|l| l.snapshot(g)),
            memory: g.value(self.memory).clone(),
        }
    }
}

/// Off-graph decoder state, used to fork beams.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub graph: HiddenGrid,
    pub location: Option<HiddenGrid>,
    pub memory: Tensor,
}

impl DecoderState {
    pub fn to_vars(&self, g: &mut Graph) -> DecoderVars {
        DecoderVars {
            graph: self.graph.to_vars(g),
            location: self.location.as_ref().map(|l| l.to_vars(g)),
            memory: g.constant(self.memory.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepResult {
    /// `[n]` log-probabilities over nodes.
    pub log_probs: Var,
    /// `[n, 2]` predicted pixel offsets, absent without a location stream.
    pub offsets: Option<Var>,
    /// Transformer weights before smoothing, `[n, 9]`.
    pub raw_weights: Var,
    /// Weights actually used for aggregation.
    pub weights: Var,
    pub state: DecoderVars,
}

/// One decode step for both streams with shared edge weights from the
/// graph stream's hidden state.
pub fn replay_step(
    g: &mut Graph,
    scale: &ScaleModel,
    params: &BoundParams,
    state: DecoderVars,
    input: StepInput,
    use_replay: bool,
) -> Result<StepResult> {
    let proj = ProjectionVars::bind(&scale.projection, params);
    let m = messages_var(g, &scale.scene, state.graph.h, proj)?;
    let raw = edge_weights_var(g, &scale.scene, m)?;
    let (weights, memory) = if use_replay {
        let s = smooth_var(g, &scale.scene, raw, state.memory)?;
        (s, s)
    } else {
        (raw, state.memory)
    };
    let (fb_graph, fb_loc) = scale.feedback(g, input);
    let gs = decode_step(g, &scale.scene, &scale.dec_graph, params, state.graph, fb_graph, weights)?;
    let (offsets, location) = match (&scale.dec_location, state.location, fb_loc) {
        (Some(stream), Some(prev), Some(fb)) => {
            let ls = decode_step(g, &scale.scene, stream, params, prev, fb, weights)?;
            (Some(ls.output), Some(ls.next))
        }
        (None, None, None) => (None, None),
        _ => return Err(Error::Shape("location stream state does not match the model".into())),
    };
    Ok(StepResult {
        log_probs: gs.output,
        offsets,
        raw_weights: raw,
        weights,
        state: DecoderVars {
            graph: gs.next,
            location,
            memory,
        },
    })
}

/// How decoder inputs after the first are chosen.
#[derive(Clone, Debug)]
pub enum DecodeInputs {
    /// `inputs[t]` is fed at step `t`.
    TeacherForced(Vec<StepInput>),
    /// Start from `first`, then feed back the most likely node and its
    /// predicted offset.
    Greedy { first: StepInput },
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

/// Predicted offset at `node`, clamped inside its cell.
pub fn offset_at(g: &Graph, scale: &ScaleModel, offsets: Option<Var>, node: usize) -> [f64; 2] {
    match offsets {
        Some(o) => {
            let d = &g.value(o).data()[node * 2..node * 2 + 2];
            let p = scale.scene.spec.place(node, [d[0], d[1]]);
            let c = scale.scene.spec.cell_center(node);
            [p[0] - c[0], p[1] - c[1]]
        }
        None => [0.0, 0.0],
    }
}

/// Runs `steps` decode steps from an encoder output. The memory graph is
/// reset to zero first and, when `use_replay` is false, never consulted.
pub fn replay_decode(
    g: &mut Graph,
    scale: &ScaleModel,
    params: &BoundParams,
    enc: &EncoderOutput,
    inputs: &DecodeInputs,
    steps: usize,
    use_replay: bool,
) -> Result<Vec<StepResult>> {
    if steps < 1 {
        return Err(Error::Config("decoding needs at least one step".into()));
    }
    if let DecodeInputs::TeacherForced(v) = inputs {
        if v.len() < steps {
            return Err(Error::Shape(format!("{} teacher-forced inputs for {steps} steps", v.len())));
        }
    }
    let mut state = DecoderVars::from_encoder(g, scale, enc);
    let mut out = Vec::with_capacity(steps);
    let mut next = match inputs {
        DecodeInputs::TeacherForced(v) => v[0],
        DecodeInputs::Greedy { first } => *first,
    };
    for t in 0..steps {
        let r = replay_step(g, scale, params, state, next, use_replay)?;
        state = r.state;
        next = match inputs {
            DecodeInputs::TeacherForced(v) => v.get(t + 1).copied().unwrap_or(next),
            DecodeInputs::Greedy { .. } => {
                let node = argmax(g.value(r.log_probs).data());
                StepInput {
                    node,
                    offset: offset_at(g, scale, r.offsets, node),
                }
            }
        };
        out.push(r);
    }
    Ok(out)
}
