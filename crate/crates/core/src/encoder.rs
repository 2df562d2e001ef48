//! ConvLSTM cell and the two observation encoders.

use rand::Rng;
use tgmr_autograd::{BoundParams, Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{Error, Result};

/// Gate order along the conv output channels.
const GATES: usize = 4;

/// A single ConvLSTM layer: one convolution over `input || h` producing the
/// input, forget, output and candidate gates.
#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvLstmCell {
    /// Registers `{prefix}.w` `[4H, k, k, in + H]` and `{prefix}.b` `[4H]`.
    /// Weights are uniform in `±1/sqrt(fan_in)`; the forget-gate bias starts at 1.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        hidden_channels: usize,
        kernel_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel_size % 2 == 0 || in_channels == 0 || hidden_channels == 0 {
            return Err(Error::Config(format!(
                "ConvLSTM `{prefix}` needs an odd kernel and positive channels (k={kernel_size}, in={in_channels}, hidden={hidden_channels})"
            )));
        }
        let cin = in_channels + hidden_channels;
        let cout = GATES * hidden_channels;
        let bound = 1.0 / ((kernel_size * kernel_size * cin) as f64).sqrt();
        let n = cout * kernel_size * kernel_size * cin;
        let w = Tensor::new(
            vec![cout, kernel_size, kernel_size, cin],
            (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
        )?;
        let mut b = vec![0.0; cout];
        b[hidden_channels..2 * hidden_channels].fill(1.0);
        Ok(Self {
            kernel_size,
            in_channels,
            hidden_channels,
            weight: store.register(format!("{prefix}.w"), w)?,
            bias: store.register(format!("{prefix}.b"), Tensor::vector(b)?)?,
        })
    }
}

/// Off-graph `(h, c)` pair, `rows x cols x channels` each.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenGrid {
    pub h: Tensor,
    pub c: Tensor,
}

impl HiddenGrid {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self {
            h: Tensor::zeros(&[rows, cols, channels]),
            c: Tensor::zeros(&[rows, cols, channels]),
        }
    }

    pub fn to_vars(&self, g: &mut Graph) -> HiddenVars {
        HiddenVars {
            h: g.constant(self.h.clone()),
            c: g.constant(self.c.clone()),
        }
    }
}

/// `(h, c)` recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct HiddenVars {
    pub h: Var,
    pub c: Var,
}

impl HiddenVars {
    pub fn zeros(g: &mut Graph, rows: usize, cols: usize, channels: usize) -> Self {
        HiddenGrid::zeros(rows, cols, channels).to_vars(g)
    }

    pub fn snapshot(&self, g: &Graph) -> HiddenGrid {
        HiddenGrid {
            h: g.value(self.h).clone(),
            c: g.value(self.c).clone(),
        }
    }
}

pub fn convlstm_step(g: &mut Graph, cell: &ConvLstmCell, params: &BoundParams, input: Var, state: HiddenVars) -> Result<HiddenVars> {
    let (si, sh) = (g.shape(input).to_vec(), g.shape(state.h).to_vec());
    if si.len() != 3 || sh.len() != 3 || si[..2] != sh[..2] {
        return Err(Error::Shape(format!("ConvLSTM input {si:?} vs state {sh:?}")));
    }
    if si[2] != cell.in_channels || sh[2] != cell.hidden_channels {
        return Err(Error::Shape(format!(
            "ConvLSTM expects {} input / {} hidden channels, got {} / {}",
            cell.in_channels, cell.hidden_channels, si[2], sh[2]
        )));
    }
    let hc = cell.hidden_channels;
    let x = g.concat(&[input, state.h], 2)?;
    let z = g.conv2d(x, params.var(cell.weight), params.var(cell.bias))?;
    let zi = g.slice(z, 2, 0, hc)?;
    let zf = g.slice(z, 2, hc, 2 * hc)?;
    let zo = g.slice(z, 2, 2 * hc, 3 * hc)?;
    let zg = g.slice(z, 2, 3 * hc, 4 * hc)?;
    let i = g.sigmoid(zi)?;
    let f = g.sigmoid(zf)?;
    let o = g.sigmoid(zo)?;
    let cand = g.tanh(zg)?;
    let keep = g.mul(f, state.c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok(HiddenVars { h, c })
}

/// Runs `cell` over `inputs` from a zero state. Both observation encoders go
/// through here.
pub fn encode_stream(g: &mut Graph, cell: &ConvLstmCell, params: &BoundParams, inputs: &[Var]) -> Result<HiddenVars> {
    let first = inputs.first().ok_or(Error::Empty("observation sequence"))?;
    let s = g.shape(*first).to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("encoder input must be rows x cols x channels, got {s:?}")));
    }
    let mut state = HiddenVars::zeros(g, s[0], s[1], cell.hidden_channels);
    for &x in inputs {
        state = convlstm_step(g, cell, params, x, state)?;
    }
    Ok(state)
}

/// Graph stream: inputs are `one_hot_seg_embed` grids, `rows x cols x C`.
pub fn encode_graph_stream(g: &mut Graph, cell: &ConvLstmCell, params: &BoundParams, embeds: &[Var]) -> Result<HiddenVars> {
    encode_stream(g, cell, params, embeds)
}

/// Location stream: inputs are offset grids, `rows x cols x 2`.
pub fn encode_location_stream(g: &mut Graph, cell: &ConvLstmCell, params: &BoundParams, offsets: &[Var]) -> Result<HiddenVars> {
    encode_stream(g, cell, params, offsets)
}

/// Decoder initial states: each stream's `h` with the mean segmentation
/// appended on the channel axis.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub graph: HiddenVars,
    pub location: Option<HiddenVars>,
}

/// Appends `s_bar` to `h`. The decoder state is wider than the encoder's, so
/// `c` is zero-extended over the appended channels.
pub fn append_scene(g: &mut Graph, state: HiddenVars, s_bar: Var) -> Result<HiddenVars> {
    let (sh, ss) = (g.shape(state.h).to_vec(), g.shape(s_bar).to_vec());
    if ss.len() != 3 || sh[..2] != ss[..2] {
        return Err(Error::Shape(format!("hidden {sh:?} vs scene {ss:?}")));
    }
    let h = g.concat(&[state.h, s_bar], 2)?;
    let pad = g.constant(Tensor::zeros(&ss));
    let c = g.concat(&[state.c, pad], 2)?;
    Ok(HiddenVars { h, c })
}

pub fn assemble_decoder_init(g: &mut Graph, graph: HiddenVars, location: Option<HiddenVars>, s_bar: Var) -> Result<EncoderOutput> {
    Ok(EncoderOutput {
        graph: append_scene(g, graph, s_bar)?,
        location: location.map(|l| append_scene(g, l, s_bar)).transpose()?,
    })
}
