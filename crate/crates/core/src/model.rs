//! Parameter layout per scale and the glue from samples to graph inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgmr_autograd::{BoundParams, Graph, ParamStore, Tensor, Var};

use crate::config::ModelConfig;
use crate::encoder::{assemble_decoder_init, encode_graph_stream, encode_location_stream, ConvLstmCell, EncoderOutput};
use crate::error::{Error, Result};
use crate::scene::{self, build_scales, mean_seg, node_value_embed, Point, SceneGraph, TrajectorySample};
use crate::transformer::{DecoderStream, Pointwise, ProjectionSet, StreamKind};

/// A decoder input: the node fed back to the graph stream and the offset
/// (pixels, relative to that node's center) fed to the location stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInput {
    pub node: usize,
    pub offset: Point,
}

#[derive(Clone, Debug)]
pub struct ScaleModel {
    pub index: usize,
    pub scene: SceneGraph,
    pub enc_graph: ConvLstmCell,
    pub enc_location: Option<ConvLstmCell>,
    pub projection: ProjectionSet,
    pub dec_graph: DecoderStream,
    pub dec_location: Option<DecoderStream>,
}

impl ScaleModel {
    pub fn num_nodes(&self) -> usize {
        self.scene.num_nodes()
    }

    /// Offsets enter the location streams in cell units; the decoder predicts
    /// them in pixels.
    pub fn offset_scale(&self) -> Point {
        [self.scene.spec.cell_width(), self.scene.spec.cell_height()]
    }

    pub fn step_input(&self, p: Point) -> Result<StepInput> {
        Ok(StepInput {
            node: self.scene.spec.node_index(p[0], p[1])?,
            offset: self.scene.spec.cell_offset(p[0], p[1])?,
        })
    }

    /// `(graph feedback, location feedback)` grids for a decoder input.
    pub fn feedback(&self, g: &mut Graph, input: StepInput) -> (Var, Option<Var>) {
        let spec = &self.scene.spec;
        let node = g.constant(node_value_embed(spec, input.node, &[1.0]));
        let loc = self.dec_location.as_ref().map(|_| {
            let s = self.offset_scale();
            g.constant(node_value_embed(spec, input.node, &[input.offset[0] / s[0], input.offset[1] / s[1]]))
        });
        (node, loc)
    }

    /// Encodes the observed history and appends the mean segmentation.
    pub fn encode(&self, g: &mut Graph, params: &BoundParams, sample: &TrajectorySample) -> Result<EncoderOutput> {
        let spec = &self.scene.spec;
        let frames = sample.seg_frames.get(self.index).ok_or_else(|| Error::Dataset {
            location: format!("sample `{}`", sample.id),
            msg: format!("no segmentation for scale {}", self.index),
        })?;
        if frames.len() != sample.observed.len() {
            return Err(Error::Dataset {
                location: format!("sample `{}`", sample.id),
                msg: "segmentation frame count differs from observed length".into(),
            });
        }
        let mut embeds = Vec::with_capacity(frames.len());
        let mut offsets = Vec::with_capacity(frames.len());
        let s = self.offset_scale();
        for (p, seg) in sample.observed.iter().zip(frames) {
            embeds.push(g.constant(scene::one_hot_seg_embed(spec, p[0], p[1], seg)?));
            if self.enc_location.is_some() {
                let node = spec.node_index(p[0], p[1])?;
                let o = spec.cell_offset(p[0], p[1])?;
                offsets.push(g.constant(node_value_embed(spec, node, &[o[0] / s[0], o[1] / s[1]])));
            }
        }
        let gh = encode_graph_stream(g, &self.enc_graph, params, &embeds)?;
        let lh = match &self.enc_location {
            Some(cell) => Some(encode_location_stream(g, cell, params, &offsets)?),
            None => None,
        };
        let s_bar = g.constant(mean_seg(frames)?.to_tensor());
        assemble_decoder_init(g, gh, lh, s_bar)
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub scales: Vec<ScaleModel>,
}

impl Model {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let graphs = build_scales(&config.scales, config.frame_width, config.frame_height)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (h, k, c) = (config.hidden_channels, config.kernel_size, config.num_classes);
        let d = config.decoder_channels();
        let din = config.decoder_input_channels;
        let mut scales = Vec::with_capacity(graphs.len());
        for (index, scene) in graphs.into_iter().enumerate() {
            let p = |name: &str| format!("s{index}.{name}");
            let enc_graph = ConvLstmCell::register(&mut params, &p("enc.graph"), c, h, k, &mut rng)?;
            let enc_location = if config.use_location_encoder {
                Some(ConvLstmCell::register(&mut params, &p("enc.loc"), 2, h, k, &mut rng)?)
            } else {
                None
            };
            let projection = ProjectionSet::register(&mut params, &p("attn"), d, config.attn_dim, &mut rng)?;
            let mut stream = |kind: StreamKind, tag: &str, out: usize| -> Result<DecoderStream> {
                Ok(DecoderStream {
                    kind,
                    cell: ConvLstmCell::register(&mut params, &p(&format!("dec.{tag}")), din, d, k, &mut rng)?,
                    delta1: Pointwise::register(&mut params, &p(&format!("out.{tag}")), d, out, &mut rng)?,
                    delta2: Pointwise::register(&mut params, &p(&format!("in.{tag}")), out, din, &mut rng)?,
                })
            };
            let dec_graph = stream(StreamKind::Graph, "graph", 1)?;
            let dec_location = if config.use_location_encoder {
                Some(stream(StreamKind::Location, "loc", 2)?)
            } else {
                None
            };
            scales.push(ScaleModel {
                index,
                scene,
                enc_graph,
                enc_location,
                projection,
                dec_graph,
                dec_location,
            });
        }
        Ok(Self {
            config: config.clone(),
            params,
            scales,
        })
    }

    /// Finest scale, the one whose predictions are reported.
    pub fn finest(&self) -> &ScaleModel {
        &self.scales[0]
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| (*p.tensor).clone()).collect()
    }

    pub fn check_sample(&self, sample: &TrajectorySample) -> Result<()> {
        sample.validate(&self.finest().scene.spec)?;
        if sample.seg_frames.len() < self.scales.len() {
            return Err(Error::Dataset {
                location: format!("sample `{}`", sample.id),
                msg: format!("{} segmentation scales for a {}-scale model", sample.seg_frames.len(), self.scales.len()),
            });
        }
        for (s, frames) in self.scales.iter().zip(sample.seg_frames.iter()) {
            for f in frames {
                if !f.matches(&s.scene.spec) || f.classes() != self.config.num_classes {
                    return Err(Error::Dataset {
                        location: format!("sample `{}`", sample.id),
                        msg: format!(
                            "segmentation {}x{}x{} does not fit scale {}x{} with {} classes",
                            f.rows(),
                            f.cols(),
                            f.classes(),
                            s.scene.spec.rows,
                            s.scene.spec.cols,
                            self.config.num_classes
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}
