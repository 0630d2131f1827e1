//! The spatio-temporal transformer: input embedding, a spatial encoder with
//! a frame-global token, a temporal encoder that fuses each pair window
//! with its human's gaze context, and per-task prediction heads.

mod batch;
mod checkpoint;
mod config;
mod layers;
mod pe;
#[cfg(test)]
mod tests;

pub use batch::{BatchInput, SampleLayout, SceneKey};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{
    Activation, GazeMode, HeadActivation, HeadSpec, HumanTarget, ModelConfig, PeMode, WindowMode,
};
pub use layers::Pass;
pub use pe::sinusoidal_pe;

use layers::{ConvEmbed, CrossLayer, EncoderLayer, Init, Linear};

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Segment, Tensor, Var};

/// Scaled dot-product attention assembled from elementary graph ops:
/// `softmax(Q Kᵀ / √d_k + mask) V` for a single head.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, mask: Option<&Tensor>) -> Result<Var> {
    let (qs, ks, vs) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(Error::Shape("attention operands must be matrices".into()));
    }
    if ks[0] != vs[0] || qs[1] != ks[1] || qs[1] == 0 {
        return Err(Error::Shape(format!("attention: q {qs:?}, k {ks:?}, v {vs:?}")));
    }
    let scores = g.matmul_t(q, k, false, true)?;
    let mut scores = g.scale(scores, 1.0 / (qs[1] as f64).sqrt());
    if let Some(m) = mask {
        if m.shape() != [qs[0], ks[0]] {
            return Err(Error::Shape(format!("attention mask {:?} for {}x{} scores", m.shape(), qs[0], ks[0])));
        }
        let m = g.input(m.clone());
        scores = g.add(scores, m)?;
    }
    let p = g.softmax_rows(scores)?;
    g.matmul(p, v)
}

/// Kind of a temporal encoder layer, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalLayerKind {
    Cross,
    Plain,
}

#[derive(Debug, Clone)]
enum FirstTemporal {
    Cross(CrossLayer),
    Plain(EncoderLayer),
}

/// Graph handles of the embedding stage.
#[derive(Debug, Clone, Copy)]
pub struct Embedded {
    /// `[P, d]` pair representations.
    pub pairs: Var,
    /// `[G, gaze_dim]` normalized gaze embeddings, absent without gaze.
    pub gaze: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub logits: Var,
    pub probs: Var,
    /// First column of this head inside `z`.
    pub offset: usize,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub embedded: Embedded,
    /// `[P, d]` spatial encoder outputs.
    pub refined: Var,
    /// `[S, d]` frame-global features.
    pub global: Var,
    /// `[N*L, d]` context windows, absent in concat mode.
    pub context: Option<Var>,
    /// `[N, d]` last-position outputs of the temporal encoder.
    pub fused: Var,
    pub heads: Vec<HeadOutput>,
    /// `[N, n_outputs]` concatenated head probabilities.
    pub z: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    w_s: Linear,
    w_o: Linear,
    w_rel: Linear,
    f_mask: ConvEmbed,
    f_gaze: Option<ConvEmbed>,
    global_token: Option<ParamId>,
    spatial: Vec<EncoderLayer>,
    context_proj: Option<Linear>,
    learned_pe: Option<ParamId>,
    sine_pe: Tensor,
    first: FirstTemporal,
    temporal: Vec<EncoderLayer>,
    heads: Vec<Linear>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let c = &config;
        let d = c.pair_dim();
        let mut init = Init::new(&mut params, seed);
        let w_s = Linear::new(&mut init, "embed.subject", c.visual_dim, c.subject_dim);
        let w_o = Linear::new(&mut init, "embed.object", c.visual_dim, c.object_dim);
        let w_rel = Linear::new(&mut init, "embed.relation", c.visual_dim, c.relation_dim);
        let conv = |init: &mut Init, name: &str, inc: usize, ch: [usize; 2], out: usize| {
            ConvEmbed::new(init, name, inc, ch, c.conv_kernel, c.conv_stride, out, c.activation)
        };
        let f_mask = conv(&mut init, "embed.mask", 2, c.mask_channels, c.mask_dim);
        let f_gaze = (c.gaze_mode != GazeMode::None)
            .then(|| conv(&mut init, "embed.gaze", 1, c.gaze_channels, c.gaze_dim));
        let global_token = c.global_token.then(|| init.normal("spatial.token", &[1, d], 0.02));
        let spatial = (0..c.spatial_layers)
            .map(|i| EncoderLayer::new(&mut init, &format!("spatial.{i}"), d, c.heads, c.ffn_dim, c.activation))
            .collect();
        let context_proj = match c.gaze_mode {
            GazeMode::Cross => Some(Linear::new(&mut init, "context.proj", d + c.gaze_dim, d)),
            GazeMode::None => Some(Linear::new(&mut init, "context.proj", d, d)),
            GazeMode::Concat => None,
        };
        let learned_pe = (c.pe_mode == PeMode::Learned).then(|| init.normal("temporal.pe", &[c.window, d], 0.02));
        let first = match c.gaze_mode {
            GazeMode::Concat => FirstTemporal::Plain(EncoderLayer::new(
                &mut init,
                "temporal.0",
                d,
                c.heads,
                c.ffn_dim,
                c.activation,
            )),
            _ => FirstTemporal::Cross(CrossLayer::new(&mut init, "temporal.0", d, c.heads, c.ffn_dim, c.activation)),
        };
        let temporal = (1..c.temporal_layers)
            .map(|i| EncoderLayer::new(&mut init, &format!("temporal.{i}"), d, c.heads, c.ffn_dim, c.activation))
            .collect();
        let heads = c
            .heads_spec
            .iter()
            .map(|h| Linear::new(&mut init, &format!("head.{}", h.name), d, h.classes))
            .collect();
        Ok(Self {
            sine_pe: sinusoidal_pe(c.window, d),
            config,
            params,
            w_s,
            w_o,
            w_rel,
            f_mask,
            f_gaze,
            global_token,
            spatial,
            context_proj,
            learned_pe,
            first,
            temporal,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Layer kinds of the temporal encoder in execution order.
    pub fn temporal_layout(&self) -> Vec<TemporalLayerKind> {
        let first = match self.first {
            FirstTemporal::Cross(_) => TemporalLayerKind::Cross,
            FirstTemporal::Plain(_) => TemporalLayerKind::Plain,
        };
        std::iter::once(first)
            .chain(self.temporal.iter().map(|_| TemporalLayerKind::Plain))
            .collect()
    }

    /// Embed every pair row and gaze map of a batch.
    pub fn embed(&self, g: &mut Graph, input: &BatchInput) -> Result<Embedded> {
        let vs = g.input(input.v_s.clone());
        let s = self.w_s.apply(g, vs)?;
        let s = g.l2_normalize_rows(s)?;

        let vo = g.input(input.v_o.clone());
        let mut o = self.w_o.apply(g, vo)?;
        let human_rows: Vec<usize> = (0..input.n_pairs()).filter(|&i| input.object_is_human[i]).collect();
        if self.config.human_target == HumanTarget::Subject && !human_rows.is_empty() {
            let vh = g.gather_rows(vo, &human_rows)?;
            let oh = self.w_s.apply(g, vh)?;
            let both = g.concat_rows(&[o, oh])?;
            let mut k = 0;
            let idx: Vec<usize> = (0..input.n_pairs())
                .map(|i| {
                    if input.object_is_human[i] {
                        k += 1;
                        input.n_pairs() + k - 1
                    } else {
                        i
                    }
                })
                .collect();
            o = g.gather_rows(both, &idx)?;
        }
        let o = g.l2_normalize_rows(o)?;

        let vr = g.input(input.v_rel.clone());
        let r = self.w_rel.apply(g, vr)?;
        let r = g.l2_normalize_rows(r)?;

        let m = g.input(input.masks.clone());
        let m = self.f_mask.apply(g, m)?;
        let m = g.l2_normalize_rows(m)?;

        let sem = g.input(input.semantic.clone());
        let sem = g.l2_normalize_rows(sem)?;

        let gaze = match &self.f_gaze {
            Some(f) if input.gaze.shape()[0] > 0 => {
                let x = g.input(input.gaze.clone());
                let x = f.apply(g, x)?;
                Some(g.l2_normalize_rows(x)?)
            }
            _ => None,
        };
        let mut parts = vec![s, o, r, m, sem];
        if self.config.gaze_mode == GazeMode::Concat {
            let gz = gaze.ok_or_else(|| Error::Shape("concat mode needs gaze maps".into()))?;
            parts.push(g.gather_rows(gz, &input.pair_gaze)?);
        }
        let pairs = g.concat_cols(&parts)?;
        Ok(Embedded { pairs, gaze })
    }

    /// Run the spatial encoder over each scene's pairs. Returns the refined
    /// pair rows in input order and one global feature per segment.
    pub fn spatial_encode(&self, g: &mut Graph, x: Var, segments: &[Segment], pass: &mut Pass) -> Result<(Var, Var)> {
        if segments.iter().any(|s| s.len == 0) {
            return Err(Error::Shape("spatial encoder needs at least one pair per frame".into()));
        }
        let n = g.shape(x)[0];
        match self.global_token {
            Some(tok) => {
                let tok = g.param(tok);
                let toks = g.gather_rows(tok, &vec![0; segments.len()])?;
                let all = g.concat_rows(&[x, toks])?;
                let mut order = Vec::with_capacity(n + segments.len());
                let mut token_rows = Vec::with_capacity(segments.len());
                let mut pair_rows = vec![0; n];
                for (i, s) in segments.iter().enumerate() {
                    token_rows.push(order.len());
                    order.push(n + i);
                    for r in s.start..s.start + s.len {
                        pair_rows[r] = order.len();
                        order.push(r);
                    }
                }
                let mut h = g.gather_rows(all, &order)?;
                let segs = Segment::tile(segments.iter().map(|s| s.len + 1));
                for layer in &self.spatial {
                    h = layer.apply(g, h, &segs, pass)?;
                }
                let refined = g.gather_rows(h, &pair_rows)?;
                let global = g.gather_rows(h, &token_rows)?;
                Ok((refined, global))
            }
            None => {
                let mut h = x;
                for layer in &self.spatial {
                    h = layer.apply(g, h, segments, pass)?;
                }
                let global = g.segment_mean(h, segments)?;
                Ok((h, global))
            }
        }
    }

    fn positional(&self, g: &mut Graph, index: &[usize]) -> Result<Var> {
        match self.learned_pe {
            Some(pe) => {
                let pe = g.param(pe);
                g.gather_rows(pe, index)
            }
            None => {
                let d = self.sine_pe.cols();
                let mut data = Vec::with_capacity(index.len() * d);
                for &i in index {
                    data.extend_from_slice(self.sine_pe.row(i));
                }
                Ok(g.input(Tensor::new(vec![index.len(), d], data)?))
            }
        }
    }

    /// Context rows `proj([c_t | g']) + PE` for each listed slot. `scenes`
    /// and `gaze_rows` index the global and gaze matrices; `pe_index` gives
    /// each row's window position. Returns `None` in concat mode.
    pub fn build_context(
        &self,
        g: &mut Graph,
        global: Var,
        gaze: Option<Var>,
        scenes: &[usize],
        gaze_rows: &[usize],
        pe_index: &[usize],
    ) -> Result<Option<Var>> {
        let Some(proj) = &self.context_proj else {
            return Ok(None);
        };
        if scenes.len() != gaze_rows.len() || scenes.len() != pe_index.len() {
            return Err(Error::Shape("context index lists differ in length".into()));
        }
        let c = g.gather_rows(global, scenes)?;
        let x = match self.config.gaze_mode {
            GazeMode::Cross => {
                let gz = gaze.ok_or_else(|| Error::Shape("cross mode needs gaze embeddings".into()))?;
                let gz = g.gather_rows(gz, gaze_rows)?;
                g.concat_cols(&[c, gz])?
            }
            _ => c,
        };
        let x = proj.apply(g, x)?;
        let pe = self.positional(g, pe_index)?;
        Ok(Some(g.add(x, pe)?))
    }

    /// Temporal encoder over position-encoded sequences. `seq_segments`
    /// delimit each sample's sequence, `ctx_segments` its context window;
    /// `output_rows` picks one row of the final layer per sample.
    pub fn temporal_encode(
        &self,
        g: &mut Graph,
        seq: Var,
        context: Option<Var>,
        seq_segments: &[Segment],
        ctx_segments: &[Segment],
        output_rows: &[usize],
        pass: &mut Pass,
    ) -> Result<Var> {
        let mut h = match (&self.first, context) {
            (FirstTemporal::Cross(layer), Some(ctx)) => layer.apply(g, seq, ctx, seq_segments, ctx_segments, pass)?,
            (FirstTemporal::Cross(_), None) => return Err(Error::Shape("cross-attention layer needs a context".into())),
            (FirstTemporal::Plain(layer), _) => layer.apply(g, seq, seq_segments, pass)?,
        };
        for layer in &self.temporal {
            h = layer.apply(g, h, seq_segments, pass)?;
        }
        g.gather_rows(h, output_rows)
    }

    /// Apply every head to `[N, d]` fused vectors.
    pub fn predict(&self, g: &mut Graph, fused: Var) -> Result<(Vec<HeadOutput>, Var)> {
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut offset = 0;
        for (lin, spec) in self.heads.iter().zip(&self.config.heads_spec) {
            let logits = lin.apply(g, fused)?;
            let probs = match spec.activation {
                HeadActivation::Sigmoid => g.sigmoid(logits),
                HeadActivation::Softmax => g.softmax_rows(logits)?,
            };
            outs.push(HeadOutput { logits, probs, offset });
            offset += spec.classes;
        }
        let probs: Vec<Var> = outs.iter().map(|h| h.probs).collect();
        let z = g.concat_cols(&probs)?;
        Ok((outs, z))
    }

    pub fn forward(&self, g: &mut Graph, input: &BatchInput, pass: &mut Pass) -> Result<ForwardOutput> {
        if input.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let embedded = self.embed(g, input)?;
        let (refined, global) = self.spatial_encode(g, embedded.pairs, &input.scene_segments, pass)?;

        let l = self.config.window;
        let mut ctx_scenes = Vec::with_capacity(input.len() * l);
        let mut ctx_gaze = Vec::with_capacity(input.len() * l);
        let mut seq_rows = Vec::new();
        let mut seq_pe = Vec::new();
        let mut seq_lens = Vec::with_capacity(input.len());
        let mut output_rows = Vec::with_capacity(input.len());
        for s in &input.samples {
            ctx_scenes.extend_from_slice(&s.context_scenes);
            ctx_gaze.extend_from_slice(&s.context_gaze);
            output_rows.push(seq_rows.len() + s.output_row);
            seq_rows.extend_from_slice(&s.pair_rows);
            seq_pe.extend_from_slice(&s.pe_index);
            seq_lens.push(s.pair_rows.len());
        }
        let ctx_pe: Vec<usize> = (0..input.len()).flat_map(|_| 0..l).collect();
        let context = self.build_context(g, global, embedded.gaze, &ctx_scenes, &ctx_gaze, &ctx_pe)?;

        let seq = g.gather_rows(refined, &seq_rows)?;
        let pe = self.positional(g, &seq_pe)?;
        let seq = g.add(seq, pe)?;
        let seq_segments = Segment::tile(seq_lens);
        let ctx_segments = Segment::tile(std::iter::repeat_n(l, input.len()));
        let fused = self.temporal_encode(g, seq, context, &seq_segments, &ctx_segments, &output_rows, pass)?;
        let (heads, z) = self.predict(g, fused)?;
        if !g.value(z).is_finite() {
            return Err(Error::non_finite("model outputs"));
        }
        Ok(ForwardOutput {
            embedded,
            refined,
            global,
            context,
            fused,
            heads,
            z,
        })
    }

    /// Evaluation-mode head probabilities `[N, n_outputs]`.
    pub fn infer(&self, input: &BatchInput) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, input, &mut Pass::eval())?;
        Ok(g.value(out.z).clone())
    }
}
