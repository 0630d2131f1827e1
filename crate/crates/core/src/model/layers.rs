//! Parameterized building blocks shared by the encoders.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::Activation;
use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Segment, Tensor, Var};

/// Seeded parameter initializer writing into a store.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.store.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.store.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::filled(shape, value))
    }
}

/// Train-time dropout state; evaluation passes carry no generator.
pub struct Pass<'r> {
    rng: Option<&'r mut ChaCha8Rng>,
    p: f64,
}

impl<'r> Pass<'r> {
    pub fn eval() -> Self {
        Self { rng: None, p: 0.0 }
    }

    pub fn train(rng: &'r mut ChaCha8Rng, p: f64) -> Self {
        Self { rng: Some(rng), p }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Inverted dropout: surviving entries are scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        let p = self.p;
        match self.rng.as_deref_mut() {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let shape = g.shape(x).to_vec();
                let n: usize = shape.iter().product();
                let mask = (0..n)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect();
                g.mul_const(x, Tensor::new(shape, mask)?)
            }
            _ => Ok(x),
        }
    }
}

pub(crate) fn activate(g: &mut Graph, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => g.relu(x),
        Activation::Gelu => g.gelu(x),
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, input: usize, output: usize) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Self {
            w: init.uniform(&format!("{name}.w"), &[input, output], bound),
            b: init.constant(&format!("{name}.b"), &[output], 0.0),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> Self {
        Self {
            gamma: init.constant(&format!("{name}.gamma"), &[dim], 1.0),
            beta: init.constant(&format!("{name}.beta"), &[dim], 0.0),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gm = g.param(self.gamma);
        let bt = g.param(self.beta);
        g.layer_norm(x, gm, bt)
    }
}

/// Multi-head attention with per-head projections of width
/// `ceil(d / heads)` and an output projection back to `d`.
#[derive(Debug, Clone)]
pub(crate) struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize) -> Self {
        let inner = dim.div_ceil(heads) * heads;
        Self {
            q: Linear::new(init, &format!("{name}.q"), dim, inner),
            k: Linear::new(init, &format!("{name}.k"), dim, inner),
            v: Linear::new(init, &format!("{name}.v"), dim, inner),
            o: Linear::new(init, &format!("{name}.o"), inner, dim),
            heads,
        }
    }

    /// Rows of `query` in `seg_q[i]` attend to rows of `memory` in `seg_k[i]`.
    pub fn apply(&self, g: &mut Graph, query: Var, memory: Var, seg_q: &[Segment], seg_k: &[Segment]) -> Result<Var> {
        let q = self.q.apply(g, query)?;
        let k = self.k.apply(g, memory)?;
        let v = self.v.apply(g, memory)?;
        let a = g.segment_attention(q, k, v, self.heads, seg_q, seg_k)?;
        self.o.apply(g, a)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    l1: Linear,
    l2: Linear,
    act: Activation,
}

impl FeedForward {
    pub fn new(init: &mut Init, name: &str, dim: usize, hidden: usize, act: Activation) -> Self {
        Self {
            l1: Linear::new(init, &format!("{name}.l1"), dim, hidden),
            l2: Linear::new(init, &format!("{name}.l2"), hidden, dim),
            act,
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var, pass: &mut Pass) -> Result<Var> {
        let h = self.l1.apply(g, x)?;
        let h = activate(g, h, self.act);
        let h = pass.dropout(g, h)?;
        self.l2.apply(g, h)
    }
}

/// Post-norm self-attention encoder layer.
#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize, hidden: usize, act: Activation) -> Self {
        Self {
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), dim, heads),
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), dim, hidden, act),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var, segments: &[Segment], pass: &mut Pass) -> Result<Var> {
        let a = self.attn.apply(g, x, x, segments, segments)?;
        let a = pass.dropout(g, a)?;
        let x = g.add(x, a)?;
        let x = self.ln1.apply(g, x)?;
        let f = self.ffn.apply(g, x, pass)?;
        let f = pass.dropout(g, f)?;
        let x = g.add(x, f)?;
        self.ln2.apply(g, x)
    }
}

/// First temporal layer: self-attention over the context window, then
/// cross-attention from the pair window into it, then a feed-forward block.
#[derive(Debug, Clone)]
pub(crate) struct CrossLayer {
    ctx_attn: MultiHeadAttention,
    ctx_ln: LayerNorm,
    cross: MultiHeadAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

impl CrossLayer {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize, hidden: usize, act: Activation) -> Self {
        Self {
            ctx_attn: MultiHeadAttention::new(init, &format!("{name}.ctx_attn"), dim, heads),
            ctx_ln: LayerNorm::new(init, &format!("{name}.ctx_ln"), dim),
            cross: MultiHeadAttention::new(init, &format!("{name}.cross"), dim, heads),
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), dim, hidden, act),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim),
        }
    }

    pub fn apply(
        &self,
        g: &mut Graph,
        pairs: Var,
        context: Var,
        seg_pairs: &[Segment],
        seg_ctx: &[Segment],
        pass: &mut Pass,
    ) -> Result<Var> {
        let c = self.ctx_attn.apply(g, context, context, seg_ctx, seg_ctx)?;
        let c = pass.dropout(g, c)?;
        let c = g.add(context, c)?;
        let c = self.ctx_ln.apply(g, c)?;
        let a = self.cross.apply(g, pairs, c, seg_pairs, seg_ctx)?;
        let a = pass.dropout(g, a)?;
        let x = g.add(pairs, a)?;
        let x = self.ln1.apply(g, x)?;
        let f = self.ffn.apply(g, x, pass)?;
        let f = pass.dropout(g, f)?;
        let x = g.add(x, f)?;
        self.ln2.apply(g, x)
    }
}

/// Two unpadded convolutions with a nonlinearity between them, global
/// average pooling and a linear map.
#[derive(Debug, Clone)]
pub(crate) struct ConvEmbed {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    proj: Linear,
    kernel: usize,
    stride: usize,
    act: Activation,
}

impl ConvEmbed {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        init: &mut Init,
        name: &str,
        in_channels: usize,
        channels: [usize; 2],
        kernel: usize,
        stride: usize,
        out: usize,
        act: Activation,
    ) -> Self {
        let fan1 = in_channels * kernel * kernel;
        let fan2 = channels[0] * kernel * kernel;
        Self {
            w1: init.uniform(&format!("{name}.conv1.w"), &[channels[0], fan1], (6.0 / fan1 as f64).sqrt()),
            b1: init.constant(&format!("{name}.conv1.b"), &[channels[0]], 0.0),
            w2: init.uniform(&format!("{name}.conv2.w"), &[channels[1], fan2], (6.0 / fan2 as f64).sqrt()),
            b2: init.constant(&format!("{name}.conv2.b"), &[channels[1]], 0.0),
            proj: Linear::new(init, &format!("{name}.proj"), channels[1], out),
            kernel,
            stride,
            act,
        }
    }

    /// `[N, C, H, W] -> [N, out]`.
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (g.param(self.w1), g.param(self.b1), g.param(self.w2), g.param(self.b2));
        let h = g.conv2d(x, w1, b1, self.kernel, self.stride)?;
        let h = activate(g, h, self.act);
        let h = g.conv2d(h, w2, b2, self.kernel, self.stride)?;
        let h = g.global_avg_pool(h)?;
        self.proj.apply(g, h)
    }
}
