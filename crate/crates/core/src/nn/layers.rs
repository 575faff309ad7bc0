//! Pre-layer-norm transformer pieces. Each layer only holds parameter ids;
//! values live in the model's [`ParamStore`].

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{AttentionMask, Group, ParamId, ParamStore, Real, Tape, Tensor, Var};

pub(crate) struct Init<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
    pub std: Real,
    pub group: Group,
}

impl<R: Rng> Init<'_, R> {
    pub fn normal(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, self.std as f64).expect("init std");
        let data: Vec<Real> = (0..n).map(|_| dist.sample(self.rng) as Real).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("init shape");
        self.store.add(format!("{}.{name}", self.group.name()), self.group, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: Real) -> ParamId {
        self.store.add(format!("{}.{name}", self.group.name()), self.group, Tensor::full(shape, value))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, din: usize, dout: usize) -> Self {
        let w = init.normal(&format!("{name}.w"), &[din, dout]);
        let b = init.constant(&format!("{name}.b"), &[dout], 0.0);
        Linear { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: init.constant(&format!("{name}.g"), &[dim], 1.0),
            bias: init.constant(&format!("{name}.b"), &[dim], 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, dim: usize, heads: usize) -> Self {
        MultiHeadAttention {
            q: Linear::new(init, &format!("{name}.q"), dim, dim),
            k: Linear::new(init, &format!("{name}.k"), dim, dim),
            v: Linear::new(init, &format!("{name}.v"), dim, dim),
            o: Linear::new(init, &format!("{name}.o"), dim, dim),
            heads,
        }
    }

    pub fn forward(&self, tape: &mut Tape, queries: Var, keys: Var, mask: AttentionMask) -> Var {
        let q = self.q.forward(tape, queries);
        let k = self.k.forward(tape, keys);
        let v = self.v.forward(tape, keys);
        let a = tape.attention(q, k, v, self.heads, mask);
        self.o.forward(tape, a)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, dim: usize, hidden: usize) -> Self {
        FeedForward {
            up: Linear::new(init, &format!("{name}.up"), dim, hidden),
            down: Linear::new(init, &format!("{name}.down"), hidden, dim),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.up.forward(tape, x);
        let h = tape.gelu(h);
        self.down.forward(tape, h)
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln_attn: LayerNorm,
    attn: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

/// Bidirectional self-attention stack with a final layer norm.
#[derive(Clone, Debug)]
pub(crate) struct EncoderStack {
    layers: Vec<EncoderLayer>,
    ln_out: LayerNorm,
}

impl EncoderStack {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, layers: usize, dim: usize, heads: usize, ffn: usize) -> Self {
        let layers = (0..layers)
            .map(|l| EncoderLayer {
                ln_attn: LayerNorm::new(init, &format!("l{l}.ln_attn"), dim),
                attn: MultiHeadAttention::new(init, &format!("l{l}.attn"), dim, heads),
                ln_ffn: LayerNorm::new(init, &format!("l{l}.ln_ffn"), dim),
                ffn: FeedForward::new(init, &format!("l{l}.ffn"), dim, ffn),
            })
            .collect();
        EncoderStack { layers, ln_out: LayerNorm::new(init, "ln_out", dim) }
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var, mask: &AttentionMask) -> Var {
        for layer in &self.layers {
            let h = layer.ln_attn.forward(tape, x);
            let a = layer.attn.forward(tape, h, h, mask.clone());
            let a = tape.dropout(a);
            x = tape.add(x, a);
            let h = layer.ln_ffn.forward(tape, x);
            let f = layer.ffn.forward(tape, h);
            let f = tape.dropout(f);
            x = tape.add(x, f);
        }
        self.ln_out.forward(tape, x)
    }
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    cross: Option<(LayerNorm, MultiHeadAttention)>,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

/// Causal stack, optionally with cross attention over a memory.
#[derive(Clone, Debug)]
pub(crate) struct DecoderStack {
    layers: Vec<DecoderLayer>,
    ln_out: LayerNorm,
}

impl DecoderStack {
    pub fn new<R: Rng>(
        init: &mut Init<'_, R>,
        layers: usize,
        dim: usize,
        heads: usize,
        ffn: usize,
        cross_attention: bool,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| DecoderLayer {
                ln_self: LayerNorm::new(init, &format!("l{l}.ln_self"), dim),
                self_attn: MultiHeadAttention::new(init, &format!("l{l}.self_attn"), dim, heads),
                cross: cross_attention.then(|| {
                    (
                        LayerNorm::new(init, &format!("l{l}.ln_cross"), dim),
                        MultiHeadAttention::new(init, &format!("l{l}.cross_attn"), dim, heads),
                    )
                }),
                ln_ffn: LayerNorm::new(init, &format!("l{l}.ln_ffn"), dim),
                ffn: FeedForward::new(init, &format!("l{l}.ffn"), dim, ffn),
            })
            .collect();
        DecoderStack { layers, ln_out: LayerNorm::new(init, "ln_out", dim) }
    }

    pub fn has_cross_attention(&self) -> bool {
        self.layers.iter().any(|l| l.cross.is_some())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        mut x: Var,
        self_mask: &AttentionMask,
        memory: Option<(Var, &AttentionMask)>,
    ) -> Var {
        for layer in &self.layers {
            let h = layer.ln_self.forward(tape, x);
            let a = layer.self_attn.forward(tape, h, h, self_mask.clone());
            let a = tape.dropout(a);
            x = tape.add(x, a);
            if let (Some((ln, attn)), Some((mem, mem_mask))) = (&layer.cross, memory) {
                let h = ln.forward(tape, x);
                let c = attn.forward(tape, h, mem, mem_mask.clone());
                let c = tape.dropout(c);
                x = tape.add(x, c);
            }
            let h = layer.ln_ffn.forward(tape, x);
            let f = layer.ffn.forward(tape, h);
            let f = tape.dropout(f);
            x = tape.add(x, f);
        }
        self.ln_out.forward(tape, x)
    }
}

/// Domain critic: affine, GELU, affine to one logit.
#[derive(Clone, Debug)]
pub(crate) struct CriticMlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl CriticMlp {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, dim: usize, hidden: usize) -> Self {
        CriticMlp { hidden: Linear::new(init, "hidden", dim, hidden), out: Linear::new(init, "out", hidden, 1) }
    }

    pub fn logits(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.hidden.forward(tape, x);
        let h = tape.gelu(h);
        self.out.forward(tape, h)
    }
}
