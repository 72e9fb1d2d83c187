//! Transformer building blocks over [`Graph`].

use rand::Rng;

use super::graph::{Graph, Mask, Var};
use super::mat::Mat;
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self {
            w: store.add_uniform(format!("{name}.w"), d_in, d_out, bound, rng),
            b: store.add_const(format!("{name}.b"), 1, d_out, 0.0),
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.linear(x, self.w, self.b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add_const(format!("{name}.gain"), 1, width, 1.0),
            bias: store.add_const(format!("{name}.bias"), 1, width, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.layer_norm(x, self.gain, self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

/// Output of an attention block plus the node holding its weights.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub out: Var,
    pub weights: Var,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(
            heads > 0 && width.is_multiple_of(heads),
            "width {width} not divisible by {heads} heads"
        );
        Self {
            q: Linear::new(store, &format!("{name}.q"), width, width, rng),
            k: Linear::new(store, &format!("{name}.k"), width, width, rng),
            v: Linear::new(store, &format!("{name}.v"), width, width, rng),
            o: Linear::new(store, &format!("{name}.o"), width, width, rng),
            heads,
        }
    }

    /// Key and value projections of `memory`.
    pub fn project_kv(&self, g: &mut Graph, memory: Var) -> (Var, Var) {
        (self.k.forward(g, memory), self.v.forward(g, memory))
    }

    /// Attends from `x` to already projected keys and values.
    pub fn attend(&self, g: &mut Graph, x: Var, k: Var, v: Var, mask: &Mask) -> Attended {
        let q = self.q.forward(g, x);
        let weights = g.attention(q, k, v, self.heads, mask);
        Attended {
            out: self.o.forward(g, weights),
            weights,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var, mask: &Mask) -> Attended {
        let (k, v) = self.project_kv(g, memory);
        self.attend(g, x, k, v, mask)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), width, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, width, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.up.forward(g, x);
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

/// Pre-norm self-attention layer.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), width),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), width),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), width, hidden, rng),
        }
    }

    /// Returns the layer output and the attention-weight node.
    pub fn forward(&self, g: &mut Graph, x: Var, mask: &Mask) -> (Var, Var) {
        let h = self.norm1.forward(g, x);
        let a = self.attn.forward(g, h, h, mask);
        let x = g.add(x, a.out);
        let h = self.norm2.forward(g, x);
        let f = self.ffn.forward(g, h);
        (g.add(x, f), a.weights)
    }
}

/// Pre-norm decoder layer: optional self-attention, cross-attention, FFN.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: Option<(LayerNorm, MultiHeadAttention)>,
    pub norm_cross: LayerNorm,
    pub cross: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

/// Per-layer keys and values reused across decoding steps.
#[derive(Debug, Clone, Default)]
pub struct LayerCache {
    pub self_k: Option<Mat>,
    pub self_v: Option<Mat>,
    pub cross_k: Option<Mat>,
    pub cross_v: Option<Mat>,
}

impl DecoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        hidden: usize,
        self_attention: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let self_attn = self_attention.then(|| {
            (
                LayerNorm::new(store, &format!("{name}.norm_self"), width),
                MultiHeadAttention::new(store, &format!("{name}.self"), width, heads, rng),
            )
        });
        Self {
            self_attn,
            norm_cross: LayerNorm::new(store, &format!("{name}.norm_cross"), width),
            cross: MultiHeadAttention::new(store, &format!("{name}.cross"), width, heads, rng),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), width),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), width, hidden, rng),
        }
    }

    /// Returns the output and the cross-attention weight node.
    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var, self_mask: &Mask, memory_mask: &Mask) -> (Var, Var) {
        let mut x = x;
        if let Some((norm, attn)) = &self.self_attn {
            let h = norm.forward(g, x);
            let a = attn.forward(g, h, h, self_mask);
            x = g.add(x, a.out);
        }
        let h = self.norm_cross.forward(g, x);
        let a = self.cross.forward(g, h, memory, memory_mask);
        let x = g.add(x, a.out);
        let h = self.norm_ffn.forward(g, x);
        let f = self.ffn.forward(g, h);
        (g.add(x, f), a.weights)
    }

    /// One incremental step: `x` holds the newest rows only. Keys and values
    /// of earlier rows come from `cache`, which is extended in place.
    pub fn step(&self, g: &mut Graph, x: Var, memory: &Mat, memory_mask: &Mask, cache: &mut LayerCache) -> Var {
        let mut x = x;
        if let Some((norm, attn)) = &self.self_attn {
            let h = norm.forward(g, x);
            let (k_new, v_new) = attn.project_kv(g, h);
            let k = extend(g, &mut cache.self_k, k_new);
            let v = extend(g, &mut cache.self_v, v_new);
            let a = attn.attend(g, h, k, v, &Mask::Causal);
            x = g.add(x, a.out);
        }
        let h = self.norm_cross.forward(g, x);
        let (k, v) = match (&cache.cross_k, &cache.cross_v) {
            (Some(k), Some(v)) => (g.input(k.clone()), g.input(v.clone())),
            _ => {
                let m = g.input(memory.clone());
                let (k, v) = self.cross.project_kv(g, m);
                cache.cross_k = Some(g.value(k).clone());
                cache.cross_v = Some(g.value(v).clone());
                (k, v)
            }
        };
        let a = self.cross.attend(g, h, k, v, memory_mask);
        let x = g.add(x, a.out);
        let h = self.norm_ffn.forward(g, x);
        let f = self.ffn.forward(g, h);
        g.add(x, f)
    }
}

fn extend(g: &mut Graph, cached: &mut Option<Mat>, new: Var) -> Var {
    let full = match cached.take() {
        Some(old) => {
            let old = g.input(old);
            g.concat_rows(old, new)
        }
        None => new,
    };
    *cached = Some(g.value(full).clone());
    full
}

/// `pe[p, 2i] = sin(p / 10000^(2i/w))`, `pe[p, 2i+1] = cos(...)`.
pub fn sinusoidal_pe(len: usize, width: usize) -> Mat {
    Mat::from_fn(len, width, |p, c| {
        let i = (c / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / width as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
