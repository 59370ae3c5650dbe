//! Pre-norm transformer building blocks on top of [`Graph`].

use ndarray::Array2;
use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformerConfig {
    pub hidden: usize,
    pub heads: usize,
    pub ff: usize,
    pub layers: usize,
    pub max_len: usize,
}

impl TransformerConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            w: store.xavier(&format!("{name}.w"), input, output, rng),
            b: store.constant(&format!("{name}.b"), 1, output, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        let b = g.param(self.b);
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.constant(&format!("{name}.gamma"), 1, dim, 1.0),
            beta: store.constant(&format!("{name}.beta"), 1, dim, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Token plus learned absolute position embeddings.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub max_len: usize,
}

impl Embeddings {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, vocab: usize, cfg: &TransformerConfig, rng: &mut R) -> Self {
        let std = 1.0 / (cfg.hidden as f64).sqrt();
        Embeddings {
            tokens: store.normal(&format!("{name}.tok"), vocab, cfg.hidden, std, rng),
            positions: store.normal(&format!("{name}.pos"), cfg.max_len, cfg.hidden, std, rng),
            max_len: cfg.max_len,
        }
    }

    /// Callers guarantee `ids.len() <= max_len`.
    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Var {
        assert!(ids.len() <= self.max_len, "sequence exceeds position table");
        let table = g.param(self.tokens);
        let tok = g.gather(table, ids);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let ptable = g.param(self.positions);
        let pos = g.gather(ptable, &positions);
        g.add(tok, pos)
    }
}

/// Additive causal mask: `-inf` above the diagonal.
pub fn causal_mask(len: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, len), |(i, j)| if j > i { f64::NEG_INFINITY } else { 0.0 })
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &TransformerConfig, rng: &mut R) -> Self {
        let b = cfg.hidden;
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), b, b, rng),
            k: Linear::new(store, &format!("{name}.k"), b, b, rng),
            v: Linear::new(store, &format!("{name}.v"), b, b, rng),
            o: Linear::new(store, &format!("{name}.o"), b, b, rng),
            heads: cfg.heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, query: Var, memory: Var, mask: Option<&Array2<f64>>) -> Var {
        let q = self.q.forward(g, query);
        let k = self.k.forward(g, memory);
        let v = self.v.forward(g, memory);
        let width = g.value(q).ncols();
        let dh = width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh),
                    g.slice_cols(k, h * dh, dh),
                    g.slice_cols(v, h * dh, dh),
                )
            };
            let scores = g.matmul_t(qh, kh);
            let mut scores = g.scale(scores, scale);
            if let Some(m) = mask {
                scores = g.add_const(scores, m);
            }
            let p = g.softmax(scores);
            outs.push(g.matmul(p, vh));
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        self.o.forward(g, joined)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &TransformerConfig, rng: &mut R) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), cfg.hidden, cfg.ff, rng),
            down: Linear::new(store, &format!("{name}.down"), cfg.ff, cfg.hidden, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.up.forward(g, x);
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff: FeedForward,
}

impl EncoderLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &TransformerConfig, rng: &mut R) -> Self {
        EncoderLayer {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.hidden),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.hidden),
            ff: FeedForward::new(store, &format!("{name}.ff"), cfg, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: Option<&Array2<f64>>) -> Var {
        let h = self.ln1.forward(g, x);
        let a = self.attn.forward(g, h, h, mask);
        let x = g.add(x, a);
        let h = self.ln2.forward(g, x);
        let f = self.ff.forward(g, h);
        g.add(x, f)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln3: LayerNorm,
    ff: FeedForward,
}

impl DecoderLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, cfg: &TransformerConfig, rng: &mut R) -> Self {
        DecoderLayer {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.hidden),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self"), cfg, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.hidden),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross"), cfg, rng),
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), cfg.hidden),
            ff: FeedForward::new(store, &format!("{name}.ff"), cfg, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var, causal: &Array2<f64>) -> Var {
        let h = self.ln1.forward(g, x);
        let a = self.self_attn.forward(g, h, h, Some(causal));
        let x = g.add(x, a);
        let h = self.ln2.forward(g, x);
        let c = self.cross_attn.forward(g, h, memory, None);
        let x = g.add(x, c);
        let h = self.ln3.forward(g, x);
        let f = self.ff.forward(g, h);
        g.add(x, f)
    }
}

/// Stack of bidirectional encoder layers with a final layer norm.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub embeddings: Embeddings,
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, vocab: usize, cfg: &TransformerConfig, rng: &mut R) -> Self {
        Encoder {
            embeddings: Embeddings::new(store, &format!("{name}.emb"), vocab, cfg, rng),
            layers: (0..cfg.layers)
                .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), cfg, rng))
                .collect(),
            norm: LayerNorm::new(store, &format!("{name}.norm"), cfg.hidden),
        }
    }

    /// Returns one `hidden`-wide state per input id.
    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Var {
        let mut x = self.embeddings.forward(g, ids);
        for layer in &self.layers {
            x = layer.forward(g, x, None);
        }
        self.norm.forward(g, x)
    }
}

/// Causal decoder stack cross-attending to an encoder memory.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub embeddings: Embeddings,
    layers: Vec<DecoderLayer>,
    norm: LayerNorm,
}

impl Decoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, vocab: usize, cfg: &TransformerConfig, rng: &mut R) -> Self {
        Decoder {
            embeddings: Embeddings::new(store, &format!("{name}.emb"), vocab, cfg, rng),
            layers: (0..cfg.layers)
                .map(|i| DecoderLayer::new(store, &format!("{name}.layer{i}"), cfg, rng))
                .collect(),
            norm: LayerNorm::new(store, &format!("{name}.norm"), cfg.hidden),
        }
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize], memory: Var) -> Var {
        let mut x = self.embeddings.forward(g, ids);
        let mask = causal_mask(ids.len());
        for layer in &self.layers {
            x = layer.forward(g, x, memory, &mask);
        }
        self.norm.forward(g, x)
    }
}
