//! Per-level self-attention with a residual connection.

use rand::Rng;

use super::layers::Linear;
use crate::nn::{Graph, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct LevelAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub max_kv_side: usize,
}

impl LevelAttention {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize, heads: usize, max_kv_side: usize) -> Self {
        let std = 1.0 / (channels as f64).sqrt();
        Self {
            q: Linear::new(store, rng, &format!("{name}.q"), channels, channels, true, std),
            k: Linear::new(store, rng, &format!("{name}.k"), channels, channels, true, std),
            v: Linear::new(store, rng, &format!("{name}.v"), channels, channels, true, std),
            out: Linear::new(store, rng, &format!("{name}.out"), channels, channels, true, 0.1 * std),
            heads,
            max_kv_side,
        }
    }

    /// `x`: (c, h, w) -> same shape. Keys and values come from `x`
    /// average-pooled to at most `max_kv_side` per side.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (_, h, w) = g.value(x).dims3();
        let tokens = g.chw_to_tokens(x);
        let kh = h.div_ceil(self.max_kv_side);
        let kw = w.div_ceil(self.max_kv_side);
        let kv_tokens = if kh > 1 || kw > 1 {
            let pooled = g.avg_pool(x, kh, kw);
            g.chw_to_tokens(pooled)
        } else {
            tokens
        };
        let q = self.q.forward(g, store, tokens);
        let k = self.k.forward(g, store, kv_tokens);
        let v = self.v.forward(g, store, kv_tokens);
        let a = g.attention(q, k, v, self.heads);
        let o = self.out.forward(g, store, a);
        let o = g.tokens_to_chw(o, h, w);
        g.add(x, o)
    }
}
