//! Backbone registry. Every entry is a stack of stride-2 stages exposing
//! C2..C6 at strides 2..32; the detector uses the first `levels.len()`.

use rand::Rng;

use super::layers::Conv;
use crate::nn::{Graph, ParamStore, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneSpec {
    pub name: &'static str,
    /// Output channels of C2..C6.
    pub channels: [usize; 5],
    /// Residual 3x3 convolutions after each downsampling conv.
    pub extra_convs: usize,
}

const REGISTRY: &[BackboneSpec] = &[
    BackboneSpec { name: "toy", channels: [4, 6, 8, 8, 8], extra_convs: 0 },
    BackboneSpec { name: "tiny", channels: [16, 24, 32, 48, 64], extra_convs: 1 },
    BackboneSpec { name: "base", channels: [32, 64, 128, 192, 256], extra_convs: 2 },
];

impl BackboneSpec {
    pub fn lookup(name: &str) -> Result<&'static BackboneSpec> {
        REGISTRY.iter().find(|b| b.name == name).ok_or_else(|| {
            let known: Vec<&str> = REGISTRY.iter().map(|b| b.name).collect();
            Error::Config(format!("unknown backbone {name:?}; known: {}", known.join(", ")))
        })
    }

    pub fn names() -> Vec<&'static str> {
        REGISTRY.iter().map(|b| b.name).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    stages: Vec<(Conv, Vec<Conv>)>,
    pub channels: Vec<usize>,
}

impl Backbone {
    pub fn new(spec: &BackboneSpec, n_levels: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let mut cin = 1;
        let mut stages = Vec::new();
        for (s, &cout) in spec.channels.iter().take(n_levels).enumerate() {
            let down = Conv::new(store, rng, &format!("backbone.c{}.down", s + 2), cin, cout, 3, 2, true, None);
            let extra = (0..spec.extra_convs)
                .map(|e| Conv::new(store, rng, &format!("backbone.c{}.res{e}", s + 2), cout, cout, 3, 1, true, None))
                .collect();
            stages.push((down, extra));
            cin = cout;
        }
        Self {
            stages,
            channels: spec.channels[..n_levels].to_vec(),
        }
    }

    /// `x`: (1, H, W). Returns C2.. with ceil-halved spatial sizes.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Vec<Var> {
        let mut outs = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for (down, extra) in &self.stages {
            let y = down.forward(g, store, h);
            h = g.silu(y);
            for conv in extra {
                let y = conv.forward(g, store, h);
                let y = g.silu(y);
                h = g.add(h, y);
            }
            outs.push(h);
        }
        outs
    }
}
