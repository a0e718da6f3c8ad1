use rand::Rng;

use super::layers::Linear;
use super::ModelConfig;
use crate::nn::{Graph, ParamStore, Tensor, Var};

/// Positional-encoding projection plus the two-layer box head.
#[derive(Clone, Debug)]
pub struct RcnnHead {
    pub pe_proj: Option<Linear>,
    fc1: Linear,
    fc2: Linear,
    cls: Linear,
    bbox: Linear,
    pub feature_dim: usize,
}

impl RcnnHead {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.fpn_channels * cfg.roi_size.0 * cfg.roi_size.1;
        let pe = cfg.pe_dims();
        let h = cfg.rcnn_hidden;
        let k = cfg.num_classes;
        Self {
            pe_proj: (pe > 0).then(|| Linear::new(store, rng, "rcnn.pe_proj", pe, d, false, 1.0 / (pe as f64).sqrt())),
            fc1: Linear::new(store, rng, "rcnn.fc1", d, h, true, (2.0 / d as f64).sqrt()),
            fc2: Linear::new(store, rng, "rcnn.fc2", h, h, true, (2.0 / h as f64).sqrt()),
            cls: Linear::new(store, rng, "rcnn.cls", h, k + 1, true, 0.01),
            bbox: Linear::new(store, rng, "rcnn.bbox", h, 4 * k, true, 0.001),
            feature_dim: d,
        }
    }

    /// `pooled`: (R, C, oh, ow); `pe`: (R, pe_dims). Returns logits
    /// (R, K+1) and deltas (R, 4K).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, pooled: Var, pe: Option<Tensor>) -> (Var, Var) {
        let r = g.value(pooled).shape()[0];
        let mut x = g.reshape(pooled, vec![r, self.feature_dim]);
        if let (Some(proj), Some(pe)) = (&self.pe_proj, pe) {
            let pe = g.input(pe);
            let p = proj.forward(g, store, pe);
            x = g.add(x, p);
        }
        let h = self.fc1.forward(g, store, x);
        let h = g.silu(h);
        let h = self.fc2.forward(g, store, h);
        let h = g.silu(h);
        (self.cls.forward(g, store, h), self.bbox.forward(g, store, h))
    }
}
