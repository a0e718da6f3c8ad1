use rand::Rng;

use super::anchors::{generate_anchors, Anchor};
use super::boxes::{clip, decode, nms, rank_desc, BoxPx};
use super::layers::Conv;
use super::ModelConfig;
use crate::nn::{Graph, ParamStore, Var};

/// Shared across levels: 3x3 conv + SiLU, then 1x1 objectness (A) and
/// 1x1 deltas (4A).
#[derive(Clone, Debug)]
pub struct RpnHead {
    conv: Conv,
    obj: Conv,
    delta: Conv,
}

#[derive(Clone, Debug)]
pub struct RpnOutput {
    /// Per level, (A, h, w) logits.
    pub objectness: Vec<Var>,
    /// Per level, (4A, h, w).
    pub deltas: Vec<Var>,
    pub anchors: Vec<Vec<Anchor>>,
}

impl RpnHead {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, channels: usize, anchors_per_pos: usize) -> Self {
        Self {
            conv: Conv::new(store, rng, "rpn.conv", channels, channels, 3, 1, true, None),
            obj: Conv::new(store, rng, "rpn.objectness", channels, anchors_per_pos, 1, 1, true, Some(0.01)),
            delta: Conv::new(store, rng, "rpn.deltas", channels, 4 * anchors_per_pos, 1, 1, true, Some(0.001)),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, cfg: &ModelConfig, pyramid: &[Var]) -> RpnOutput {
        let mut out = RpnOutput { objectness: vec![], deltas: vec![], anchors: vec![] };
        for (level, &p) in pyramid.iter().enumerate() {
            let (_, h, w) = g.value(p).dims3();
            let t = self.conv.forward(g, store, p);
            let t = g.silu(t);
            out.objectness.push(self.obj.forward(g, store, t));
            out.deltas.push(self.delta.forward(g, store, t));
            out.anchors.push(generate_anchors(cfg, level, h, w));
        }
        out
    }
}

/// Decoded, clipped, class-agnostic proposals with objectness logits:
/// per-level top `pre_nms`, joint NMS, best `post_nms` kept.
pub fn proposals(
    g: &Graph,
    rpn: &RpnOutput,
    cfg: &ModelConfig,
    image_w: f64,
    image_h: f64,
    pre_nms: usize,
    post_nms: usize,
) -> Vec<(BoxPx, f64)> {
    let mut boxes = Vec::new();
    let mut scores = Vec::new();
    for (level, anchors) in rpn.anchors.iter().enumerate() {
        let obj = g.value(rpn.objectness[level]).data();
        let del = g.value(rpn.deltas[level]).data();
        let n = anchors.len();
        let (_, h, w) = g.value(rpn.objectness[level]).dims3();
        let hw = h * w;
        for &i in rank_desc(obj).iter().take(pre_nms) {
            let (a, pos) = (i / hw, i % hw);
            debug_assert!(i < n);
            let d: Vec<f64> = (0..4).map(|j| del[(4 * a + j) * hw + pos]).collect();
            let b = clip(&decode(&anchors[i].as_box(), &d, &cfg.rpn_box_weights), image_w, image_h);
            if b[2] - b[0] > 1e-3 && b[3] - b[1] > 1e-3 {
                boxes.push(b);
                scores.push(obj[i]);
            }
        }
    }
    nms(&boxes, &scores, cfg.rpn_nms_iou)
        .into_iter()
        .take(post_nms)
        .map(|i| (boxes[i], scores[i]))
        .collect()
}
