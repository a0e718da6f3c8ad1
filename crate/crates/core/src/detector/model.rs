use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::LevelAttention;
use super::backbone::{Backbone, BackboneSpec};
use super::boxes::{clip, decode, nms, BoxPx};
use super::fpn::Fpn;
use super::pe::positional_encode;
use super::rcnn::RcnnHead;
use super::rpn::{proposals, RpnHead, RpnOutput};
use super::targets::{rcnn_targets, rpn_targets, GtBox, TrainPlan};
use super::ModelConfig;
use crate::nn::kernels::roi_align::RoiAlignSpec;
use crate::nn::{Graph, ParamStore, Tensor, Var};
use crate::{Error, Result};

/// Where the input image sits inside its spectrogram window, for the
/// positional encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeContext {
    /// Window-frame x of the image's column 0 (non-zero for training crops).
    pub x_offset: f64,
    pub window_width: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub rpn_obj: f64,
    pub rpn_reg: f64,
    pub rcnn_cls: f64,
    pub rcnn_reg: f64,
}

impl Losses {
    pub fn total(&self) -> f64 {
        self.rpn_obj + self.rpn_reg + self.rcnn_cls + self.rcnn_reg
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

/// A detection in the input image's pixel frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelDetection {
    pub bbox: BoxPx,
    /// Zero-based species index.
    pub class: usize,
    pub score: f64,
}

/// Backbone, pyramid and the intermediate values exposed for inspection.
pub struct Features {
    pub backbone: Vec<Var>,
    pub attended: Vec<Var>,
    pub pyramid: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    backbone: Backbone,
    attention: Vec<LevelAttention>,
    fpn: Fpn,
    rpn: RpnHead,
    pub rcnn: RcnnHead,
}

impl Detector {
    /// Fresh weights drawn from `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = BackboneSpec::lookup(&cfg.backbone_name)?;
        let n = cfg.levels.len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::new(spec, n, &mut store, &mut rng);
        for &c in &backbone.channels {
            if c % cfg.attn_heads != 0 {
                return Err(Error::Config(format!(
                    "backbone channel count {c} not divisible by {} attention heads",
                    cfg.attn_heads
                )));
            }
        }
        let attention = if cfg.use_attention {
            backbone
                .channels
                .iter()
                .zip(&cfg.levels)
                .map(|(&c, l)| LevelAttention::new(&mut store, &mut rng, &format!("attn.c{l}"), c, cfg.attn_heads, cfg.attn_max_kv_side))
                .collect()
        } else {
            Vec::new()
        };
        let fpn = Fpn::new(&mut store, &mut rng, &backbone.channels, cfg.fpn_channels, &cfg.levels);
        let rpn = RpnHead::new(&mut store, &mut rng, cfg.fpn_channels, cfg.num_anchors_per_position());
        let rcnn = RcnnHead::new(&mut store, &mut rng, &cfg);
        Ok(Self { cfg, params: store, backbone, attention, fpn, rpn, rcnn })
    }

    /// Rebuilds the architecture from `cfg` and installs `params`, which
    /// must match it name for name and shape for shape.
    pub fn with_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut d = Self::new(cfg)?;
        if d.params.len() != params.len() {
            return Err(Error::Config(format!(
                "weights hold {} tensors, architecture expects {}",
                params.len(),
                d.params.len()
            )));
        }
        for id in d.params.ids() {
            if d.params.name(id) != params.name(id) || d.params.get(id).shape() != params.get(id).shape() {
                return Err(Error::Config(format!(
                    "weight {} ({:?}) does not match architecture {} ({:?})",
                    params.name(id),
                    params.get(id).shape(),
                    d.params.name(id),
                    d.params.get(id).shape()
                )));
            }
        }
        d.params = params;
        Ok(d)
    }

    pub fn image_tensor(pixels: &[f64], height: usize, width: usize) -> Tensor {
        Tensor::new(vec![1, height, width], pixels.to_vec())
    }

    pub fn features(&self, g: &mut Graph, image: Var) -> Result<Features> {
        let backbone = self.backbone.forward(g, &self.params, image);
        let attended: Vec<Var> = if self.cfg.use_attention {
            backbone
                .iter()
                .zip(&self.attention)
                .map(|(&c, a)| a.forward(g, &self.params, c))
                .collect()
        } else {
            backbone.clone()
        };
        let pyramid = self.fpn.forward(g, &self.params, &attended)?;
        Ok(Features { backbone, attended, pyramid })
    }

    pub fn rpn_forward(&self, g: &mut Graph, pyramid: &[Var]) -> RpnOutput {
        self.rpn.forward(g, &self.params, &self.cfg, pyramid)
    }

    /// Pyramid index for a RoI by its scale.
    pub fn roi_level(&self, b: &BoxPx) -> usize {
        let s = ((b[2] - b[0]).max(1e-6) * (b[3] - b[1]).max(1e-6)).sqrt();
        let k = (self.cfg.roi_canonical_level as f64 + (s / self.cfg.roi_canonical_size).log2()).floor();
        let lo = self.cfg.levels[0] as f64;
        let hi = *self.cfg.levels.last().unwrap() as f64;
        (k.clamp(lo, hi) - lo) as usize
    }

    pub fn pe_matrix(&self, rois: &[BoxPx], ctx: PeContext) -> Option<Tensor> {
        let d = self.cfg.pe_dims();
        if d == 0 {
            return None;
        }
        let mut data = Vec::with_capacity(rois.len() * d);
        for b in rois {
            let shifted = [b[0] + ctx.x_offset, b[1], b[2] + ctx.x_offset, b[3]];
            data.extend(positional_encode(&shifted, ctx.window_width, &self.cfg));
        }
        Some(Tensor::new(vec![rois.len(), d], data))
    }

    /// RoIAlign over the pyramid; (R, C, oh, ow).
    pub fn pool_rois(&self, g: &mut Graph, pyramid: &[Var], rois: &[BoxPx]) -> Var {
        let scales: Vec<f64> = self.cfg.strides().iter().map(|&s| 1.0 / s as f64).collect();
        let tagged: Vec<(usize, BoxPx)> = rois.iter().map(|b| (self.roi_level(b), *b)).collect();
        let spec = RoiAlignSpec { out_h: self.cfg.roi_size.0, out_w: self.cfg.roi_size.1, sampling: self.cfg.roi_sampling };
        g.roi_align(pyramid, &scales, &tagged, spec)
    }

    /// Class logits (R, K+1) and per-class deltas (R, 4K).
    pub fn roi_heads(&self, g: &mut Graph, pyramid: &[Var], rois: &[BoxPx], ctx: PeContext) -> (Var, Var) {
        let pooled = self.pool_rois(g, pyramid, rois);
        let pe = self.pe_matrix(rois, ctx);
        self.rcnn.forward(g, &self.params, pooled, pe)
    }

    /// Samples a training plan from the current weights' proposals.
    pub fn plan(&self, g: &Graph, rpn: &RpnOutput, gts: &[GtBox], width: usize, height: usize, rng: &mut ChaCha8Rng) -> TrainPlan {
        let props: Vec<BoxPx> = proposals(
            g,
            rpn,
            &self.cfg,
            width as f64,
            height as f64,
            self.cfg.rpn_pre_nms_topk_train,
            self.cfg.rpn_post_nms_topk_train,
        )
        .into_iter()
        .map(|p| p.0)
        .collect();
        TrainPlan {
            rpn: rpn_targets(&rpn.anchors, gts, &self.cfg, rng),
            rcnn: rcnn_targets(&props, gts, &self.cfg, rng),
        }
    }

    /// Builds the training loss on `g`. With `plan = None` a plan is
    /// sampled with `rng` and returned alongside.
    pub fn loss(
        &self,
        g: &mut Graph,
        image: &Tensor,
        gts: &[GtBox],
        ctx: PeContext,
        plan: Option<&TrainPlan>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Var, Losses, TrainPlan)> {
        let (_, height, width) = image.dims3();
        let x = g.input(image.clone());
        let feats = self.features(g, x)?;
        let rpn = self.rpn_forward(g, &feats.pyramid);
        let plan = match plan {
            Some(p) => p.clone(),
            None => self.plan(g, &rpn, gts, width, height, rng),
        };
        let beta = self.cfg.smooth_l1_beta;
        let mut obj_terms = Vec::new();
        let mut reg_terms = Vec::new();
        for l in 0..rpn.objectness.len() {
            obj_terms.push(g.bce_with_logits(rpn.objectness[l], plan.rpn.obj_targets[l].clone(), plan.rpn.obj_weights[l].clone()));
            reg_terms.push(g.smooth_l1(rpn.deltas[l], plan.rpn.delta_targets[l].clone(), plan.rpn.delta_weights[l].clone(), beta));
        }
        let rpn_obj = g.sum(&obj_terms);
        let rpn_reg = g.sum(&reg_terms);
        let (logits, deltas) = self.roi_heads(g, &feats.pyramid, &plan.rcnn.rois, ctx);
        let rcnn_cls = g.cross_entropy(logits, plan.rcnn.labels.clone(), plan.rcnn.weights.clone());
        let rcnn_reg = g.smooth_l1(deltas, plan.rcnn.delta_targets.clone(), plan.rcnn.delta_weights.clone(), beta);
        let losses = Losses {
            rpn_obj: g.value(rpn_obj).item(),
            rpn_reg: g.value(rpn_reg).item(),
            rcnn_cls: g.value(rcnn_cls).item(),
            rcnn_reg: g.value(rcnn_reg).item(),
        };
        let total = g.sum(&[rpn_obj, rpn_reg, rcnn_cls, rcnn_reg]);
        Ok((total, losses, plan))
    }

    /// Inference on one image: proposals, class scores, per-class box
    /// decoding, per-class NMS. Keeps scores >= `score_floor`.
    pub fn detect(&self, pixels: &[f64], height: usize, width: usize, ctx: PeContext, score_floor: f64) -> Result<Vec<PixelDetection>> {
        let mut g = Graph::no_grad();
        let x = g.input(Self::image_tensor(pixels, height, width));
        let feats = self.features(&mut g, x)?;
        let rpn = self.rpn_forward(&mut g, &feats.pyramid);
        let rois: Vec<BoxPx> = proposals(
            &g,
            &rpn,
            &self.cfg,
            width as f64,
            height as f64,
            self.cfg.rpn_pre_nms_topk_test,
            self.cfg.rpn_post_nms_topk_test,
        )
        .into_iter()
        .map(|p| p.0)
        .collect();
        if rois.is_empty() {
            return Ok(Vec::new());
        }
        let (logits, deltas) = self.roi_heads(&mut g, &feats.pyramid, &rois, ctx);
        let probs = softmax_rows(g.value(logits));
        let k = self.cfg.num_classes;
        let dv = g.value(deltas).data();
        let mut out = Vec::new();
        for c in 0..k {
            let mut boxes = Vec::new();
            let mut scores = Vec::new();
            for (i, roi) in rois.iter().enumerate() {
                let p = probs[i * (k + 1) + c + 1];
                if p < score_floor || p <= 0.0 {
                    continue;
                }
                let d = &dv[i * 4 * k + 4 * c..i * 4 * k + 4 * c + 4];
                let b = clip(&decode(roi, d, &self.cfg.rcnn_box_weights), width as f64, height as f64);
                if b[2] - b[0] > 1e-6 && b[3] - b[1] > 1e-6 {
                    boxes.push(b);
                    scores.push(p);
                }
            }
            for i in nms(&boxes, &scores, self.cfg.nms_iou) {
                out.push(PixelDetection { bbox: boxes[i], class: c, score: scores[i] });
            }
        }
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.class.cmp(&b.class)).then(a.bbox[0].total_cmp(&b.bbox[0])));
        out.truncate(self.cfg.detections_per_window);
        Ok(out)
    }
}

pub fn softmax_rows(logits: &Tensor) -> Vec<f64> {
    let (n, k) = logits.dims2();
    let x = logits.data();
    let mut p = vec![0.0; n * k];
    for i in 0..n {
        let row = &x[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for j in 0..k {
            p[i * k + j] = (row[j] - m).exp() / z;
        }
    }
    p
}
