use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Width in pixels of the random time crop each step trains on.
    pub crop_width: usize,
    /// Probability that a crop is centered on an annotated call.
    pub crop_on_call_prob: f64,
    /// Uniform gain jitter, +/- dB, applied to the waveform.
    pub gain_jitter_db: f64,
    /// Probability of adding a call-free background segment.
    pub noise_mix_prob: f64,
    pub noise_mix_gain: f64,
    pub log_every: usize,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20000,
            base_lr: 1e-3,
            warmup_steps: 200,
            milestones: vec![14000, 18000],
            decay_factor: 0.1,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            grad_clip: 10.0,
            crop_width: 512,
            crop_on_call_prob: 0.7,
            gain_jitter_db: 6.0,
            noise_mix_prob: 0.3,
            noise_mix_gain: 0.5,
            log_every: 1,
            checkpoint_every: 0,
        }
    }
}

/// Architecture and training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone_name: String,
    pub fpn_channels: usize,
    /// Pyramid levels; level `l` has stride `2^(l-1)`, so `[2, 3, 4, 5, 6]`
    /// is P2..P6 at strides 2..32.
    pub levels: Vec<usize>,
    pub use_attention: bool,
    pub attn_heads: usize,
    /// Keys and values are average-pooled to at most this many positions
    /// per side before attention.
    pub attn_max_kv_side: usize,
    /// One anchor scale (px) per level.
    pub anchor_scales: Vec<f64>,
    /// Height / width.
    pub anchor_aspect_ratios: Vec<f64>,
    pub rpn_batch: usize,
    pub rpn_positive_fraction: f64,
    pub rpn_pos_iou: f64,
    pub rpn_neg_iou: f64,
    pub rpn_nms_iou: f64,
    pub rpn_pre_nms_topk_train: usize,
    pub rpn_post_nms_topk_train: usize,
    pub rpn_pre_nms_topk_test: usize,
    pub rpn_post_nms_topk_test: usize,
    pub rcnn_batch: usize,
    pub rcnn_fg_fraction: f64,
    pub rcnn_fg_iou: f64,
    pub rcnn_hidden: usize,
    /// (height, width) of the pooled RoI grid.
    pub roi_size: (usize, usize),
    pub roi_sampling: usize,
    pub roi_canonical_level: usize,
    pub roi_canonical_size: f64,
    pub pe_freq_dims: usize,
    pub pe_time_dims: usize,
    pub pe_max_period: f64,
    pub rpn_box_weights: [f64; 4],
    pub rcnn_box_weights: [f64; 4],
    pub smooth_l1_beta: f64,
    pub num_classes: usize,
    /// Per-class NMS threshold on final detections.
    pub nms_iou: f64,
    pub score_threshold: f64,
    pub detections_per_window: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl ModelConfig {
    /// Full-scale configuration: large backbone, P2..P6, 256 FPN channels.
    pub fn full(num_classes: usize) -> Self {
        Self {
            backbone_name: "base".into(),
            fpn_channels: 256,
            levels: vec![2, 3, 4, 5, 6],
            use_attention: true,
            attn_heads: 4,
            attn_max_kv_side: 64,
            anchor_scales: vec![16.0, 32.0, 64.0, 128.0, 256.0],
            anchor_aspect_ratios: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            rpn_batch: 512,
            rpn_positive_fraction: 0.5,
            rpn_pos_iou: 0.7,
            rpn_neg_iou: 0.3,
            rpn_nms_iou: 0.7,
            rpn_pre_nms_topk_train: 2000,
            rpn_post_nms_topk_train: 1000,
            rpn_pre_nms_topk_test: 1000,
            rpn_post_nms_topk_test: 500,
            rcnn_batch: 1024,
            rcnn_fg_fraction: 0.25,
            rcnn_fg_iou: 0.5,
            rcnn_hidden: 1024,
            roi_size: (7, 7),
            roi_sampling: 2,
            roi_canonical_level: 4,
            roi_canonical_size: 224.0,
            pe_freq_dims: 32,
            pe_time_dims: 32,
            pe_max_period: 1000.0,
            rpn_box_weights: [1.0, 1.0, 1.0, 1.0],
            rcnn_box_weights: [10.0, 10.0, 5.0, 5.0],
            smooth_l1_beta: 1.0 / 9.0,
            num_classes,
            nms_iou: 0.5,
            score_threshold: 0.5,
            detections_per_window: 100,
            seed: 0,
            train: TrainConfig::default(),
        }
    }

    /// CPU-trainable reference configuration used by the synthetic
    /// benchmark.
    pub fn small(num_classes: usize) -> Self {
        Self {
            backbone_name: "tiny".into(),
            fpn_channels: 24,
            attn_heads: 4,
            attn_max_kv_side: 8,
            rpn_batch: 256,
            rpn_pre_nms_topk_train: 600,
            rpn_post_nms_topk_train: 300,
            rpn_pre_nms_topk_test: 600,
            rpn_post_nms_topk_test: 200,
            rcnn_batch: 128,
            rcnn_hidden: 128,
            roi_size: (5, 5),
            pe_freq_dims: 16,
            pe_time_dims: 8,
            train: TrainConfig {
                steps: 1500,
                base_lr: 2e-3,
                warmup_steps: 50,
                milestones: vec![1100, 1400],
                crop_width: 256,
                ..TrainConfig::default()
            },
            ..Self::full(num_classes)
        }
    }

    /// Two-level, 8-channel configuration for gradient checks.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            backbone_name: "toy".into(),
            fpn_channels: 8,
            levels: vec![2, 3],
            attn_heads: 2,
            attn_max_kv_side: 4,
            anchor_scales: vec![4.0, 8.0],
            anchor_aspect_ratios: vec![0.5, 1.0, 2.0],
            rpn_batch: 16,
            rpn_pre_nms_topk_train: 40,
            rpn_post_nms_topk_train: 12,
            rpn_pre_nms_topk_test: 40,
            rpn_post_nms_topk_test: 12,
            rcnn_batch: 8,
            rcnn_hidden: 12,
            roi_size: (2, 2),
            roi_canonical_level: 2,
            roi_canonical_size: 8.0,
            pe_freq_dims: 4,
            pe_time_dims: 4,
            train: TrainConfig {
                steps: 10,
                warmup_steps: 0,
                milestones: vec![],
                crop_width: 32,
                ..TrainConfig::default()
            },
            ..Self::full(num_classes)
        }
    }

    pub fn strides(&self) -> Vec<usize> {
        self.levels.iter().map(|&l| 1usize << (l - 1)).collect()
    }

    pub fn num_anchors_per_position(&self) -> usize {
        self.anchor_aspect_ratios.len()
    }

    pub fn pe_dims(&self) -> usize {
        self.pe_freq_dims + self.pe_time_dims
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        super::backbone::BackboneSpec::lookup(&self.backbone_name)?;
        if self.levels.is_empty() || self.levels[0] != 2 || self.levels.windows(2).any(|w| w[1] != w[0] + 1) {
            return fail(format!("levels must be consecutive from 2 (strides 2, 4, ...), got {:?}", self.levels));
        }
        if *self.levels.last().unwrap() > 6 {
            return fail("levels beyond P6 are not supported".into());
        }
        if self.anchor_scales.len() != self.levels.len() {
            return fail(format!(
                "{} anchor scales for {} levels",
                self.anchor_scales.len(),
                self.levels.len()
            ));
        }
        if self.anchor_scales.iter().chain(&self.anchor_aspect_ratios).any(|v| !(*v > 0.0)) || self.anchor_aspect_ratios.is_empty() {
            return fail("anchor scales and ratios must be positive and non-empty".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes must be at least 1".into());
        }
        if self.fpn_channels == 0 || self.rcnn_hidden == 0 || self.roi_size.0 == 0 || self.roi_size.1 == 0 {
            return fail("channel and pooling sizes must be positive".into());
        }
        let unit = [
            ("rpn_positive_fraction", self.rpn_positive_fraction),
            ("rpn_pos_iou", self.rpn_pos_iou),
            ("rpn_neg_iou", self.rpn_neg_iou),
            ("rpn_nms_iou", self.rpn_nms_iou),
            ("rcnn_fg_fraction", self.rcnn_fg_fraction),
            ("rcnn_fg_iou", self.rcnn_fg_iou),
            ("nms_iou", self.nms_iou),
            ("score_threshold", self.score_threshold),
        ];
        for (name, v) in unit {
            if !(v > 0.0 && v < 1.0) {
                return fail(format!("{name} = {v} must lie in (0, 1)"));
            }
        }
        if self.rpn_neg_iou > self.rpn_pos_iou {
            return fail("rpn_neg_iou above rpn_pos_iou".into());
        }
        if self.pe_freq_dims % 4 != 0 || self.pe_time_dims % 4 != 0 {
            return fail("pe dims must be multiples of 4".into());
        }
        if !(self.pe_max_period > 1.0) {
            return fail("pe_max_period must exceed 1".into());
        }
        if self.attn_heads == 0 || self.attn_max_kv_side == 0 {
            return fail("attention heads and kv side must be positive".into());
        }
        if self.rpn_batch == 0 || self.rcnn_batch == 0 {
            return fail("sampling batch sizes must be positive".into());
        }
        let t = &self.train;
        if t.crop_width == 0 || !(t.base_lr > 0.0) || !(0.0..=1.0).contains(&t.crop_on_call_prob) || !(0.0..=1.0).contains(&t.noise_mix_prob) {
            return fail("invalid training settings".into());
        }
        Ok(())
    }
}
