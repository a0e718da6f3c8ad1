//! Anchor and RoI target assignment with fixed-size random sampling.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::anchors::Anchor;
use super::boxes::{encode, iou, BoxPx};
use super::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub bbox: BoxPx,
    /// Zero-based species index (class `class + 1` in the head).
    pub class: usize,
}

/// Per-level arrays laid out like the RPN outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RpnTargets {
    pub obj_targets: Vec<Vec<f64>>,
    pub obj_weights: Vec<Vec<f64>>,
    pub delta_targets: Vec<Vec<f64>>,
    pub delta_weights: Vec<Vec<f64>>,
    pub positives: usize,
    pub sampled: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RcnnTargets {
    pub rois: Vec<BoxPx>,
    /// 0 is background.
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    /// (R, 4K)
    pub delta_targets: Vec<f64>,
    pub delta_weights: Vec<f64>,
    pub foreground: usize,
}

/// Sampled targets for one training image. Fixing it makes the loss a
/// smooth function of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub rpn: RpnTargets,
    pub rcnn: RcnnTargets,
}

fn pick(rng: &mut impl Rng, mut idx: Vec<usize>, n: usize) -> Vec<usize> {
    if idx.len() <= n {
        return idx;
    }
    let chosen = sample(rng, idx.len(), n).into_vec();
    let mut out: Vec<usize> = chosen.into_iter().map(|i| idx[i]).collect();
    out.sort_unstable();
    idx.clear();
    out
}

/// IoU >= pos_iou or best-for-some-gt -> positive; < neg_iou -> negative;
/// otherwise ignored. Samples `rpn_batch` with at most
/// `rpn_positive_fraction` positives.
pub fn rpn_targets(anchors: &[Vec<Anchor>], gts: &[GtBox], cfg: &ModelConfig, rng: &mut impl Rng) -> RpnTargets {
    let flat: Vec<BoxPx> = anchors.iter().flatten().map(|a| a.as_box()).collect();
    let n = flat.len();
    let mut best_iou = vec![0.0f64; n];
    let mut best_gt = vec![usize::MAX; n];
    let mut gt_best = vec![0.0f64; gts.len()];
    for (i, a) in flat.iter().enumerate() {
        for (j, gt) in gts.iter().enumerate() {
            let v = iou(a, &gt.bbox);
            if v > best_iou[i] {
                best_iou[i] = v;
                best_gt[i] = j;
            }
            gt_best[j] = gt_best[j].max(v);
        }
    }
    // 1 positive, 0 negative, -1 ignored.
    let mut label: Vec<i8> = best_iou
        .iter()
        .map(|&v| if v >= cfg.rpn_pos_iou { 1 } else if v < cfg.rpn_neg_iou { 0 } else { -1 })
        .collect();
    for (j, &gb) in gt_best.iter().enumerate() {
        if gb <= 0.0 {
            continue;
        }
        for (i, a) in flat.iter().enumerate() {
            if iou(a, &gts[j].bbox) == gb {
                label[i] = 1;
                best_gt[i] = j;
            }
        }
    }
    let pos: Vec<usize> = (0..n).filter(|&i| label[i] == 1).collect();
    let neg: Vec<usize> = (0..n).filter(|&i| label[i] == 0).collect();
    let max_pos = (cfg.rpn_batch as f64 * cfg.rpn_positive_fraction) as usize;
    let pos = pick(rng, pos, max_pos);
    let neg = pick(rng, neg, cfg.rpn_batch - pos.len());
    let sampled = (pos.len() + neg.len()).max(1);
    let norm = 1.0 / sampled as f64;

    let mut t = RpnTargets {
        obj_targets: vec![],
        obj_weights: vec![],
        delta_targets: vec![],
        delta_weights: vec![],
        positives: pos.len(),
        sampled: pos.len() + neg.len(),
    };
    let mut offsets = Vec::new();
    let mut off = 0;
    for lvl in anchors {
        offsets.push(off);
        off += lvl.len();
        t.obj_targets.push(vec![0.0; lvl.len()]);
        t.obj_weights.push(vec![0.0; lvl.len()]);
        t.delta_targets.push(vec![0.0; 4 * lvl.len()]);
        t.delta_weights.push(vec![0.0; 4 * lvl.len()]);
    }
    let locate = |i: usize| {
        let l = offsets.iter().rposition(|&o| o <= i).unwrap();
        (l, i - offsets[l])
    };
    for &i in &neg {
        let (l, k) = locate(i);
        t.obj_weights[l][k] = norm;
    }
    for &i in &pos {
        let (l, k) = locate(i);
        t.obj_targets[l][k] = 1.0;
        t.obj_weights[l][k] = norm;
        let hw = anchors[l].len() / cfg.num_anchors_per_position();
        let (a, p) = (k / hw, k % hw);
        let d = encode(&flat[i], &gts[best_gt[i]].bbox, &cfg.rpn_box_weights);
        for j in 0..4 {
            t.delta_targets[l][(4 * a + j) * hw + p] = d[j];
            t.delta_weights[l][(4 * a + j) * hw + p] = norm;
        }
    }
    t
}

/// Ground-truth boxes are appended to the proposals. IoU >= rcnn_fg_iou
/// -> foreground with the gt's class, else background.
pub fn rcnn_targets(proposals: &[BoxPx], gts: &[GtBox], cfg: &ModelConfig, rng: &mut impl Rng) -> RcnnTargets {
    let mut cands: Vec<BoxPx> = proposals.to_vec();
    cands.extend(gts.iter().map(|g| g.bbox));
    let mut best = vec![(0.0, usize::MAX); cands.len()];
    for (i, c) in cands.iter().enumerate() {
        for (j, gt) in gts.iter().enumerate() {
            let v = iou(c, &gt.bbox);
            if v > best[i].0 {
                best[i] = (v, j);
            }
        }
    }
    let fg: Vec<usize> = (0..cands.len()).filter(|&i| best[i].0 >= cfg.rcnn_fg_iou).collect();
    let bg: Vec<usize> = (0..cands.len()).filter(|&i| best[i].0 < cfg.rcnn_fg_iou).collect();
    let max_fg = ((cfg.rcnn_batch as f64 * cfg.rcnn_fg_fraction).round() as usize).max(1);
    let fg = pick(rng, fg, max_fg);
    let bg = pick(rng, bg, cfg.rcnn_batch.saturating_sub(fg.len()));
    let chosen: Vec<usize> = fg.iter().chain(&bg).copied().collect();
    let r = chosen.len();
    let k = cfg.num_classes;
    let norm = 1.0 / r.max(1) as f64;
    let mut t = RcnnTargets {
        rois: chosen.iter().map(|&i| cands[i]).collect(),
        labels: vec![0; r],
        weights: vec![norm; r],
        delta_targets: vec![0.0; r * 4 * k],
        delta_weights: vec![0.0; r * 4 * k],
        foreground: fg.len(),
    };
    for (row, &i) in chosen.iter().enumerate().take(fg.len()) {
        let gt = &gts[best[i].1];
        t.labels[row] = gt.class + 1;
        let d = encode(&cands[i], &gt.bbox, &cfg.rcnn_box_weights);
        for j in 0..4 {
            t.delta_targets[row * 4 * k + 4 * gt.class + j] = d[j];
            t.delta_weights[row * 4 * k + 4 * gt.class + j] = norm;
        }
    }
    t
}
