use serde::{Deserialize, Serialize};

use super::boxes::BoxPx;
use super::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Index into `ModelConfig::levels`.
    pub level: usize,
}

impl Anchor {
    pub fn as_box(&self) -> BoxPx {
        [
            self.cx - 0.5 * self.width,
            self.cy - 0.5 * self.height,
            self.cx + 0.5 * self.width,
            self.cy + 0.5 * self.height,
        ]
    }
}

/// Anchors of one level on a `grid_h x grid_w` map, ordered
/// `(ratio, y, x)` to match the channel-major layout of the RPN head
/// outputs. Centers sit at `(i + 0.5) * stride`; ratio `r` is height/width
/// at constant area `scale^2`.
pub fn generate_anchors(cfg: &ModelConfig, level: usize, grid_h: usize, grid_w: usize) -> Vec<Anchor> {
    let stride = cfg.strides()[level] as f64;
    let scale = cfg.anchor_scales[level];
    let mut out = Vec::with_capacity(cfg.anchor_aspect_ratios.len() * grid_h * grid_w);
    for &r in &cfg.anchor_aspect_ratios {
        let w = scale / r.sqrt();
        let h = scale * r.sqrt();
        for y in 0..grid_h {
            for x in 0..grid_w {
                out.push(Anchor {
                    cx: (x as f64 + 0.5) * stride,
                    cy: (y as f64 + 0.5) * stride,
                    width: w,
                    height: h,
                    level,
                });
            }
        }
    }
    out
}
