//! RoIAlign: bilinear sampling of a fixed grid inside each region.
//!
//! Boxes are given in input-image pixels and mapped to the feature map with
//! `scale` (1 / stride) using the half-pixel ("aligned") convention.

use crate::par;

#[derive(Clone, Copy, Debug)]
pub struct RoiAlignSpec {
    pub out_h: usize,
    pub out_w: usize,
    pub sampling: usize,
}

/// One bilinear tap: flat index into a feature plane and its weight.
type Tap = (usize, f64);

/// Per-bin taps for one RoI, already divided by the number of samples.
fn roi_taps(bbox: [f64; 4], scale: f64, h: usize, w: usize, spec: &RoiAlignSpec) -> Vec<Vec<Tap>> {
    let x0 = bbox[0] * scale - 0.5;
    let y0 = bbox[1] * scale - 0.5;
    let x1 = bbox[2] * scale - 0.5;
    let y1 = bbox[3] * scale - 0.5;
    let bin_w = (x1 - x0) / spec.out_w as f64;
    let bin_h = (y1 - y0) / spec.out_h as f64;
    let n = spec.sampling.max(1);
    let norm = 1.0 / (n * n) as f64;
    let mut bins = Vec::with_capacity(spec.out_h * spec.out_w);
    for by in 0..spec.out_h {
        for bx in 0..spec.out_w {
            let mut taps = Vec::with_capacity(4 * n * n);
            for sy in 0..n {
                let y = y0 + by as f64 * bin_h + (sy as f64 + 0.5) * bin_h / n as f64;
                for sx in 0..n {
                    let x = x0 + bx as f64 * bin_w + (sx as f64 + 0.5) * bin_w / n as f64;
                    bilinear_taps(y, x, h, w, norm, &mut taps);
                }
            }
            bins.push(taps);
        }
    }
    bins
}

fn bilinear_taps(y: f64, x: f64, h: usize, w: usize, weight: f64, taps: &mut Vec<Tap>) {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return;
    }
    let y = y.max(0.0);
    let x = x.max(0.0);
    let (mut yl, mut xl) = (y.floor() as usize, x.floor() as usize);
    let (yh, xh);
    let (mut yy, mut xx) = (y, x);
    if yl >= h - 1 {
        yl = h - 1;
        yh = h - 1;
        yy = yl as f64;
    } else {
        yh = yl + 1;
    }
    if xl >= w - 1 {
        xl = w - 1;
        xh = w - 1;
        xx = xl as f64;
    } else {
        xh = xl + 1;
    }
    let ly = yy - yl as f64;
    let lx = xx - xl as f64;
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    taps.push((yl * w + xl, weight * hy * hx));
    taps.push((yl * w + xh, weight * hy * lx));
    taps.push((yh * w + xl, weight * ly * hx));
    taps.push((yh * w + xh, weight * ly * lx));
}

/// Pools `boxes` from a (c, h, w) map into (rois, c, out_h, out_w).
pub fn forward(
    feat: &[f64],
    (c, h, w): (usize, usize, usize),
    scale: f64,
    boxes: &[[f64; 4]],
    spec: &RoiAlignSpec,
) -> Vec<f64> {
    let bins = spec.out_h * spec.out_w;
    let per_roi = par::map_slice(boxes, |b| {
        let taps = roi_taps(*b, scale, h, w, spec);
        let mut out = vec![0.0; c * bins];
        for ch in 0..c {
            let plane = &feat[ch * h * w..(ch + 1) * h * w];
            for (bi, bin) in taps.iter().enumerate() {
                out[ch * bins + bi] = bin.iter().map(|&(i, wt)| plane[i] * wt).sum();
            }
        }
        out
    });
    per_roi.concat()
}

/// Accumulates the gradient of the pooled output back onto the feature map.
pub fn backward(
    dout: &[f64],
    (c, h, w): (usize, usize, usize),
    scale: f64,
    boxes: &[[f64; 4]],
    spec: &RoiAlignSpec,
) -> Vec<f64> {
    let bins = spec.out_h * spec.out_w;
    let taps: Vec<_> = boxes.iter().map(|b| roi_taps(*b, scale, h, w, spec)).collect();
    let mut dfeat = vec![0.0; c * h * w];
    par::for_each_chunk_mut(&mut dfeat, h * w, |ch, plane| {
        for (r, roi) in taps.iter().enumerate() {
            let g = &dout[(r * c + ch) * bins..(r * c + ch + 1) * bins];
            for (bin, &gv) in roi.iter().zip(g) {
                for &(i, wt) in bin {
                    plane[i] += gv * wt;
                }
            }
        }
    });
    dfeat
}
