//! Axis-aligned boxes `[x0, y0, x1, y1]` in pixels.

pub type BoxPx = [f64; 4];

/// Largest log-scale step accepted when decoding, as in the common
/// Faster R-CNN implementations.
const MAX_LOG_SCALE: f64 = 4.135166556742356; // ln(1000 / 16)

pub fn area(b: &BoxPx) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

/// Zero for degenerate boxes.
pub fn iou(a: &BoxPx, b: &BoxPx) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if inter <= 0.0 || union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn center_size(b: &BoxPx) -> (f64, f64, f64, f64) {
    let w = b[2] - b[0];
    let h = b[3] - b[1];
    (b[0] + 0.5 * w, b[1] + 0.5 * h, w, h)
}

/// Regression target `(dx, dy, dw, dh)` taking `reference` to `target`.
pub fn encode(reference: &BoxPx, target: &BoxPx, weights: &[f64; 4]) -> [f64; 4] {
    let (ax, ay, aw, ah) = center_size(reference);
    let (gx, gy, gw, gh) = center_size(target);
    [
        weights[0] * (gx - ax) / aw,
        weights[1] * (gy - ay) / ah,
        weights[2] * (gw / aw).ln(),
        weights[3] * (gh / ah).ln(),
    ]
}

pub fn decode(reference: &BoxPx, deltas: &[f64], weights: &[f64; 4]) -> BoxPx {
    let (ax, ay, aw, ah) = center_size(reference);
    let dx = deltas[0] / weights[0];
    let dy = deltas[1] / weights[1];
    let dw = (deltas[2] / weights[2]).min(MAX_LOG_SCALE);
    let dh = (deltas[3] / weights[3]).min(MAX_LOG_SCALE);
    let cx = ax + dx * aw;
    let cy = ay + dy * ah;
    let w = aw * dw.exp();
    let h = ah * dh.exp();
    [cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h]
}

pub fn clip(b: &BoxPx, width: f64, height: f64) -> BoxPx {
    [
        b[0].clamp(0.0, width),
        b[1].clamp(0.0, height),
        b[2].clamp(0.0, width),
        b[3].clamp(0.0, height),
    ]
}

/// Order by descending score, ties by ascending index.
pub fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy class-agnostic suppression. Returns kept indices by descending
/// score.
pub fn nms(boxes: &[BoxPx], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for i in rank_desc(scores) {
        if keep.iter().all(|&k| iou(&boxes[k], &boxes[i]) <= iou_threshold) {
            keep.push(i);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&[0.0, 0.0, 2.0, 2.0], &[0.0, 0.0, 2.0, 2.0]), 1.0);
        assert_eq!(iou(&[0.0, 0.0, 1.0, 1.0], &[2.0, 2.0, 3.0, 3.0]), 0.0);
        assert!((iou(&[0.0, 0.0, 2.0, 2.0], &[1.0, 1.0, 3.0, 3.0]) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&[0.0, 0.0, 0.0, 2.0], &[0.0, 0.0, 0.0, 2.0]), 0.0);
    }

    #[test]
    fn zero_deltas_decode_to_reference() {
        let a = [3.0, 4.0, 19.0, 12.0];
        let d = decode(&a, &[0.0; 4], &[10.0, 10.0, 5.0, 5.0]);
        for (x, y) in a.iter().zip(d) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_to_bounds() {
        assert_eq!(clip(&[-5.0, 2.0, 40.0, 70.0], 32.0, 64.0), [0.0, 2.0, 32.0, 64.0]);
    }

    proptest! {
        #[test]
        fn encode_decode_inverse(ax in 0.0f64..100.0, ay in 0.0f64..100.0, aw in 1.0f64..50.0, ah in 1.0f64..50.0,
                                 gx in 0.0f64..100.0, gy in 0.0f64..100.0, gw in 1.0f64..50.0, gh in 1.0f64..50.0) {
            let a = [ax, ay, ax + aw, ay + ah];
            let g = [gx, gy, gx + gw, gy + gh];
            let w = [10.0, 10.0, 5.0, 5.0];
            let back = decode(&a, &encode(&a, &g, &w), &w);
            for (x, y) in g.iter().zip(back) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn iou_symmetric_and_bounded(a in prop::array::uniform4(0.0f64..10.0), b in prop::array::uniform4(0.0f64..10.0)) {
            let a = [a[0].min(a[2]), a[1].min(a[3]), a[0].max(a[2]), a[1].max(a[3])];
            let b = [b[0].min(b[2]), b[1].min(b[3]), b[0].max(b[2]), b[1].max(b[3])];
            let v = iou(&a, &b);
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
