//! Average pooling (ceil mode) and nearest-neighbour upsampling on CHW maps.

pub fn pooled_len(n: usize, k: usize) -> usize {
    n.div_ceil(k)
}

/// Non-overlapping `kh x kw` average pooling; partial windows at the border
/// average over the cells they actually cover.
pub fn avg_pool_forward(x: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<f64> {
    let (oh, ow) = (pooled_len(h, kh), pooled_len(w, kw));
    let mut y = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1) = (oy * kh, ((oy + 1) * kh).min(h));
            for ox in 0..ow {
                let (x0, x1) = (ox * kw, ((ox + 1) * kw).min(w));
                let mut acc = 0.0;
                for iy in y0..y1 {
                    acc += src[iy * w + x0..iy * w + x1].iter().sum::<f64>();
                }
                y[(ch * oh + oy) * ow + ox] = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    y
}

pub fn avg_pool_backward(dy: &[f64], c: usize, h: usize, w: usize, kh: usize, kw: usize) -> Vec<f64> {
    let (oh, ow) = (pooled_len(h, kh), pooled_len(w, kw));
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for iy in 0..h {
            let oy = iy / kh;
            let ny = ((oy + 1) * kh).min(h) - oy * kh;
            for ix in 0..w {
                let ox = ix / kw;
                let nx = ((ox + 1) * kw).min(w) - ox * kw;
                dx[(ch * h + iy) * w + ix] = dy[(ch * oh + oy) * ow + ox] / (ny * nx) as f64;
            }
        }
    }
    dx
}

fn nearest(i: usize, src: usize, dst: usize) -> usize {
    (i * src / dst).min(src - 1)
}

pub fn upsample_forward(x: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut y = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let iy = nearest(oy, h, oh);
            for ox in 0..ow {
                y[(ch * oh + oy) * ow + ox] = x[(ch * h + iy) * w + nearest(ox, w, ow)];
            }
        }
    }
    y
}

pub fn upsample_backward(dy: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            let iy = nearest(oy, h, oh);
            for ox in 0..ow {
                dx[(ch * h + iy) * w + nearest(ox, w, ow)] += dy[(ch * oh + oy) * ow + ox];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_mode_pooling_averages_partial_windows() {
        let x: Vec<f64> = (0..5).map(|v| v as f64).collect(); // 1 x 1 x 5
        let y = avg_pool_forward(&x, 1, 1, 5, 1, 2);
        assert_eq!(y, vec![0.5, 2.5, 4.0]);
    }

    #[test]
    fn upsample_is_exact_doubling_for_even_sizes() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = upsample_forward(&x, 1, 2, 2, 4, 4);
        assert_eq!(&y[..4], &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(&y[8..12], &[3.0, 3.0, 4.0, 4.0]);
        let dx = upsample_backward(&vec![1.0; 16], 1, 2, 2, 4, 4);
        assert_eq!(dx, vec![4.0; 4]);
    }
}
