//! 2-d convolution on a single CHW image via im2col + GEMM.

use crate::nn::linalg::{gemm, MatMut, MatRef};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    let mut cols = vec![0.0; g.patch_len() * plane];
    par::for_each_chunk_mut(&mut cols, plane, |row, out| {
        let c = row / (g.kh * g.kw);
        let ky = (row / g.kw) % g.kh;
        let kx = row % g.kw;
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for oy in 0..ho {
            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
            if iy < 0 || iy >= g.h as isize {
                continue;
            }
            let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
            let dst = &mut out[oy * wo..(oy + 1) * wo];
            for (ox, d) in dst.iter_mut().enumerate() {
                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                if ix >= 0 && ix < g.w as isize {
                    *d = src_row[ix as usize];
                }
            }
        }
    });
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let plane = ho * wo;
    let mut dx = vec![0.0; g.cin * g.h * g.w];
    par::for_each_chunk_mut(&mut dx, g.h * g.w, |c, dst| {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    });
    dx
}

/// `y[cout, ho, wo] = w[cout, cin, kh, kw] * x[cin, h, w] + b`.
pub fn forward(x: &[f64], w: &[f64], b: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let plane = g.out_h() * g.out_w();
    let owned;
    let cols: &[f64] = if g.is_pointwise() {
        x
    } else {
        owned = im2col(x, g);
        &owned
    };
    let mut y = vec![0.0; g.cout * plane];
    if let Some(b) = b {
        for (co, chunk) in y.chunks_mut(plane).enumerate() {
            chunk.fill(b[co]);
        }
    }
    gemm(
        1.0,
        MatRef::row_major(w, g.cout, g.patch_len()),
        MatRef::row_major(cols, g.patch_len(), plane),
        if b.is_some() { 1.0 } else { 0.0 },
        MatMut::row_major(&mut y, g.cout, plane),
    );
    y
}

pub struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn backward(x: &[f64], w: &[f64], dy: &[f64], g: &ConvGeom, need_dx: bool) -> ConvGrads {
    let plane = g.out_h() * g.out_w();
    let owned;
    let cols: &[f64] = if g.is_pointwise() {
        x
    } else {
        owned = im2col(x, g);
        &owned
    };
    let patch = g.patch_len();
    let mut dw = vec![0.0; g.cout * patch];
    gemm(
        1.0,
        MatRef::row_major(dy, g.cout, plane),
        MatRef::row_major(cols, patch, plane).t(),
        0.0,
        MatMut::row_major(&mut dw, g.cout, patch),
    );
    let db = dy.chunks(plane).map(|c| c.iter().sum()).collect();
    let dx = need_dx.then(|| {
        let mut dcols = vec![0.0; patch * plane];
        gemm(
            1.0,
            MatRef::row_major(w, g.cout, patch).t(),
            MatRef::row_major(dy, g.cout, plane),
            0.0,
            MatMut::row_major(&mut dcols, patch, plane),
        );
        if g.is_pointwise() {
            dcols
        } else {
            col2im(&dcols, g)
        }
    });
    ConvGrads { dx, dw, db }
}
