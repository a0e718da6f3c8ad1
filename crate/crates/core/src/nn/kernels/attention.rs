//! Multi-head scaled dot-product attention that never materializes the full
//! score matrix.
//!
//! Queries are processed in fixed-size chunks. The forward pass keeps only
//! the output and the per-row log-sum-exp; the backward pass recomputes the
//! chunk's probabilities from them. Key/value gradients are accumulated per
//! fixed group of chunks and summed in group order.

use crate::nn::linalg::{gemm, MatMut, MatRef};
use crate::par;

const QUERY_CHUNK: usize = 128;
const CHUNKS_PER_GROUP: usize = 8;

#[derive(Clone, Copy, Debug)]
pub struct AttnShape {
    pub queries: usize,
    pub keys: usize,
    pub dim: usize,
    pub heads: usize,
}

impl AttnShape {
    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }
}

/// Probabilities `softmax(scale * q_h k_h^T)` for query rows `r0..r1`, head `h`.
/// When `lse` is given the softmax is rebuilt from the stored log-sum-exp;
/// otherwise it is computed and the row log-sum-exps are returned.
fn chunk_probs(
    q: &[f64],
    k: &[f64],
    s: &AttnShape,
    h: usize,
    r0: usize,
    r1: usize,
    lse: Option<&[f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let (d, dh, nk) = (s.dim, s.head_dim(), s.keys);
    let rows = r1 - r0;
    let mut p = vec![0.0; rows * nk];
    gemm(
        s.scale(),
        MatRef::new(&q[r0 * d + h * dh..], rows, dh, d, 1),
        MatRef::new(&k[h * dh..], nk, dh, d, 1).t(),
        0.0,
        MatMut::row_major(&mut p, rows, nk),
    );
    let mut row_lse = Vec::with_capacity(rows);
    for (i, row) in p.chunks_mut(nk).enumerate() {
        let l = match lse {
            Some(stored) => stored[i],
            None => {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
                m + z.ln()
            }
        };
        for v in row.iter_mut() {
            *v = (*v - l).exp();
        }
        row_lse.push(l);
    }
    (p, row_lse)
}

/// Returns the attention output (queries x dim) and the log-sum-exp table
/// (heads x queries).
pub fn forward(q: &[f64], k: &[f64], v: &[f64], s: &AttnShape) -> (Vec<f64>, Vec<f64>) {
    let (d, dh) = (s.dim, s.head_dim());
    let n_chunks = s.queries.div_ceil(QUERY_CHUNK);
    let parts = par::map_range(n_chunks, |ci| {
        let r0 = ci * QUERY_CHUNK;
        let r1 = (r0 + QUERY_CHUNK).min(s.queries);
        let rows = r1 - r0;
        let mut out = vec![0.0; rows * d];
        let mut lse = Vec::with_capacity(s.heads * rows);
        for h in 0..s.heads {
            let (p, l) = chunk_probs(q, k, s, h, r0, r1, None);
            gemm(
                1.0,
                MatRef::row_major(&p, rows, s.keys),
                MatRef::new(&v[h * dh..], s.keys, dh, d, 1),
                0.0,
                MatMut::new(&mut out[h * dh..], rows, dh, d),
            );
            lse.extend(l);
        }
        (out, lse)
    });
    let mut out = Vec::with_capacity(s.queries * d);
    let mut lse = vec![0.0; s.heads * s.queries];
    for (ci, (o, l)) in parts.into_iter().enumerate() {
        let r0 = ci * QUERY_CHUNK;
        let rows = o.len() / d;
        out.extend(o);
        for h in 0..s.heads {
            lse[h * s.queries + r0..h * s.queries + r0 + rows]
                .copy_from_slice(&l[h * rows..(h + 1) * rows]);
        }
    }
    (out, lse)
}

pub struct AttnGrads {
    pub dq: Vec<f64>,
    pub dk: Vec<f64>,
    pub dv: Vec<f64>,
}

pub fn backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    out: &[f64],
    lse: &[f64],
    dout: &[f64],
    s: &AttnShape,
) -> AttnGrads {
    let (d, dh, nk) = (s.dim, s.head_dim(), s.keys);
    let n_chunks = s.queries.div_ceil(QUERY_CHUNK);
    let n_groups = n_chunks.div_ceil(CHUNKS_PER_GROUP);
    let parts = par::map_range(n_groups, |gi| {
        let mut dk = vec![0.0; nk * d];
        let mut dv = vec![0.0; nk * d];
        let mut dq_parts = Vec::new();
        for ci in gi * CHUNKS_PER_GROUP..((gi + 1) * CHUNKS_PER_GROUP).min(n_chunks) {
            let r0 = ci * QUERY_CHUNK;
            let r1 = (r0 + QUERY_CHUNK).min(s.queries);
            let rows = r1 - r0;
            let mut dq = vec![0.0; rows * d];
            for h in 0..s.heads {
                let stored = &lse[h * s.queries + r0..h * s.queries + r1];
                let (p, _) = chunk_probs(q, k, s, h, r0, r1, Some(stored));
                let dout_h = MatRef::new(&dout[r0 * d + h * dh..], rows, dh, d, 1);
                // dV_h += P^T dO_h
                gemm(
                    1.0,
                    MatRef::row_major(&p, rows, nk).t(),
                    dout_h,
                    1.0,
                    MatMut::new(&mut dv[h * dh..], nk, dh, d),
                );
                // dP = dO_h V_h^T
                let mut ds = vec![0.0; rows * nk];
                gemm(
                    1.0,
                    dout_h,
                    MatRef::new(&v[h * dh..], nk, dh, d, 1).t(),
                    0.0,
                    MatMut::row_major(&mut ds, rows, nk),
                );
                for i in 0..rows {
                    let base = (r0 + i) * d + h * dh;
                    let delta: f64 = (0..dh).map(|j| dout[base + j] * out[base + j]).sum();
                    let prow = &p[i * nk..(i + 1) * nk];
                    for (g, &pv) in ds[i * nk..(i + 1) * nk].iter_mut().zip(prow) {
                        *g = pv * (*g - delta);
                    }
                }
                gemm(
                    s.scale(),
                    MatRef::row_major(&ds, rows, nk),
                    MatRef::new(&k[h * dh..], nk, dh, d, 1),
                    0.0,
                    MatMut::new(&mut dq[h * dh..], rows, dh, d),
                );
                gemm(
                    s.scale(),
                    MatRef::row_major(&ds, rows, nk).t(),
                    MatRef::new(&q[r0 * d + h * dh..], rows, dh, d, 1),
                    1.0,
                    MatMut::new(&mut dk[h * dh..], nk, dh, d),
                );
            }
            dq_parts.push(dq);
        }
        (dq_parts, dk, dv)
    });
    let mut dq = Vec::with_capacity(s.queries * d);
    let mut dk = vec![0.0; nk * d];
    let mut dv = vec![0.0; nk * d];
    for (dqs, pk, pv) in parts {
        for part in dqs {
            dq.extend(part);
        }
        dk.iter_mut().zip(&pk).for_each(|(a, b)| *a += b);
        dv.iter_mut().zip(&pv).for_each(|(a, b)| *a += b);
    }
    AttnGrads { dq, dk, dv }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(q: &[f64], k: &[f64], v: &[f64], s: &AttnShape) -> Vec<f64> {
        let (d, dh) = (s.dim, s.head_dim());
        let mut out = vec![0.0; s.queries * d];
        for h in 0..s.heads {
            for i in 0..s.queries {
                let scores: Vec<f64> = (0..s.keys)
                    .map(|j| {
                        (0..dh).map(|c| q[i * d + h * dh + c] * k[j * d + h * dh + c]).sum::<f64>()
                            * s.scale()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|x| (x - m).exp()).sum();
                for j in 0..s.keys {
                    let p = (scores[j] - m).exp() / z;
                    for c in 0..dh {
                        out[i * d + h * dh + c] += p * v[j * d + h * dh + c];
                    }
                }
            }
        }
        out
    }

    fn seq(n: usize, f: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + 1.0) * f).sin()).collect()
    }

    #[test]
    fn chunked_forward_matches_naive_softmax_attention() {
        let s = AttnShape { queries: 300, keys: 7, dim: 6, heads: 2 };
        let (q, k, v) = (seq(300 * 6, 0.37), seq(7 * 6, 0.91), seq(7 * 6, 0.53));
        let (out, _) = forward(&q, &k, &v, &s);
        for (a, b) in out.iter().zip(naive(&q, &k, &v, &s)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let s = AttnShape { queries: 5, keys: 3, dim: 4, heads: 2 };
        let (q, k, v) = (seq(20, 0.37), seq(12, 0.91), seq(12, 0.53));
        let w = seq(20, 1.7);
        let loss = |q: &[f64], k: &[f64], v: &[f64]| -> f64 {
            forward(q, k, v, &s).0.iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (out, lse) = forward(&q, &k, &v, &s);
        let g = backward(&q, &k, &v, &out, &lse, &w, &s);
        let eps = 1e-6;
        for (which, grad) in [(0, &g.dq), (1, &g.dk), (2, &g.dv)] {
            for idx in 0..grad.len() {
                let mut bufs = [q.clone(), k.clone(), v.clone()];
                bufs[which][idx] += eps;
                let up = loss(&bufs[0], &bufs[1], &bufs[2]);
                bufs[which][idx] -= 2.0 * eps;
                let down = loss(&bufs[0], &bufs[1], &bufs[2]);
                let fd = (up - down) / (2.0 * eps);
                assert!((fd - grad[idx]).abs() < 1e-7, "input {which} idx {idx}: {fd} vs {}", grad[idx]);
            }
        }
    }
}
