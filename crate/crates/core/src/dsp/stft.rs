use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{DspConfig, GeometryMap, Normalization};
use crate::par;

const FRAME_CHUNK: usize = 64;

/// Row-major (frequency, time) array; row 0 is the lowest frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Magnitudes {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Magnitudes {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn column_argmax(&self, c: usize) -> usize {
        (0..self.rows)
            .max_by(|&a, &b| self.at(a, c).total_cmp(&self.at(b, c)))
            .unwrap_or(0)
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn frame_count(len: usize, cfg: &DspConfig) -> usize {
    1 + len.saturating_sub(cfg.n_fft) / cfg.hop
}

/// STFT magnitudes of rows `bin_lo..=bin_hi` for `frames` frames starting at
/// sample 0. Samples past the end of `samples` read as zero.
pub(crate) fn stft_bins(samples: &[f64], frames: usize, bin_lo: usize, bin_hi: usize, cfg: &DspConfig) -> Magnitudes {
    let n = cfg.n_fft;
    let rows = bin_hi + 1 - bin_lo;
    let window = hann(n);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n);
    // Frame-major scratch output, transposed at the end.
    let mut by_frame = vec![0.0; frames * rows];
    par::for_each_chunk_mut(&mut by_frame, FRAME_CHUNK * rows, |ci, chunk| {
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for (k, out) in chunk.chunks_mut(rows).enumerate() {
            let start = (ci * FRAME_CHUNK + k) * cfg.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                let s = samples.get(start + i).copied().unwrap_or(0.0);
                *b = Complex::new(s * window[i], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (r, o) in out.iter_mut().enumerate() {
                *o = buf[bin_lo + r].norm();
            }
        }
    });
    let mut data = vec![0.0; frames * rows];
    for f in 0..frames {
        for r in 0..rows {
            data[r * frames + f] = by_frame[f * rows + r];
        }
    }
    Magnitudes { rows, cols: frames, data }
}

/// One-sided STFT magnitude, `n_fft/2 + 1` rows by
/// `1 + floor((len - n_fft)/hop)` frames, periodic Hann window. Input
/// shorter than `n_fft` is zero-padded to one frame.
pub fn spectrogram(samples: &[f64], cfg: &DspConfig) -> Magnitudes {
    stft_bins(samples, frame_count(samples.len(), cfg), 0, cfg.n_fft / 2, cfg)
}

/// Linear interpolation of `src` rows onto `out_rows` rows, pixel centers
/// aligned (half-pixel convention), edges clamped.
pub(crate) fn resize_rows(src: &Magnitudes, out_rows: usize) -> Magnitudes {
    let scale = src.rows as f64 / out_rows as f64;
    let cols = src.cols;
    let mut data = vec![0.0; out_rows * cols];
    for r in 0..out_rows {
        let s = ((r as f64 + 0.5) * scale - 0.5).clamp(0.0, (src.rows - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src.rows - 1);
        let w = s - i0 as f64;
        let (a, b) = (&src.data[i0 * cols..(i0 + 1) * cols], &src.data[i1 * cols..(i1 + 1) * cols]);
        for (c, o) in data[r * cols..(r + 1) * cols].iter_mut().enumerate() {
            *o = a[c] * (1.0 - w) + b[c] * w;
        }
    }
    Magnitudes { rows: out_rows, cols, data }
}

/// Keeps raw bins inside `[f_min, f_max]` and resizes them to `out_height`
/// rows. `raw` must hold the full one-sided spectrum.
pub fn crop_resize_freq(raw: &Magnitudes, cfg: &DspConfig) -> Magnitudes {
    let g = GeometryMap::new(cfg);
    assert_eq!(raw.rows, cfg.n_fft / 2 + 1, "expected a full one-sided spectrum");
    let cropped = Magnitudes {
        rows: g.n_raw_bins(),
        cols: raw.cols,
        data: raw.data[g.raw_bin_lo * raw.cols..(g.raw_bin_hi + 1) * raw.cols].to_vec(),
    };
    resize_rows(&cropped, cfg.out_height)
}

/// `log1p(x / eps)`, then per-array min-max to [0, 1] under
/// `Normalization::LogMinMax`. A constant array maps to zeros.
pub fn log_normalize(x: &[f64], cfg: &DspConfig) -> Vec<f64> {
    let mut y: Vec<f64> = x.iter().map(|v| (v.max(0.0) / cfg.log_eps).ln_1p()).collect();
    if cfg.normalization == Normalization::LogMinMax {
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for v in &mut y {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn tone(freq: f64, secs: f64, amp: f64) -> Vec<f64> {
        (0..(secs * 44100.0) as usize)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 44100.0).sin())
            .collect()
    }

    #[test]
    fn frame_count_formula() {
        let c = DspConfig::default();
        assert_eq!(frame_count(136060, &c), 1024);
        assert_eq!(frame_count(136059, &c), 1023);
        assert_eq!(frame_count(10, &c), 1);
        let s = spectrogram(&vec![0.0; 136060], &c);
        assert_eq!((s.rows, s.cols), (513, 1024));
        assert!(s.data.iter().all(|&v| v == 0.0));
        assert_eq!(spectrogram(&[1.0; 100], &c).cols, 1);
    }

    #[test]
    fn five_khz_tone_peaks_at_bin_116() {
        let s = spectrogram(&tone(5000.0, 0.5, 1.0), &DspConfig::default());
        for c in 0..s.cols {
            assert_eq!(s.column_argmax(c), 116);
        }
    }

    #[test]
    fn crop_and_resize_shapes_and_peak() {
        let c = DspConfig::default();
        let g = c.geometry();
        let mut raw = Magnitudes { rows: 513, cols: 3, data: vec![0.0; 513 * 3] };
        for col in 0..3 {
            raw.data[157 * 3 + col] = 1.0;
        }
        let out = crop_resize_freq(&raw, &c);
        assert_eq!((out.rows, out.cols), (375, 3));
        let want = g.hz_to_px(157.0 * g.hz_per_raw_bin);
        let got = out.column_argmax(0) as f64 + 0.5;
        assert!((got - want).abs() <= 1.0, "{got} vs {want}");
        let flat = Magnitudes { rows: 513, cols: 2, data: vec![0.7; 1026] };
        assert!(crop_resize_freq(&flat, &c).data.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn normalization_bounds() {
        let c = DspConfig::default();
        assert!(log_normalize(&[0.0; 16], &c).iter().all(|&v| v == 0.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>() * 10.0).collect();
        let y = log_normalize(&x, &c);
        assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(y.contains(&0.0) && y.contains(&1.0));
    }

    proptest! {
        #[test]
        fn argmax_invariant_to_positive_scaling(x in prop::collection::vec(0.0f64..100.0, 2..50), k in 0.01f64..100.0) {
            let c = DspConfig::default();
            let am = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let y1 = log_normalize(&x, &c);
            let scaled: Vec<f64> = x.iter().map(|v| v * k).collect();
            let y2 = log_normalize(&scaled, &c);
            prop_assert_eq!(x[am(&y1)], x[am(&y2)]);
        }

        #[test]
        fn energy_monotone_in_gain(a in 0.01f64..1.0, b in 1.0f64..4.0) {
            let c = DspConfig::default();
            let x = tone(3000.0, 0.05, a);
            let y: Vec<f64> = x.iter().map(|v| v * b).collect();
            prop_assert!(spectrogram(&y, &c).energy() >= spectrogram(&x, &c).energy());
        }
    }
}
