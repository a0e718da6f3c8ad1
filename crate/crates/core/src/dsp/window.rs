use serde::{Deserialize, Serialize};

use super::stft::{log_normalize, resize_rows, stft_bins};
use super::{DspConfig, GeometryMap, PixelBox};
use crate::dataset::AnnotationBox;
use crate::par;

/// One fixed-size detector input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramWindow {
    /// Row-major `(out_height, out_width)`, row 0 at the lowest frequency.
    pub pixels: Vec<f64>,
    /// Recording time of the window's first analysed sample.
    pub t0: f64,
    pub geometry: GeometryMap,
    pub source_file: String,
}

impl SpectrogramWindow {
    pub fn height(&self) -> usize {
        self.geometry.out_height
    }

    pub fn width(&self) -> usize {
        self.geometry.out_width
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width() + col]
    }

    /// Recording time span covered by pixel columns `[0, out_width)`.
    pub fn time_extent(&self) -> (f64, f64) {
        let g = &self.geometry;
        (self.t0 + g.px_to_sec(0.0), self.t0 + g.px_to_sec(g.out_width as f64))
    }

    /// Samples analysed by this window, as recording seconds.
    pub fn sample_extent(&self, cfg: &DspConfig) -> (f64, f64) {
        (self.t0, self.t0 + cfg.window_samples() as f64 / cfg.sample_rate as f64)
    }
}

/// Frame count used for tiling: every sample lies inside some frame, the
/// tail being zero-padded to a whole hop. At least one full window.
pub fn padded_frame_count(len: usize, cfg: &DspConfig) -> usize {
    let frames = if len <= cfg.n_fft {
        1
    } else {
        1 + (len - cfg.n_fft).div_ceil(cfg.hop)
    };
    frames.max(cfg.out_width)
}

pub fn window_count(total_frames: usize, cfg: &DspConfig) -> usize {
    if total_frames <= cfg.out_width {
        1
    } else {
        (total_frames - cfg.out_width).div_ceil(cfg.window_stride) + 1
    }
}

/// First frame of each window; the last one is right-aligned.
pub fn tile_starts(total_frames: usize, cfg: &DspConfig) -> Vec<usize> {
    let last = total_frames.saturating_sub(cfg.out_width);
    (0..window_count(total_frames, cfg))
        .map(|k| (k * cfg.window_stride).min(last))
        .collect()
}

fn build_window(samples: &[f64], start_frame: usize, cfg: &DspConfig, source_file: &str) -> SpectrogramWindow {
    let offset = start_frame * cfg.hop;
    let segment = &samples[offset.min(samples.len())..];
    window_from_segment(segment, offset as f64 / cfg.sample_rate as f64, cfg, source_file)
}

/// The window whose first analysed sample is `segment[0]`, located at
/// recording time `t0`. Samples past the end of `segment` read as zero.
pub fn window_from_segment(segment: &[f64], t0: f64, cfg: &DspConfig, source_file: &str) -> SpectrogramWindow {
    let g = GeometryMap::new(cfg);
    let raw = stft_bins(segment, cfg.out_width, g.raw_bin_lo, g.raw_bin_hi, cfg);
    let resized = resize_rows(&raw, cfg.out_height);
    SpectrogramWindow {
        pixels: log_normalize(&resized.data, cfg),
        t0,
        geometry: g,
        source_file: source_file.to_string(),
    }
}

/// Splits a recording already at `cfg.sample_rate` into overlapping
/// windows. Short recordings are zero-padded to one window.
pub fn tile_windows(samples: &[f64], cfg: &DspConfig, source_file: &str) -> Vec<SpectrogramWindow> {
    let total = padded_frame_count(samples.len(), cfg);
    let starts = tile_starts(total, cfg);
    par::map_slice(&starts, |&s| build_window(samples, s, cfg, source_file))
}

/// The window-frame image of `a`, or `None` when less than
/// `min_visibility` of its duration lies inside the window or it misses the
/// frequency band.
pub fn annotation_to_pixels(a: &AnnotationBox, w: &SpectrogramWindow, min_visibility: f64) -> Option<PixelBox> {
    let g = &w.geometry;
    let (ws, we) = w.time_extent();
    let (ts, te) = (a.t_start.max(ws), a.t_end.min(we));
    let span = a.t_end - a.t_start;
    if te <= ts || (te - ts) < min_visibility * span - 1e-12 {
        return None;
    }
    let x0 = g.sec_to_px(ts - w.t0).clamp(0.0, g.out_width as f64);
    let x1 = g.sec_to_px(te - w.t0).clamp(0.0, g.out_width as f64);
    let y0 = g.hz_to_px(a.f_low).clamp(0.0, g.out_height as f64);
    let y1 = g.hz_to_px(a.f_high).clamp(0.0, g.out_height as f64);
    let b = PixelBox { x0, x1, y0, y1, species_id: a.species_id };
    b.is_valid(g).then_some(b)
}

pub fn pixels_to_annotation(b: &PixelBox, w: &SpectrogramWindow) -> AnnotationBox {
    let g = &w.geometry;
    AnnotationBox {
        t_start: w.t0 + g.px_to_sec(b.x0),
        t_end: w.t0 + g.px_to_sec(b.x1),
        f_low: g.px_to_hz(b.y0),
        f_high: g.px_to_hz(b.y1),
        species_id: b.species_id,
        source_file: w.source_file.clone(),
    }
}
