use serde::{Deserialize, Serialize};

use super::DspConfig;

/// Continuous pixel coordinates: column `j` spans `[j, j+1)` and is centered
/// on STFT frame `j` of the window; row `r` spans `[r, r+1)` with row 0 at
/// the lowest retained frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryMap {
    pub seconds_per_px: f64,
    pub hz_per_raw_bin: f64,
    pub raw_bin_lo: usize,
    pub raw_bin_hi: usize,
    pub freq_resample_factor: f64,
    /// Pixel x of time `t0` (the window's first analysed sample).
    pub time_offset_px: f64,
    pub out_height: usize,
    pub out_width: usize,
}

impl GeometryMap {
    pub fn new(cfg: &DspConfig) -> Self {
        let hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
        let lo = (cfg.f_min / hz).ceil() as usize;
        let hi = ((cfg.f_max / hz).floor() as usize).min(cfg.n_fft / 2);
        let n_bins = (hi + 1).saturating_sub(lo).max(1);
        Self {
            seconds_per_px: cfg.hop as f64 / cfg.sample_rate as f64,
            hz_per_raw_bin: hz,
            raw_bin_lo: lo,
            raw_bin_hi: hi,
            freq_resample_factor: cfg.out_height as f64 / n_bins as f64,
            time_offset_px: 0.5 - cfg.n_fft as f64 / (2.0 * cfg.hop as f64),
            out_height: cfg.out_height,
            out_width: cfg.out_width,
        }
    }

    pub fn n_raw_bins(&self) -> usize {
        self.raw_bin_hi + 1 - self.raw_bin_lo
    }

    pub fn hz_to_px(&self, f: f64) -> f64 {
        (f / self.hz_per_raw_bin - self.raw_bin_lo as f64 + 0.5) * self.freq_resample_factor
    }

    pub fn px_to_hz(&self, y: f64) -> f64 {
        (y / self.freq_resample_factor + self.raw_bin_lo as f64 - 0.5) * self.hz_per_raw_bin
    }

    /// `dt` is measured from the window origin.
    pub fn sec_to_px(&self, dt: f64) -> f64 {
        dt / self.seconds_per_px + self.time_offset_px
    }

    pub fn px_to_sec(&self, x: f64) -> f64 {
        (x - self.time_offset_px) * self.seconds_per_px
    }

    /// Frequency band covered by rows `[0, out_height)`.
    pub fn freq_extent(&self) -> (f64, f64) {
        (self.px_to_hz(0.0), self.px_to_hz(self.out_height as f64))
    }
}

/// A box in one window's pixel frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub species_id: usize,
}

impl PixelBox {
    pub fn is_valid(&self, g: &GeometryMap) -> bool {
        0.0 <= self.x0
            && self.x0 < self.x1
            && self.x1 <= g.out_width as f64
            && 0.0 <= self.y0
            && self.y0 < self.y1
            && self.y1 <= g.out_height as f64
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}
