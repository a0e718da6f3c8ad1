//! Spectrogram front-end: resampling, STFT, frequency crop/resize,
//! amplitude normalization, tiling into fixed-size windows and the exact
//! pixel <-> (seconds, Hz) geometry.

mod export;
mod geometry;
mod resample;
mod stft;
mod window;

pub use export::{load_windows_npz, save_windows_npz, WINDOW_EXPORT_SCHEMA};
pub use geometry::{GeometryMap, PixelBox};
pub use resample::{resample, resample_waveform};
pub use stft::{crop_resize_freq, frame_count, log_normalize, spectrogram, Magnitudes};
pub use window::{
    annotation_to_pixels, padded_frame_count, pixels_to_annotation, tile_starts, tile_windows,
    window_count, window_from_segment, SpectrogramWindow,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `log1p(x / eps)` followed by per-window min-max to [0, 1].
    LogMinMax,
    /// `log1p(x / eps)` only.
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub out_height: usize,
    pub out_width: usize,
    /// Pixels between consecutive window origins when tiling.
    pub window_stride: usize,
    pub log_eps: f64,
    pub normalization: Normalization,
    /// Fraction of an annotation's duration that must fall inside a window
    /// for it to become a target there.
    pub min_visibility: f64,
    /// Resampler kernel half-width in zero crossings of the output band.
    pub resample_half_width: usize,
    pub resample_kaiser_beta: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44100,
            n_fft: 1024,
            hop: 132,
            f_min: 500.0,
            f_max: 13000.0,
            out_height: 375,
            out_width: 1024,
            window_stride: 512,
            log_eps: 1e-2,
            normalization: Normalization::LogMinMax,
            min_visibility: 0.3,
            resample_half_width: 16,
            resample_kaiser_beta: 8.6,
        }
    }
}

impl DspConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 {
            return fail("sample_rate must be positive".into());
        }
        if self.hop == 0 || self.hop >= self.n_fft {
            return fail(format!("hop {} must be in 1..n_fft ({})", self.hop, self.n_fft));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return fail(format!(
                "need 0 <= f_min < f_max <= sample_rate/2, got [{}, {}]",
                self.f_min, self.f_max
            ));
        }
        if self.out_height == 0 || self.out_width == 0 {
            return fail("output dimensions must be positive".into());
        }
        if self.window_stride == 0 || self.window_stride > self.out_width {
            return fail(format!("window_stride must be in 1..={}", self.out_width));
        }
        if !(self.log_eps > 0.0) {
            return fail("log_eps must be positive".into());
        }
        if !(self.min_visibility > 0.0 && self.min_visibility <= 1.0) {
            return fail("min_visibility must be in (0, 1]".into());
        }
        if self.resample_half_width == 0 || !(self.resample_kaiser_beta >= 0.0) {
            return fail("resampler quality parameters out of range".into());
        }
        let g = GeometryMap::new(self);
        if g.raw_bin_hi < g.raw_bin_lo {
            return fail("frequency range selects no FFT bin".into());
        }
        Ok(())
    }

    pub fn geometry(&self) -> GeometryMap {
        GeometryMap::new(self)
    }

    /// Samples spanned by one full window.
    pub fn window_samples(&self) -> usize {
        (self.out_width - 1) * self.hop + self.n_fft
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_rejects_bad_values() {
        DspConfig::default().validate().unwrap();
        let bad = [
            DspConfig { hop: 1024, ..Default::default() },
            DspConfig { f_max: 30000.0, ..Default::default() },
            DspConfig { f_min: 14000.0, ..Default::default() },
            DspConfig { out_height: 0, ..Default::default() },
            DspConfig { window_stride: 2000, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn window_span_matches_frame_arithmetic() {
        let c = DspConfig::default();
        assert_eq!(c.window_samples(), 136060);
        let centers_span = (c.out_width - 1) as f64 * c.hop as f64 / c.sample_rate as f64;
        assert!((centers_span - 3.065).abs() < 5e-3);
    }
}
