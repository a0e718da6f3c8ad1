//! RoI positional encoding: absolute frequency position, relative time.
//!
//! Layout of the vector: `[freq center | freq height | time offset | time
//! width]`, each block half of its axis' dims, each block `sin` values then
//! `cos` values.

use super::boxes::BoxPx;
use super::ModelConfig;

/// Appends `dims` values: `sin(p w_k)` for k < dims/2 then `cos(p w_k)`,
/// with `w_k = max_period^(-k / (dims/2))`.
pub fn sinusoid(p: f64, dims: usize, max_period: f64, out: &mut Vec<f64>) {
    let n = dims / 2;
    let freqs: Vec<f64> = (0..n).map(|k| max_period.powf(-(k as f64) / n as f64)).collect();
    out.extend(freqs.iter().map(|w| (p * w).sin()));
    out.extend(freqs.iter().map(|w| (p * w).cos()));
}

/// `roi` in full-window pixels; `window_width` is the window's pixel width.
pub fn positional_encode(roi: &BoxPx, window_width: f64, cfg: &ModelConfig) -> Vec<f64> {
    let mut v = Vec::with_capacity(cfg.pe_dims());
    let (df, dt) = (cfg.pe_freq_dims / 2, cfg.pe_time_dims / 2);
    if df > 0 {
        sinusoid(0.5 * (roi[1] + roi[3]), df, cfg.pe_max_period, &mut v);
        sinusoid(roi[3] - roi[1], df, cfg.pe_max_period, &mut v);
    }
    if dt > 0 {
        sinusoid(0.5 * (roi[0] + roi[2]) - 0.5 * window_width, dt, cfg.pe_max_period, &mut v);
        sinusoid(roi[2] - roi[0], dt, cfg.pe_max_period, &mut v);
    }
    v
}

/// Overwrites the frequency-center block of `pe` with the encoding of row
/// `center_row`; everything else is left untouched.
pub fn replace_freq_center(pe: &mut [f64], center_row: f64, cfg: &ModelConfig) {
    let n = cfg.pe_freq_dims / 2;
    if n == 0 {
        return;
    }
    let mut block = Vec::with_capacity(n);
    sinusoid(center_row, n, cfg.pe_max_period, &mut block);
    pe[..n].copy_from_slice(&block);
}
