use super::DspConfig;
use crate::audio::Waveform;
use crate::{par, Error, Result};

/// Kernel taps tabulated per unit of the (scaled) argument.
const TABLE_DENSITY: usize = 512;
const ROLLOFF: f64 = 0.95;
const OUT_CHUNK: usize = 1 << 14;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

struct Kernel {
    table: Vec<f64>,
    half_width: f64,
}

impl Kernel {
    /// Kaiser-windowed sinc over `[-half_width, half_width]` zero crossings.
    fn new(half_width: usize, beta: f64) -> Self {
        let n = half_width * TABLE_DENSITY + 2;
        let norm = bessel_i0(beta);
        let table = (0..n)
            .map(|i| {
                let x = i as f64 / TABLE_DENSITY as f64;
                let r = x / half_width as f64;
                if r >= 1.0 {
                    return 0.0;
                }
                let sinc = if x == 0.0 { 1.0 } else { (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x) };
                sinc * bessel_i0(beta * (1.0 - r * r).sqrt()) / norm
            })
            .collect();
        Self {
            table,
            half_width: half_width as f64,
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let p = x.abs() * TABLE_DENSITY as f64;
        let i = p as usize;
        if i + 1 >= self.table.len() {
            return 0.0;
        }
        let frac = p - i as f64;
        self.table[i] * (1.0 - frac) + self.table[i + 1] * frac
    }
}

/// Band-limited resampling to `cfg.sample_rate`. Identity (bitwise) when the
/// rates already agree.
pub fn resample(samples: &[f64], src_rate: f64, cfg: &DspConfig) -> Result<Vec<f64>> {
    if !(src_rate > 0.0) || !src_rate.is_finite() {
        return Err(Error::Config(format!("source sample rate {src_rate} must be positive")));
    }
    let dst = cfg.sample_rate as f64;
    if src_rate == dst {
        return Ok(samples.to_vec());
    }
    let ratio = dst / src_rate;
    let out_len = (samples.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0) * ROLLOFF;
    let kernel = Kernel::new(cfg.resample_half_width, cfg.resample_kaiser_beta);
    let reach = kernel.half_width / cutoff;
    let n_in = samples.len() as isize;
    let mut out = vec![0.0; out_len];
    par::for_each_chunk_mut(&mut out, OUT_CHUNK, |ci, chunk| {
        for (j, o) in chunk.iter_mut().enumerate() {
            let n = ci * OUT_CHUNK + j;
            let t = n as f64 / ratio;
            let k0 = ((t - reach).ceil() as isize).max(0);
            let k1 = ((t + reach).floor() as isize).min(n_in - 1);
            let mut acc = 0.0;
            for k in k0..=k1 {
                acc += samples[k as usize] * kernel.eval((t - k as f64) * cutoff);
            }
            *o = acc * cutoff;
        }
    });
    Ok(out)
}

pub fn resample_waveform(wave: &Waveform, cfg: &DspConfig) -> Result<Waveform> {
    Ok(Waveform::new(
        resample(&wave.samples, wave.sample_rate as f64, cfg)?,
        cfg.sample_rate,
    ))
}
