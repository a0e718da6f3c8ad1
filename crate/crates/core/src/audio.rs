//! Audio file input/output (WAV via `hound`, FLAC via `claxon`).

use std::path::Path;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Header-level facts about an audio file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AudioInfo {
    pub sample_rate: u32,
    pub channels: u16,
    pub frames: u64,
}

impl AudioInfo {
    pub fn duration(&self) -> f64 {
        self.frames as f64 / self.sample_rate as f64
    }
}

fn is_flac(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("flac"))
}

fn audio_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Audio {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn probe(path: &Path) -> Result<AudioInfo> {
    if is_flac(path) {
        let reader = claxon::FlacReader::open(path).map_err(|e| audio_err(path, e))?;
        let info = reader.streaminfo();
        Ok(AudioInfo {
            sample_rate: info.sample_rate,
            channels: info.channels as u16,
            frames: info.samples.unwrap_or(0),
        })
    } else {
        let reader = hound::WavReader::open(path).map_err(|e| audio_err(path, e))?;
        let spec = reader.spec();
        Ok(AudioInfo {
            sample_rate: spec.sample_rate,
            channels: spec.channels,
            frames: reader.duration() as u64,
        })
    }
}

fn downmix(interleaved: Vec<f64>, channels: usize, path: &Path) -> Vec<f64> {
    if channels <= 1 {
        return interleaved;
    }
    log::warn!("{}: {channels} channels averaged to mono", path.display());
    interleaved
        .chunks(channels)
        .map(|f| f.iter().sum::<f64>() / channels as f64)
        .collect()
}

/// Reads a mono waveform in [-1, 1]. Multichannel input is averaged.
pub fn read(path: &Path) -> Result<Waveform> {
    if is_flac(path) {
        let mut reader = claxon::FlacReader::open(path).map_err(|e| audio_err(path, e))?;
        let info = reader.streaminfo();
        let scale = 1.0 / (1u64 << (info.bits_per_sample - 1)) as f64;
        let samples = reader
            .samples()
            .map(|s| s.map(|v| v as f64 * scale))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| audio_err(path, e))?;
        return Ok(Waveform::new(
            downmix(samples, info.channels as usize, path),
            info.sample_rate,
        ));
    }
    let mut reader = hound::WavReader::open(path).map_err(|e| audio_err(path, e))?;
    let spec = reader.spec();
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(path, e))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| audio_err(path, e))?
        }
    };
    Ok(Waveform::new(
        downmix(samples, spec.channels as usize, path),
        spec.sample_rate,
    ))
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| audio_err(path, e))?;
    for &s in &wave.samples {
        w.write_sample(s as f32).map_err(|e| audio_err(path, e))?;
    }
    w.finalize().map_err(|e| audio_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_wav_round_trip_and_probe() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.0, 0.5, -0.25, 0.125], 44100);
        write_wav(&p, &w).unwrap();
        assert_eq!(read(&p).unwrap(), w);
        let info = probe(&p).unwrap();
        assert_eq!((info.sample_rate, info.channels, info.frames), (44100, 1, 4));
    }

    #[test]
    fn stereo_pcm16_is_averaged_to_mono() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        for s in [16384i16, 0, -16384, -16384] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let r = read(&p).unwrap();
        assert_eq!(r.samples, vec![0.25, -0.5]);
    }

    #[test]
    fn unreadable_file_is_an_io_class_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"not a wav").unwrap();
        assert!(probe(&p).unwrap_err().is_io());
    }
}
