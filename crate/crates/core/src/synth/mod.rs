//! Synthetic call corpus with exact ground truth, written in the ingest
//! layout, and the end-to-end benchmark built on it.

mod benchmark;

pub use benchmark::{run_benchmark, BenchmarkOutcome, BenchmarkSettings};

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{self, Waveform};
use crate::dataset::{serialize_audacity, AnnotationBox, DatasetManifest, Origin, RecordingMeta, SpeciesVocab, Split};
use crate::{par, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CallKind {
    Tone,
    UpChirp,
    DownChirp,
    /// Sinusoidal frequency modulation around the band centre.
    Trill,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpecies {
    pub latin_name: String,
    /// (f_low, f_high) Hz; every call stays inside it.
    pub band: (f64, f64),
    pub call_kind: CallKind,
    /// Seconds.
    pub duration: (f64, f64),
    /// Peak amplitude range in dBFS.
    pub amplitude_db: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub species: Vec<SynthSpecies>,
    pub files_train: usize,
    pub files_test: usize,
    pub file_duration_s: f64,
    pub calls_per_file: usize,
    /// RMS of the white background, dBFS.
    pub noise_floor_db: f64,
    /// Mean rate of impulsive broadband transients (raindrops), per second.
    pub rain_rate_hz: f64,
    pub rain_amplitude_db: (f64, f64),
    pub sample_rate: u32,
    /// Frequency margin added around the instantaneous-frequency range of
    /// each call, Hz. One STFT bin at the default front-end.
    pub box_margin_hz: f64,
    pub seed: u64,
}

/// Band centres sit on the 64-point probe grid over 500..13000 Hz (indices
/// 8, 18, 28, 38, 48); each band spans +/- 2 grid steps.
const DEFAULT_CENTRES: [f64; 5] = [2087.301587301587, 4071.4285714285716, 6055.555555555556, 8039.682539682539, 10023.809523809523];
const DEFAULT_NAMES: [&str; 5] = ["Synthia alpha", "Synthia beta", "Synthia gamma", "Synthia delta", "Synthia epsilon"];

impl SynthConfig {
    /// Five species in pairwise-disjoint 800 Hz bands. Call shapes repeat
    /// across species so that shape alone never identifies one.
    pub fn default_species() -> Vec<SynthSpecies> {
        let kinds = [CallKind::UpChirp, CallKind::Trill, CallKind::UpChirp, CallKind::Trill, CallKind::UpChirp];
        DEFAULT_CENTRES
            .iter()
            .zip(DEFAULT_NAMES)
            .zip(kinds)
            .map(|((&c, name), kind)| SynthSpecies {
                latin_name: name.into(),
                band: (c - 400.0, c + 400.0),
                call_kind: kind,
                duration: (0.08, 0.3),
                amplitude_db: (-26.0, -12.0),
            })
            .collect()
    }

    /// Overlapping bands: every species shares 2..6 kHz, so frequency
    /// alone does not separate them.
    pub fn hard_mode(seed: u64) -> Self {
        let kinds = [CallKind::Tone, CallKind::UpChirp, CallKind::DownChirp, CallKind::Trill, CallKind::UpChirp];
        let species = DEFAULT_NAMES
            .iter()
            .zip(kinds)
            .enumerate()
            .map(|(i, (name, kind))| SynthSpecies {
                latin_name: (*name).into(),
                band: (2000.0 + 300.0 * i as f64, 4800.0 + 300.0 * i as f64),
                call_kind: kind,
                duration: if i == 4 { (0.3, 0.5) } else { (0.08, 0.25) },
                amplitude_db: (-26.0, -12.0),
            })
            .collect();
        Self { species, seed, ..Self::default() }
    }

    pub fn vocab(&self) -> Result<SpeciesVocab> {
        SpeciesVocab::from_latin_names(&self.species.iter().map(|s| s.latin_name.as_str()).collect::<Vec<_>>())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.species.is_empty() {
            return fail("at least one species is required".into());
        }
        let nyq = self.sample_rate as f64 / 2.0;
        for s in &self.species {
            let (lo, hi) = s.band;
            if !(0.0 < lo && lo < hi && hi < nyq) {
                return fail(format!("{}: band {lo}..{hi} Hz outside (0, {nyq})", s.latin_name));
            }
            let (a, b) = s.duration;
            if !(0.02 < a && a <= b && b < 1.0) {
                return fail(format!("{}: duration range must lie in (0.02, 1.0) s", s.latin_name));
            }
            if s.amplitude_db.0 > s.amplitude_db.1 {
                return fail(format!("{}: empty amplitude range", s.latin_name));
            }
        }
        let slot = self.file_duration_s / self.calls_per_file.max(1) as f64;
        let longest = self.species.iter().map(|s| s.duration.1).fold(0.0, f64::max);
        if self.calls_per_file > 0 && slot < longest + 0.1 {
            return fail(format!("{} calls do not fit in {} s", self.calls_per_file, self.file_duration_s));
        }
        if self.files_train + self.files_test == 0 || !(self.file_duration_s > 0.0) {
            return fail("corpus would be empty".into());
        }
        if !(self.rain_rate_hz >= 0.0) || !(self.box_margin_hz >= 0.0) {
            return fail("rates and margins must be non-negative".into());
        }
        self.vocab()?;
        Ok(())
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            species: Self::default_species(),
            files_train: 48,
            files_test: 12,
            file_duration_s: 20.0,
            calls_per_file: 10,
            noise_floor_db: -50.0,
            rain_rate_hz: 0.5,
            rain_amplitude_db: (-20.0, -6.0),
            sample_rate: 44100,
            box_margin_hz: 44100.0 / 1024.0,
            seed: 7,
        }
    }
}

fn db(v: f64) -> f64 {
    10f64.powf(v / 20.0)
}

/// Instantaneous frequency of a call at fraction `u` of its duration.
fn inst_freq(kind: CallKind, f: (f64, f64), u: f64, t: f64, trill_rate: f64) -> f64 {
    match kind {
        CallKind::Tone => f.0,
        CallKind::UpChirp | CallKind::DownChirp => f.0 + (f.1 - f.0) * u,
        CallKind::Trill => 0.5 * (f.0 + f.1) + 0.5 * (f.1 - f.0) * (2.0 * PI * trill_rate * t).sin(),
    }
}

/// One call: samples starting at `t_start` plus its tight box.
/// Instantaneous frequency stays inside `[f_low + margin, f_high - margin]`.
pub fn synth_call(
    species: &SynthSpecies,
    species_id: usize,
    t_start: f64,
    sample_rate: u32,
    margin_hz: f64,
    amplitude: Option<f64>,
    rng: &mut impl Rng,
) -> (Vec<f64>, AnnotationBox) {
    let sr = sample_rate as f64;
    let n = (rng.gen_range(species.duration.0..=species.duration.1) * sr).round() as usize;
    let amp = amplitude.unwrap_or_else(|| db(rng.gen_range(species.amplitude_db.0..=species.amplitude_db.1)));
    let (lo, hi) = (species.band.0 + margin_hz, species.band.1 - margin_hz);
    let width = hi - lo;
    let (fa, fb, rate) = match species.call_kind {
        CallKind::Tone => {
            let f = rng.gen_range(lo..=hi);
            (f, f, 0.0)
        }
        CallKind::UpChirp | CallKind::DownChirp => {
            let span = rng.gen_range(0.6..=1.0) * width;
            let a = lo + rng.gen_range(0.0..=width - span);
            if species.call_kind == CallKind::UpChirp { (a, a + span, 0.0) } else { (a + span, a, 0.0) }
        }
        CallKind::Trill => {
            let span = rng.gen_range(0.5..=0.9) * width;
            let c = lo + width / 2.0;
            (c - span / 2.0, c + span / 2.0, rng.gen_range(15.0..=35.0))
        }
    };
    let taper = (0.1 * n as f64).max(1.0);
    let mut phase = 0.0f64;
    let mut fmin = f64::INFINITY;
    let mut fmax = f64::NEG_INFINITY;
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let f = inst_freq(species.call_kind, (fa, fb), i as f64 / n.max(2).saturating_sub(1) as f64, t, rate);
            fmin = fmin.min(f);
            fmax = fmax.max(f);
            let env = if (i as f64) < taper {
                0.5 - 0.5 * (PI * i as f64 / taper).cos()
            } else if ((n - 1 - i) as f64) < taper {
                0.5 - 0.5 * (PI * (n - 1 - i) as f64 / taper).cos()
            } else {
                1.0
            };
            let s = amp * env * phase.sin();
            phase = (phase + 2.0 * PI * f / sr) % (2.0 * PI);
            s
        })
        .collect();
    let b = AnnotationBox {
        t_start,
        t_end: t_start + n as f64 / sr,
        f_low: fmin - margin_hz,
        f_high: fmax + margin_hz,
        species_id,
        source_file: String::new(),
    };
    (samples, b)
}

/// One recording of the corpus; a pure function of (cfg, split, index).
pub fn synth_recording(cfg: &SynthConfig, split: Split, index: usize) -> (Vec<f64>, Vec<AnnotationBox>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((split == Split::Test) as u64) << 32 | index as u64);
    let sr = cfg.sample_rate as f64;
    let n = (cfg.file_duration_s * sr).round() as usize;
    let noise = Normal::new(0.0, db(cfg.noise_floor_db)).expect("finite noise level");
    let mut x: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();

    if cfg.rain_rate_hz > 0.0 {
        let gap = Exp::new(cfg.rain_rate_hz).expect("positive rate");
        let mut t = gap.sample(&mut rng);
        while t < cfg.file_duration_s {
            let a = db(rng.gen_range(cfg.rain_amplitude_db.0..=cfg.rain_amplitude_db.1));
            let start = (t * sr) as usize;
            let decay = rng.gen_range(0.0005..0.002) * sr;
            for i in 0..(6.0 * decay) as usize {
                if let Some(v) = x.get_mut(start + i) {
                    *v += a * (-(i as f64) / decay).exp() * rng.gen_range(-1.0..1.0);
                }
            }
            t += gap.sample(&mut rng);
        }
    }

    let mut boxes = Vec::with_capacity(cfg.calls_per_file);
    let slot = cfg.file_duration_s / cfg.calls_per_file.max(1) as f64;
    for k in 0..cfg.calls_per_file {
        let sid = rng.gen_range(0..cfg.species.len());
        let sp = &cfg.species[sid];
        let latest = slot - sp.duration.1 - 0.05;
        let start = ((k as f64 * slot + 0.05 + rng.gen_range(0.0..=latest.max(0.0))) * sr).round() as usize;
        let (call, mut b) = synth_call(sp, sid, start as f64 / sr, cfg.sample_rate, cfg.box_margin_hz, None, &mut rng);
        for (i, v) in call.iter().enumerate() {
            if let Some(s) = x.get_mut(start + i) {
                *s += v;
            }
        }
        b.t_end = b.t_end.min(n as f64 / sr);
        boxes.push(b);
    }
    (x, boxes)
}

fn recording_path(split: Split, index: usize) -> String {
    let dir = if split == Split::Test { "test" } else { "train" };
    format!("{dir}/synth/rec{index:04}.wav")
}

/// The corpus held in memory: manifest plus every waveform.
pub fn synth_corpus_in_memory(cfg: &SynthConfig) -> Result<(DatasetManifest, Vec<Vec<f64>>)> {
    cfg.validate()?;
    // Path order, matching a directory scan of the written corpus.
    let jobs: Vec<(Split, usize)> = (0..cfg.files_test)
        .map(|i| (Split::Test, i))
        .chain((0..cfg.files_train).map(|i| (Split::Train, i)))
        .collect();
    let made = par::map_slice(&jobs, |&(split, i)| synth_recording(cfg, split, i));
    let mut recordings = Vec::new();
    let mut annotations = Vec::new();
    let mut waves = Vec::new();
    for (&(split, i), (wave, boxes)) in jobs.iter().zip(made) {
        let path = recording_path(split, i);
        recordings.push(RecordingMeta {
            path: path.clone(),
            duration: wave.len() as f64 / cfg.sample_rate as f64,
            sample_rate: cfg.sample_rate,
            origin: Origin::Synth,
            split,
        });
        annotations.extend(boxes.into_iter().map(|b| AnnotationBox { source_file: path.clone(), ..b }));
        waves.push(wave);
    }
    let m = DatasetManifest::new(format!("synth-seed{}", cfg.seed), recordings, annotations, cfg.vocab()?)?;
    Ok((m, waves))
}

/// Writes WAV files, Audacity labels, `manifest.json` and `synth.json`
/// under `out`. Refuses a non-empty directory unless `force`.
pub fn write_corpus(cfg: &SynthConfig, out: &Path, force: bool) -> Result<DatasetManifest> {
    let (m, waves) = synth_corpus_in_memory(cfg)?;
    if out.exists() {
        let non_empty = std::fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some();
        if non_empty && !force {
            return Err(Error::Validation(format!("{} is not empty; pass --force to overwrite", out.display())));
        }
        for name in ["train", "test"] {
            let p = out.join(name);
            if p.is_dir() {
                std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    let vocab = &m.vocab;
    let results = par::map_slice(&m.recordings, |r| -> Result<()> {
        let wav = out.join(&r.path);
        let dir = wav.parent().expect("recording paths have a directory");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let idx = m.recordings.iter().position(|x| x.path == r.path).expect("own recording");
        audio::write_wav(&wav, &Waveform::new(waves[idx].clone(), cfg.sample_rate))?;
        let boxes: Vec<AnnotationBox> = m.annotations_for(&r.path).cloned().collect();
        let text = serialize_audacity(&boxes, |id| vocab.code(id));
        let txt = wav.with_extension("txt");
        std::fs::write(&txt, text).map_err(|e| Error::io(&txt, e))
    });
    results.into_iter().collect::<Result<()>>()?;
    m.save(&out.join("manifest.json"))?;
    let cfg_path = out.join("synth.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(m)
}
