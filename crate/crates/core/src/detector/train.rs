//! Training loop on random time crops of spectrogram windows.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::targets::GtBox;
use super::{Detector, Losses, ModelConfig, PeContext};
use crate::dataset::{AnnotationBox, DatasetManifest, Split};
use crate::dsp::{annotation_to_pixels, padded_frame_count, tile_starts, window_from_segment, DspConfig};
use crate::nn::optim::{clip_global_norm, AdamW, Schedule};
use crate::nn::{Graph, Tensor};
use crate::{audio, dsp, Error, Result};

struct Recording {
    source: String,
    samples: Vec<f32>,
    /// `species_id` already mapped to the head's zero-based class.
    annotations: Vec<AnnotationBox>,
}

/// Training recordings held in memory as float32 at the DSP rate, plus the
/// window grid drawn from.
pub struct TrainingSet {
    recordings: Vec<Recording>,
    /// (recording, first frame)
    windows: Vec<(usize, usize)>,
    /// Windows without any annotation, used for background mixing.
    background: Vec<(usize, usize)>,
    dsp: DspConfig,
}

impl TrainingSet {
    /// `recordings`: (source id, samples at `dsp.sample_rate`, annotations
    /// with zero-based class ids).
    pub fn from_memory(recordings: Vec<(String, Vec<f64>, Vec<AnnotationBox>)>, dsp: &DspConfig) -> Result<Self> {
        dsp.validate()?;
        if let Some((src, ..)) = recordings.iter().find(|r| r.1.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation(format!("{src}: non-finite audio samples")));
        }
        let recordings: Vec<Recording> = recordings
            .into_iter()
            .map(|(source, s, annotations)| Recording {
                source,
                samples: s.into_iter().map(|v| v as f32).collect(),
                annotations,
            })
            .collect();
        let mut windows = Vec::new();
        let mut background = Vec::new();
        let span = dsp.window_samples() as f64 / dsp.sample_rate as f64;
        for (r, rec) in recordings.iter().enumerate() {
            for s in tile_starts(padded_frame_count(rec.samples.len(), dsp), dsp) {
                windows.push((r, s));
                let t0 = (s * dsp.hop) as f64 / dsp.sample_rate as f64;
                if !rec.annotations.iter().any(|a| a.t_end > t0 && a.t_start < t0 + span) {
                    background.push((r, s));
                }
            }
        }
        if windows.is_empty() {
            return Err(Error::Validation("training set has no recordings".into()));
        }
        Ok(Self { recordings, windows, background, dsp: dsp.clone() })
    }

    /// TRAIN-split recordings of `manifest` under `root`; `class_of` maps a
    /// species id to a head class, `None` drops the annotation.
    pub fn from_manifest(manifest: &DatasetManifest, root: &Path, dsp: &DspConfig, class_of: impl Fn(usize) -> Option<usize> + Sync) -> Result<Self> {
        let train = manifest.split(Split::Train);
        if train.recordings.is_empty() {
            return Err(Error::Validation("manifest has no TRAIN recordings".into()));
        }
        let loaded: Vec<Result<(String, Vec<f64>, Vec<AnnotationBox>)>> = crate::par::map_slice(&train.recordings, |r| {
            let wave = audio::read(&root.join(&r.path))?;
            let wave = dsp::resample_waveform(&wave, dsp)?;
            let anns = train
                .annotations_for(&r.path)
                .filter_map(|a| class_of(a.species_id).map(|c| AnnotationBox { species_id: c, ..a.clone() }))
                .collect();
            Ok((r.path.clone(), wave.samples, anns))
        });
        Self::from_memory(loaded.into_iter().collect::<Result<_>>()?, dsp)
    }

    pub fn window_count(&self) -> usize {
        self.windows.len()
    }

    pub fn annotation_count(&self) -> usize {
        self.recordings.iter().map(|r| r.annotations.len()).sum()
    }

    fn segment(&self, (r, start): (usize, usize)) -> Vec<f64> {
        let rec = &self.recordings[r].samples;
        let a = (start * self.dsp.hop).min(rec.len());
        let b = (a + self.dsp.window_samples()).min(rec.len());
        let mut seg: Vec<f64> = rec[a..b].iter().map(|&v| v as f64).collect();
        seg.resize(self.dsp.window_samples(), 0.0);
        seg
    }
}

/// One training-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub losses: Losses,
    pub total: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub wall_time: f64,
    pub source_file: String,
    pub t0: f64,
    pub crop_x0: usize,
}

/// A sampled, augmented training crop.
pub struct TrainSample {
    pub image: Tensor,
    pub gts: Vec<GtBox>,
    pub ctx: PeContext,
    pub source_file: String,
    pub t0: f64,
    pub crop_x0: usize,
}

pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}

/// Draws the crop for `step`; a pure function of (seed, step).
pub fn sample_crop(set: &TrainingSet, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> TrainSample {
    let dsp = &set.dsp;
    let t = &cfg.train;
    let win = set.windows[rng.gen_range(0..set.windows.len())];
    let rec = &set.recordings[win.0];
    let mut seg = set.segment(win);
    let gain = 10f64.powf(rng.gen_range(-1.0..=1.0) * t.gain_jitter_db / 20.0);
    seg.iter_mut().for_each(|v| *v *= gain);
    let mix: f64 = rng.gen();
    if mix < t.noise_mix_prob && !set.background.is_empty() {
        let bg = set.background[rng.gen_range(0..set.background.len())];
        let k = rng.gen::<f64>() * t.noise_mix_gain;
        for (v, b) in seg.iter_mut().zip(set.segment(bg)) {
            *v += k * b;
        }
    }
    let t0 = (win.1 * dsp.hop) as f64 / dsp.sample_rate as f64;
    let window = window_from_segment(&seg, t0, dsp, &rec.source);
    let boxes: Vec<_> = rec
        .annotations
        .iter()
        .filter_map(|a| annotation_to_pixels(a, &window, dsp.min_visibility))
        .collect();

    let (h, w) = (dsp.out_height, dsp.out_width);
    let cw = t.crop_width.min(w);
    let max_x0 = w - cw;
    let on_call: f64 = rng.gen();
    let x0 = if !boxes.is_empty() && on_call < t.crop_on_call_prob {
        let b = &boxes[rng.gen_range(0..boxes.len())];
        let cx = 0.5 * (b.x0 + b.x1);
        let lo = (cx - cw as f64 * 0.9).max(0.0);
        let hi = (cx - cw as f64 * 0.1).max(lo);
        (rng.gen_range(lo..=hi).round() as usize).min(max_x0)
    } else {
        rng.gen_range(0..=max_x0)
    };
    let mut pix = Vec::with_capacity(h * cw);
    for r in 0..h {
        pix.extend_from_slice(&window.pixels[r * w + x0..r * w + x0 + cw]);
    }
    let (xa, xb) = (x0 as f64, (x0 + cw) as f64);
    let gts = boxes
        .iter()
        .filter_map(|b| {
            let (l, r) = (b.x0.max(xa), b.x1.min(xb));
            (r > l && (r - l) >= dsp.min_visibility * (b.x1 - b.x0)).then(|| GtBox { bbox: [l - xa, b.y0, r - xa, b.y1], class: b.species_id })
        })
        .collect();
    TrainSample {
        image: Tensor::new(vec![1, h, cw], pix),
        gts,
        ctx: PeContext { x_offset: xa, window_width: w as f64 },
        source_file: rec.source.clone(),
        t0,
        crop_x0: x0,
    }
}

/// Owns the model and optimizer state between steps.
pub struct Trainer<'a> {
    pub detector: Detector,
    pub optimizer: AdamW,
    /// Steps completed.
    pub step: usize,
    set: &'a TrainingSet,
    schedule: Schedule,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: ModelConfig, set: &'a TrainingSet) -> Result<Self> {
        let detector = Detector::new(cfg)?;
        let t = &detector.cfg.train;
        let optimizer = AdamW::new(&detector.params, t.beta1, t.beta2, t.weight_decay);
        Ok(Self::assemble(detector, optimizer, 0, set))
    }

    pub fn resume(detector: Detector, optimizer: AdamW, step: usize, set: &'a TrainingSet) -> Self {
        Self::assemble(detector, optimizer, step, set)
    }

    fn assemble(detector: Detector, optimizer: AdamW, step: usize, set: &'a TrainingSet) -> Self {
        let t = &detector.cfg.train;
        let schedule = Schedule {
            base_lr: t.base_lr,
            warmup_steps: t.warmup_steps,
            milestones: t.milestones.clone(),
            decay_factor: t.decay_factor,
        };
        Self { detector, optimizer, step, set, schedule, started: Instant::now() }
    }

    pub fn finished(&self) -> bool {
        self.step >= self.detector.cfg.train.steps
    }

    /// One optimizer step. A non-finite loss aborts with the offending
    /// crop's identity.
    pub fn step(&mut self) -> Result<StepRecord> {
        let cfg = &self.detector.cfg;
        let mut rng = step_rng(cfg.seed, self.step);
        let sample = sample_crop(self.set, cfg, &mut rng);
        let mut g = Graph::new();
        let (total, losses, _) = self.detector.loss(&mut g, &sample.image, &sample.gts, sample.ctx, None, &mut rng)?;
        if !losses.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                message: format!(
                    "non-finite loss {losses:?} on {} window t0={:.3}s crop x0={}",
                    sample.source_file, sample.t0, sample.crop_x0
                ),
            });
        }
        let mut grads = g.backward(total, self.detector.params.len());
        drop(g);
        let grad_norm = clip_global_norm(&mut grads, cfg.train.grad_clip);
        if !grad_norm.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                message: format!("non-finite gradient on {} window t0={:.3}s", sample.source_file, sample.t0),
            });
        }
        let lr = self.schedule.lr_at(self.step);
        self.optimizer.update(&mut self.detector.params, &grads, lr);
        let rec = StepRecord {
            step: self.step,
            losses,
            total: losses.total(),
            lr,
            grad_norm,
            wall_time: self.started.elapsed().as_secs_f64(),
            source_file: sample.source_file,
            t0: sample.t0,
            crop_x0: sample.crop_x0,
        };
        self.step += 1;
        Ok(rec)
    }
}

pub struct TrainOutcome {
    pub detector: Detector,
    pub optimizer: AdamW,
    pub log: Vec<StepRecord>,
}

/// Trains to `cfg.train.steps`, calling `on_step` after each step (for
/// logging and checkpointing).
pub fn train(cfg: ModelConfig, set: &TrainingSet, mut on_step: impl FnMut(&StepRecord, &Trainer) -> Result<()>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg, set)?;
    let mut log = Vec::new();
    while !trainer.finished() {
        let rec = trainer.step()?;
        on_step(&rec, &trainer)?;
        log.push(rec);
    }
    Ok(TrainOutcome { detector: trainer.detector, optimizer: trainer.optimizer, log })
}
