use std::path::PathBuf;

use crate::dataset::{SpeciesScope, Split};
use crate::detector::{train, Checkpoint, Detector, ModelConfig, StepRecord, TrainingSet};
use crate::dsp::{self, DspConfig};
use crate::eval::{eval_detection, eval_multilabel, multilabel_predictions, multilabel_truth, EvalReport};
use crate::inference::{Detection, InferenceConfig, Inferencer};
use crate::probe::{aggregate_probe, ProbeReport, DEFAULT_GRID_POINTS};
use crate::{Error, Result};

use super::{synth_corpus_in_memory, SynthConfig};

#[derive(Clone, Debug)]
pub struct BenchmarkSettings {
    pub dsp: DspConfig,
    pub inference: InferenceConfig,
    pub iou_threshold: f64,
    pub grid_points: usize,
    /// Reused when it holds a finished run of the same configuration;
    /// otherwise written after training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            dsp: DspConfig::default(),
            inference: InferenceConfig { score_threshold: InferenceConfig::EVAL_FLOOR, ..Default::default() },
            iou_threshold: 0.5,
            grid_points: DEFAULT_GRID_POINTS,
            checkpoint: None,
        }
    }
}

pub struct BenchmarkOutcome {
    pub report: EvalReport,
    pub probe: ProbeReport,
    /// Empty when a cached checkpoint was reused.
    pub train_log: Vec<StepRecord>,
    pub detections: Vec<Detection>,
    pub checkpoint: Checkpoint,
}

fn reusable(ck: &Checkpoint, model: &ModelConfig, dsp: &DspConfig, synth: &SynthConfig) -> bool {
    ck.step == model.train.steps && &ck.model == model && &ck.dsp == dsp && synth.vocab().is_ok_and(|v| v == ck.vocab)
}

/// Trains `model` on the synthetic TRAIN split and scores it on TEST:
/// detection AP, multi-label AP and the frequency probe.
pub fn run_benchmark(synth: &SynthConfig, model: &ModelConfig, settings: &BenchmarkSettings) -> Result<BenchmarkOutcome> {
    if model.num_classes != synth.species.len() {
        return Err(Error::Config(format!(
            "model has {} classes for {} synthetic species",
            model.num_classes,
            synth.species.len()
        )));
    }
    let (manifest, waves) = synth_corpus_in_memory(synth)?;
    let sr = synth.sample_rate as f64;
    let resampled: Vec<Vec<f64>> = waves
        .iter()
        .map(|w| dsp::resample(w, sr, &settings.dsp))
        .collect::<Result<_>>()?;
    let by_path = |p: &str| -> Result<Vec<f64>> {
        let i = manifest.recordings.iter().position(|r| r.path == p).ok_or_else(|| Error::Validation(format!("unknown recording {p}")))?;
        Ok(resampled[i].clone())
    };
    let train_split = manifest.split(Split::Train);
    let test_split = manifest.split(Split::Test);

    let cached = settings.checkpoint.as_ref().filter(|p| p.is_file()).and_then(|p| Checkpoint::load(p).ok()).filter(|ck| reusable(ck, model, &settings.dsp, synth));
    let (checkpoint, train_log) = match cached {
        Some(ck) => (ck, Vec::new()),
        None => {
            let recs = train_split
                .recordings
                .iter()
                .map(|r| Ok((r.path.clone(), by_path(&r.path)?, train_split.annotations_for(&r.path).cloned().collect())))
                .collect::<Result<Vec<_>>>()?;
            let set = TrainingSet::from_memory(recs, &settings.dsp)?;
            let out = train(model.clone(), &set, |_, _| Ok(()))?;
            let ck = Checkpoint::new(&out.detector, &settings.dsp, &manifest.vocab, model.train.steps, Some(&out.optimizer))?;
            if let Some(p) = &settings.checkpoint {
                ck.save(p)?;
            }
            (ck, out.log)
        }
    };
    let detector: Detector = checkpoint.detector()?;
    let inf = Inferencer::new(detector, settings.dsp.clone(), manifest.vocab.clone(), settings.inference.clone())?;
    let mut detections = Vec::new();
    for r in &test_split.recordings {
        detections.extend(inf.detect_samples(&by_path(&r.path)?, &r.path));
    }

    let scope = SpeciesScope::all(&manifest.vocab);
    let step = settings.inference.multilabel_window_s;
    let mut report = EvalReport::new(
        scope.species.iter().map(|s| s.short_code.clone()).collect(),
        settings.iou_threshold,
        step,
        checkpoint.params.digest(),
    );
    report.detection = Some(eval_detection(&detections, &test_split, &scope, settings.iou_threshold)?);
    let pred = multilabel_predictions(&detections, &test_split, step)?;
    report.multilabel = Some(eval_multilabel(&pred, &multilabel_truth(&test_split, step), &scope)?);
    let probe = aggregate_probe(&inf.detector, &settings.dsp, &train_split, &test_split, &scope, settings.grid_points, by_path)?;
    Ok(BenchmarkOutcome { report, probe, train_log, detections, checkpoint })
}
