//! Sliding-window inference over whole recordings, cross-window merging,
//! the multi-label casting and the detection file formats.

mod io;

pub use io::{read_detections, read_detections_csv, read_detections_jsonl, write_detections_csv, write_detections_jsonl};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SpeciesVocab;
use crate::detector::boxes::iou;
use crate::detector::{Checkpoint, Detector, PeContext};
use crate::dsp::{pixels_to_annotation, tile_windows, DspConfig, PixelBox};
use crate::{audio, dsp, par, Error, Result};

/// A detection in recording coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub file: String,
    pub t_start: f64,
    pub t_end: f64,
    pub f_low: f64,
    pub f_high: f64,
    pub species_id: usize,
    pub confidence: f64,
    /// Tiling window the box came from; not part of the file formats.
    #[serde(default, skip_serializing)]
    pub window_index: usize,
}

impl Detection {
    /// `[t_start, f_low, t_end, f_high]`
    pub fn physical_box(&self) -> [f64; 4] {
        [self.t_start, self.f_low, self.t_end, self.f_high]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.t_start < self.t_end && self.f_low < self.f_high && self.confidence > 0.0 && self.confidence <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid detection {self:?}")))
        }
    }
}

/// Ranking key: confidence descending, then t_start, then f_low. Fully
/// ordered, so results never depend on input order.
fn rank_cmp(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.t_start.total_cmp(&b.t_start))
        .then(a.f_low.total_cmp(&b.f_low))
        .then(a.t_end.total_cmp(&b.t_end))
        .then(a.f_high.total_cmp(&b.f_high))
        .then(a.species_id.cmp(&b.species_id))
        .then(a.file.cmp(&b.file))
}

/// Greedy per-class suppression in physical space. Survivors have pairwise
/// same-class, same-file IoU <= `iou_threshold`.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    suppress(detections, iou_threshold, |_, _| true)
}

fn suppress(detections: &[Detection], iou_threshold: f64, eligible: impl Fn(&Detection, &Detection) -> bool) -> Vec<Detection> {
    let mut sorted = detections.to_vec();
    sorted.sort_by(rank_cmp);
    let mut keep: Vec<Detection> = Vec::new();
    for d in sorted {
        let suppressed = keep.iter().any(|k| {
            k.species_id == d.species_id && k.file == d.file && eligible(k, &d) && iou(&k.physical_box(), &d.physical_box()) > iou_threshold
        });
        if !suppressed {
            keep.push(d);
        }
    }
    keep
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Detections below this confidence are dropped.
    pub score_threshold: f64,
    /// Per-window, per-class NMS threshold.
    pub nms_iou: f64,
    /// Same-class boxes from different windows above this IoU collapse to
    /// the more confident one.
    pub merge_iou: f64,
    /// Boxes within this many pixels of an interior window edge are left
    /// to the neighbouring window, which sees the whole call.
    pub edge_margin_px: f64,
    /// Multi-label grid step in seconds.
    pub multilabel_window_s: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.5,
            nms_iou: 0.5,
            merge_iou: 0.5,
            edge_margin_px: 2.0,
            multilabel_window_s: 3.0,
        }
    }
}

impl InferenceConfig {
    /// Low floor keeping the tail that AP needs.
    pub const EVAL_FLOOR: f64 = 0.05;

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !(0.0..=1.0).contains(&self.score_threshold) || !unit(self.nms_iou) || !unit(self.merge_iou) {
            return Err(Error::Config("thresholds must lie in [0, 1]".into()));
        }
        if !(self.edge_margin_px >= 0.0) || !(self.multilabel_window_s > 0.0) {
            return Err(Error::Config("edge margin must be >= 0 and the multi-label window positive".into()));
        }
        Ok(())
    }
}

/// A loaded model ready to run on recordings.
pub struct Inferencer {
    pub detector: Detector,
    pub dsp: DspConfig,
    pub vocab: SpeciesVocab,
    pub cfg: InferenceConfig,
}

impl Inferencer {
    pub fn new(detector: Detector, dsp: DspConfig, vocab: SpeciesVocab, cfg: InferenceConfig) -> Result<Self> {
        cfg.validate()?;
        dsp.validate()?;
        if vocab.len() != detector.cfg.num_classes {
            return Err(Error::Config(format!(
                "{} species for a {}-class model",
                vocab.len(),
                detector.cfg.num_classes
            )));
        }
        Ok(Self { detector, dsp, vocab, cfg })
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: InferenceConfig) -> Result<Self> {
        Self::new(ck.detector()?, ck.dsp.clone(), ck.vocab.clone(), cfg)
    }

    /// Fails with a config error when any requested short code is missing
    /// from the model's vocabulary.
    pub fn check_scope(&self, codes: &[String]) -> Result<()> {
        let missing: Vec<&str> = codes
            .iter()
            .filter(|c| !self.vocab.entries.iter().any(|e| &e.short_code == *c))
            .map(|c| c.as_str())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("model does not know species {}", missing.join(", "))))
        }
    }

    pub fn detect_path(&self, path: &Path, file_id: &str) -> Result<Vec<Detection>> {
        let wave = audio::read(path)?;
        let wave = dsp::resample_waveform(&wave, &self.dsp)?;
        Ok(self.detect_samples(&wave.samples, file_id))
    }

    /// Tiles, runs every window, then merges across windows. Results are
    /// sorted by t_start and fully deterministic.
    pub fn detect_samples(&self, samples: &[f64], file_id: &str) -> Vec<Detection> {
        let windows = tile_windows(samples, &self.dsp, file_id);
        let n = windows.len();
        let (h, w) = (self.dsp.out_height, self.dsp.out_width);
        let per_window: Vec<Vec<Detection>> = par::map_range(n, |k| {
            let win = &windows[k];
            let ctx = PeContext { x_offset: 0.0, window_width: w as f64 };
            let dets = self
                .detector
                .detect(&win.pixels, h, w, ctx, self.cfg.score_threshold)
                .expect("window shape matches the DSP config");
            let m = self.cfg.edge_margin_px;
            dets.into_iter()
                .filter(|d| d.score >= self.cfg.score_threshold && d.score > 0.0)
                .filter(|d| !(k > 0 && d.bbox[0] <= m) && !(k + 1 < n && d.bbox[2] >= w as f64 - m))
                .map(|d| {
                    let pb = PixelBox { x0: d.bbox[0], y0: d.bbox[1], x1: d.bbox[2], y1: d.bbox[3], species_id: d.class };
                    let a = pixels_to_annotation(&pb, win);
                    Detection {
                        file: file_id.to_string(),
                        t_start: a.t_start.max(0.0),
                        t_end: a.t_end,
                        f_low: a.f_low,
                        f_high: a.f_high,
                        species_id: d.class,
                        confidence: d.score.min(1.0),
                        window_index: k,
                    }
                })
                .filter(|d| d.t_start < d.t_end && d.f_low < d.f_high)
                .collect()
        });
        let all: Vec<Detection> = per_window.into_iter().flatten().collect();
        let mut merged = merge_windows(&all, self.cfg.merge_iou);
        merged.sort_by(|a, b| a.t_start.total_cmp(&b.t_start).then_with(|| rank_cmp(a, b)));
        merged
    }
}

/// Cross-window reduce: a box is dropped when a more confident same-class
/// box from a different window overlaps it above `merge_iou`.
pub fn merge_windows(detections: &[Detection], merge_iou: f64) -> Vec<Detection> {
    suppress(detections, merge_iou, |a, b| a.window_index != b.window_index)
}

/// Per-species maximum confidence over one grid window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowLabelSet {
    pub window_t0: f64,
    pub duration: f64,
    pub scores: BTreeMap<usize, f64>,
}

/// Number of grid windows covering `duration` seconds.
pub fn multilabel_window_count(duration: f64, step: f64) -> usize {
    ((duration / step).ceil() as usize).max(1)
}

/// Non-overlapping `step`-second windows from t = 0 covering `duration`.
/// A detection counts in every window its time span intersects.
pub fn to_multilabel(detections: &[Detection], duration: f64, step: f64) -> Vec<WindowLabelSet> {
    let n = multilabel_window_count(duration, step);
    let mut out: Vec<WindowLabelSet> = (0..n)
        .map(|i| WindowLabelSet { window_t0: i as f64 * step, duration: step, scores: BTreeMap::new() })
        .collect();
    for d in detections {
        let first = (d.t_start / step).floor().max(0.0) as usize;
        for (i, win) in out.iter_mut().enumerate().skip(first) {
            let (a, b) = (i as f64 * step, (i + 1) as f64 * step);
            if a >= d.t_end {
                break;
            }
            if d.t_start < b && d.t_end > a {
                let s = win.scores.entry(d.species_id).or_insert(d.confidence);
                *s = s.max(d.confidence);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn det(t0: f64, t1: f64, f0: f64, f1: f64, c: usize, conf: f64) -> Detection {
        Detection { file: "a.wav".into(), t_start: t0, t_end: t1, f_low: f0, f_high: f1, species_id: c, confidence: conf, window_index: 0 }
    }

    #[test]
    fn nms_examples() {
        let a = det(0.0, 2.0, 0.0, 2.0, 0, 0.9);
        assert_eq!(nms(&[a.clone()], 0.5), vec![a.clone()]);
        let b = det(1.0, 3.0, 1.0, 3.0, 0, 0.8);
        assert_eq!(nms(&[a.clone(), b.clone()], 0.5).len(), 2);
        let c = Detection { confidence: 0.8, ..a.clone() };
        assert_eq!(nms(&[c, a.clone()], 0.5), vec![a.clone()]);
        // Other classes never suppress.
        let d = Detection { species_id: 1, confidence: 0.8, ..a.clone() };
        assert_eq!(nms(&[a, d], 0.5).len(), 2);
    }

    #[test]
    fn merge_only_collapses_across_windows() {
        let a = det(0.0, 1.0, 1000.0, 2000.0, 0, 0.9);
        let b = Detection { confidence: 0.7, ..a.clone() };
        assert_eq!(merge_windows(&[a.clone(), b.clone()], 0.5).len(), 2);
        let c = Detection { window_index: 1, ..b };
        assert_eq!(merge_windows(&[c, a.clone()], 0.5), vec![a]);
    }

    #[test]
    fn multilabel_examples() {
        assert!(to_multilabel(&[], 7.0, 3.0).iter().all(|w| w.scores.is_empty()));
        assert_eq!(to_multilabel(&[], 7.0, 3.0).len(), 3);
        let ws = to_multilabel(&[det(0.5, 0.7, 1.0, 2.0, 2, 0.6), det(1.5, 1.7, 1.0, 2.0, 2, 0.9)], 6.0, 3.0);
        assert_eq!(ws[0].scores[&2], 0.9);
        assert!(ws[1].scores.is_empty());
        let ws = to_multilabel(&[det(2.9, 3.2, 1.0, 2.0, 1, 0.7)], 6.0, 3.0);
        assert_eq!((ws[0].scores[&1], ws[1].scores[&1]), (0.7, 0.7));
        // Touching a boundary is not intersecting it.
        let ws = to_multilabel(&[det(2.0, 3.0, 1.0, 2.0, 1, 0.7)], 6.0, 3.0);
        assert!(ws[1].scores.is_empty());
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        prop::collection::vec((0u32..20, 1u32..6, 0u32..20, 1u32..6, 0usize..2, 1u32..6), 0..12).prop_map(|v| {
            v.into_iter()
                .map(|(t, dt, f, df, c, s)| det(t as f64 * 0.5, (t + dt) as f64 * 0.5, f as f64 * 100.0, (f + df) as f64 * 100.0, c, s as f64 / 5.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn nms_is_order_independent_idempotent_and_separating(dets in arb_dets(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let base = nms(&dets, 0.5);
            let mut shuffled = dets.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(&nms(&shuffled, 0.5), &base);
            prop_assert_eq!(&nms(&base, 0.5), &base);
            for (i, a) in base.iter().enumerate() {
                for b in &base[i + 1..] {
                    if a.species_id == b.species_id {
                        prop_assert!(iou(&a.physical_box(), &b.physical_box()) <= 0.5);
                    }
                }
            }
        }

        #[test]
        fn multilabel_matches_interval_oracle_and_is_monotone(dets in arb_dets(), extra in arb_dets()) {
            let ws = to_multilabel(&dets, 12.0, 3.0);
            for (i, w) in ws.iter().enumerate() {
                for c in 0..2 {
                    let (a, b) = (3.0 * i as f64, 3.0 * (i + 1) as f64);
                    let expect = dets
                        .iter()
                        .filter(|d| d.species_id == c && d.t_start < b && d.t_end > a)
                        .map(|d| d.confidence)
                        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
                    prop_assert_eq!(w.scores.get(&c).copied(), expect);
                }
            }
            let more: Vec<Detection> = dets.iter().chain(&extra).cloned().collect();
            let ws2 = to_multilabel(&more, 12.0, 3.0);
            for (w, w2) in ws.iter().zip(&ws2) {
                for (c, s) in &w.scores {
                    prop_assert!(w2.scores[c] >= *s);
                }
            }
        }
    }
}
