//! Detection and multi-label scoring: greedy matching, all-point average
//! precision, per-species reports.

mod report;

pub use report::{render_report, render_svg, to_markdown, EvalReport, EvalSection, PrCurve, SpeciesAp, REPORT_SCHEMA};

use std::collections::{BTreeMap, BTreeSet};

use crate::dataset::{DatasetManifest, SpeciesScope};
use crate::inference::{multilabel_window_count, to_multilabel, Detection, WindowLabelSet};
use crate::{Error, Result};

/// `[t_start, f_low, t_end, f_high]` in seconds and Hz.
pub type PhysBox = [f64; 4];

/// Intersection over union in time x frequency. Zero-area boxes give 0.
pub fn iou(a: &PhysBox, b: &PhysBox) -> f64 {
    crate::detector::boxes::iou(a, b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Index into the detections passed in.
    pub detection: usize,
    pub annotation: Option<usize>,
    /// IoU with the matched annotation, or the best IoU seen for a false
    /// positive.
    pub iou: f64,
    pub is_tp: bool,
}

/// Indices of `scores` by descending score, ties in input order.
fn rank(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let s: Vec<f64> = scores.collect();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    idx
}

/// Greedy matching for one (recording, species) group. Detections are taken
/// by descending confidence; each takes the highest-IoU unmatched
/// annotation (lowest index on ties) when that IoU reaches the threshold.
/// Results come in processing order.
pub fn match_detections(dets: &[(PhysBox, f64)], gts: &[PhysBox], iou_threshold: f64) -> Vec<MatchResult> {
    let mut taken = vec![false; gts.len()];
    rank(dets.iter().map(|d| d.1))
        .into_iter()
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            let mut seen = 0.0f64;
            for (j, g) in gts.iter().enumerate() {
                let v = iou(&dets[i].0, g);
                seen = seen.max(v);
                if !taken[j] && v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, v)) => {
                    taken[j] = true;
                    MatchResult { detection: i, annotation: Some(j), iou: v, is_tp: true }
                }
                None => MatchResult { detection: i, annotation: None, iou: seen, is_tp: false },
            }
        })
        .collect()
}

/// Error-free `a + b` as (sum, rounding error).
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// (recall, precision) at the end of every tie group of equal scores.
pub fn pr_points(scored: &[(f64, bool)], positives: usize) -> Vec<(f64, f64)> {
    let order = rank(scored.iter().map(|s| s.0));
    let mut out = Vec::new();
    let (mut tp, mut k) = (0usize, 0usize);
    for (pos, &i) in order.iter().enumerate() {
        k += 1;
        tp += scored[i].1 as usize;
        let group_ends = order.get(pos + 1).is_none_or(|&n| scored[n].0 != scored[i].0);
        if group_ends {
            out.push((tp as f64 / positives.max(1) as f64, tp as f64 / k as f64));
        }
    }
    out
}

/// All-point interpolated AP: area under the precision envelope over
/// recall. Equal scores form one operating point, so the result does not
/// depend on input order. `None` when there are no positives.
///
/// Accumulated in double-double so simple ratios come out correctly
/// rounded (`[TP, FP, TP]` over 2 positives is exactly `5.0 / 6.0`).
pub fn average_precision(scored: &[(f64, bool)], positives: usize) -> Option<f64> {
    if positives == 0 {
        return None;
    }
    let order = rank(scored.iter().map(|s| s.0));
    // (tp, retrieved) at each group end
    let mut pts: Vec<(usize, usize)> = Vec::new();
    let mut tp = 0usize;
    for (pos, &i) in order.iter().enumerate() {
        tp += scored[i].1 as usize;
        if order.get(pos + 1).is_none_or(|&n| scored[n].0 != scored[i].0) {
            pts.push((tp, pos + 1));
        }
    }
    // Envelope: best precision at or beyond each point, kept as a ratio.
    let mut env: Vec<(usize, usize)> = pts.clone();
    for i in (0..env.len().saturating_sub(1)).rev() {
        let (a, b) = (env[i], env[i + 1]);
        if (b.0 as u128) * (a.1 as u128) > (a.0 as u128) * (b.1 as u128) {
            env[i] = b;
        }
    }
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    let mut prev_tp = 0usize;
    for (p, e) in pts.iter().zip(&env) {
        let d = p.0 - prev_tp;
        prev_tp = p.0;
        if d == 0 {
            continue;
        }
        let num = (d * e.0) as f64;
        let den = e.1 as f64;
        let q = num / den;
        let r = (-q).mul_add(den, num) / den;
        let (s, err) = two_sum(hi, q);
        hi = s;
        lo += err + r;
    }
    let n = positives as f64;
    let q = hi / n;
    let r = (-q).mul_add(n, hi) + lo;
    Some((q + r / n).clamp(0.0, 1.0))
}

fn mean_defined(aps: &[SpeciesAp]) -> Option<f64> {
    let v: Vec<f64> = aps.iter().filter_map(|a| a.ap).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn section(per_species: Vec<SpeciesAp>, curves: Vec<PrCurve>) -> EvalSection {
    let excluded = per_species.iter().filter(|a| a.ap.is_none()).map(|a| a.code.clone()).collect();
    EvalSection { map: mean_defined(&per_species), per_species, excluded, pr_curves: curves }
}

fn curve(code: &str, scored: &[(f64, bool)], positives: usize) -> PrCurve {
    let pts = pr_points(scored, positives);
    let step = pts.len().div_ceil(256).max(1);
    let mut kept: Vec<(f64, f64)> = pts.iter().step_by(step).copied().collect();
    if let Some(&last) = pts.last() {
        if kept.last() != Some(&last) {
            kept.push(last);
        }
    }
    PrCurve { code: code.to_string(), recall: kept.iter().map(|p| p.0).collect(), precision: kept.iter().map(|p| p.1).collect() }
}

/// Per-species detection AP at `iou_threshold` against the annotations of
/// `truth` (typically the TEST split), restricted to `scope`.
pub fn eval_detection(dets: &[Detection], truth: &DatasetManifest, scope: &SpeciesScope, iou_threshold: f64) -> Result<EvalSection> {
    let files: BTreeSet<&str> = truth.recordings.iter().map(|r| r.path.as_str()).collect();
    if let Some(d) = dets.iter().find(|d| !files.contains(d.file.as_str())) {
        return Err(Error::Validation(format!("detection references unknown recording {:?}", d.file)));
    }
    let per: Vec<(SpeciesAp, PrCurve)> = crate::par::map_slice(&scope.species, |sp| {
        let mut scored: Vec<(f64, bool)> = Vec::new();
        let mut positives = 0;
        let mut n_det = 0;
        for file in &files {
            let gts: Vec<PhysBox> = truth
                .annotations_for(file)
                .filter(|a| a.species_id == sp.species_id)
                .map(|a| [a.t_start, a.f_low, a.t_end, a.f_high])
                .collect();
            let ds: Vec<(PhysBox, f64)> = dets
                .iter()
                .filter(|d| d.species_id == sp.species_id && d.file == *file)
                .map(|d| (d.physical_box(), d.confidence))
                .collect();
            positives += gts.len();
            n_det += ds.len();
            for m in match_detections(&ds, &gts, iou_threshold) {
                scored.push((ds[m.detection].1, m.is_tp));
            }
        }
        let ap = SpeciesAp {
            species_id: sp.species_id,
            code: sp.short_code.clone(),
            ap: average_precision(&scored, positives),
            positives,
            predictions: n_det,
        };
        (ap, curve(&sp.short_code, &scored, positives))
    });
    let (aps, curves) = per.into_iter().unzip();
    Ok(section(aps, curves))
}

/// Ground-truth label sets: a species is present in a grid window when any
/// of its annotations intersects it.
pub fn multilabel_truth(truth: &DatasetManifest, step: f64) -> BTreeMap<String, Vec<WindowLabelSet>> {
    truth
        .recordings
        .iter()
        .map(|r| {
            let dets: Vec<Detection> = truth
                .annotations_for(&r.path)
                .map(|a| Detection {
                    file: r.path.clone(),
                    t_start: a.t_start,
                    t_end: a.t_end,
                    f_low: a.f_low,
                    f_high: a.f_high,
                    species_id: a.species_id,
                    confidence: 1.0,
                    window_index: 0,
                })
                .collect();
            (r.path.clone(), to_multilabel(&dets, r.duration, step))
        })
        .collect()
}

/// Casts detections onto the multi-label grid of every recording in
/// `truth`.
pub fn multilabel_predictions(dets: &[Detection], truth: &DatasetManifest, step: f64) -> Result<BTreeMap<String, Vec<WindowLabelSet>>> {
    let files: BTreeSet<&str> = truth.recordings.iter().map(|r| r.path.as_str()).collect();
    if let Some(d) = dets.iter().find(|d| !files.contains(d.file.as_str())) {
        return Err(Error::Validation(format!("detection references unknown recording {:?}", d.file)));
    }
    Ok(truth
        .recordings
        .iter()
        .map(|r| {
            let mine: Vec<Detection> = dets.iter().filter(|d| d.file == r.path).cloned().collect();
            debug_assert_eq!(multilabel_window_count(r.duration, step), to_multilabel(&mine, r.duration, step).len());
            (r.path.clone(), to_multilabel(&mine, r.duration, step))
        })
        .collect())
}

/// Per-species AP over all grid windows; a species absent from a
/// predicted window scores 0 there.
pub fn eval_multilabel(
    pred: &BTreeMap<String, Vec<WindowLabelSet>>,
    truth: &BTreeMap<String, Vec<WindowLabelSet>>,
    scope: &SpeciesScope,
) -> Result<EvalSection> {
    if pred.keys().ne(truth.keys()) {
        return Err(Error::Validation("predicted and true window grids cover different recordings".into()));
    }
    for (file, t) in truth {
        let p = &pred[file];
        let same = p.len() == t.len() && p.iter().zip(t).all(|(a, b)| a.window_t0 == b.window_t0 && a.duration == b.duration);
        if !same {
            return Err(Error::Validation(format!("window grids differ for {file}")));
        }
    }
    let per: Vec<(SpeciesAp, PrCurve)> = crate::par::map_slice(&scope.species, |sp| {
        let c = sp.species_id;
        let mut scored = Vec::new();
        let mut predictions = 0;
        for (file, t) in truth {
            for (pw, tw) in pred[file].iter().zip(t) {
                let s = pw.scores.get(&c).copied().unwrap_or(0.0);
                predictions += (s > 0.0) as usize;
                scored.push((s, tw.scores.contains_key(&c)));
            }
        }
        let positives = scored.iter().filter(|s| s.1).count();
        let ap = SpeciesAp { species_id: c, code: sp.short_code.clone(), ap: average_precision(&scored, positives), positives, predictions };
        (ap, curve(&sp.short_code, &scored, positives))
    });
    let (aps, curves) = per.into_iter().unzip();
    Ok(section(aps, curves))
}
