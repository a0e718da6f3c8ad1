//! Posterior frequency probe: sweep the frequency part of the RoI
//! positional encoding for fixed calls and invert with Bayes' rule under a
//! uniform frequency prior.

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationBox, DatasetManifest, SpeciesScope};
use crate::detector::boxes::BoxPx;
use crate::detector::pe::replace_freq_center;
use crate::detector::{softmax_rows, Detector, PeContext};
use crate::dsp::{annotation_to_pixels, window_from_segment, DspConfig, GeometryMap};
use crate::nn::{Graph, Tensor};
use crate::{par, Error, Result};

pub const PROBE_SCHEMA: &str = "callscope.probe/1";
pub const DEFAULT_GRID_POINTS: usize = 64;

/// `points` uniform frequencies over `[f_min, f_max]`, endpoints included.
pub fn frequency_grid(dsp: &DspConfig, points: usize) -> Vec<f64> {
    let step = (dsp.f_max - dsp.f_min) / (points.max(2) - 1) as f64;
    (0..points).map(|i| dsp.f_min + i as f64 * step).collect()
}

/// Grid index nearest to `hz`.
pub fn grid_index(grid: &[f64], hz: f64) -> usize {
    let mut best = 0;
    for (i, g) in grid.iter().enumerate() {
        if (g - hz).abs() < (grid[best] - hz).abs() {
            best = i;
        }
    }
    best
}

/// p(c|f) for every grid frequency: the call's pooled features and the rest
/// of its encoding stay fixed, only the frequency-centre block moves.
/// Raw softmax probabilities of class `class` (zero-based species).
pub fn sweep_frequency_encoding(det: &Detector, pixels: &[f64], height: usize, width: usize, roi: &BoxPx, class: usize, grid_hz: &[f64], geometry: &GeometryMap) -> Vec<f64> {
    let mut g = Graph::no_grad();
    let x = g.input(Detector::image_tensor(pixels, height, width));
    let feats = det.features(&mut g, x).expect("image matches the model");
    let pooled = det.pool_rois(&mut g, &feats.pyramid, &[*roi]);
    let one = g.value(pooled).clone();
    let n = grid_hz.len();
    let mut tiled = Vec::with_capacity(one.len() * n);
    for _ in 0..n {
        tiled.extend_from_slice(one.data());
    }
    let mut shape = one.shape().to_vec();
    shape[0] = n;
    let pooled = g.input(Tensor::new(shape, tiled));
    let ctx = PeContext { x_offset: 0.0, window_width: width as f64 };
    let pe = det.pe_matrix(&[*roi], ctx).map(|base| {
        let d = base.len();
        let mut data = Vec::with_capacity(d * n);
        for &f in grid_hz {
            let mut row = base.data().to_vec();
            replace_freq_center(&mut row, geometry.hz_to_px(f), &det.cfg);
            data.extend(row);
        }
        Tensor::new(vec![n, d], data)
    });
    let (logits, _) = det.rcnn.forward(&mut g, &det.params, pooled, pe);
    let k = det.cfg.num_classes + 1;
    let p = softmax_rows(g.value(logits));
    (0..n).map(|i| p[i * k + class + 1]).collect()
}

/// p(f|c) = p(c|f) / sum_f p(c|f), the uniform prior cancelling.
pub fn posterior_from_bayes(p_c_given_f: &[f64]) -> Result<Vec<f64>> {
    let z: f64 = p_c_given_f.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Degenerate("p(c|f) is zero everywhere; no posterior to normalise".into()));
    }
    Ok(p_c_given_f.iter().map(|v| v / z).collect())
}

/// Normalised histogram of annotation centre frequencies on the grid
/// (nearest grid point). `None` when no annotation falls in range.
pub fn center_histogram(annotations: &[&AnnotationBox], grid: &[f64]) -> Option<Vec<f64>> {
    let mut h = vec![0.0; grid.len()];
    let half = 0.5 * (grid[1] - grid[0]);
    for a in annotations {
        let c = a.center_frequency();
        if c >= grid[0] - half && c <= grid[grid.len() - 1] + half {
            h[grid_index(grid, c)] += 1.0;
        }
    }
    let z: f64 = h.iter().sum();
    (z > 0.0).then(|| h.iter().map(|v| v / z).collect())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorCurve {
    pub species_id: usize,
    pub code: String,
    pub grid_hz: Vec<f64>,
    pub posterior: Vec<f64>,
    /// Training centre-frequency distribution; uniform-zero when the
    /// species has no training annotations.
    pub training_histogram: Vec<f64>,
    pub calls: usize,
    /// |argmax posterior - argmax histogram| in grid bins.
    pub peak_offset_bins: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub schema: String,
    /// How p(c|f) was obtained.
    pub probability: String,
    pub curves: Vec<PosteriorCurve>,
    /// Species skipped for lack of test calls.
    pub skipped: Vec<String>,
}

/// One test call, its window and its RoI.
pub struct ProbeCall {
    pub pixels: Vec<f64>,
    pub roi: BoxPx,
    pub species_id: usize,
}

/// Builds the window centred on `a` from its recording and maps the call
/// to pixels. `None` when it misses the band.
pub fn probe_call(samples: &[f64], a: &AnnotationBox, dsp: &DspConfig) -> Option<ProbeCall> {
    let sr = dsp.sample_rate as f64;
    let len = dsp.window_samples();
    let centre = 0.5 * (a.t_start + a.t_end);
    let start = ((centre * sr) as isize - len as isize / 2).max(0) as usize;
    let mut seg: Vec<f64> = samples.get(start..(start + len).min(samples.len())).unwrap_or(&[]).to_vec();
    seg.resize(len, 0.0);
    let w = window_from_segment(&seg, start as f64 / sr, dsp, &a.source_file);
    let b = annotation_to_pixels(a, &w, dsp.min_visibility)?;
    Some(ProbeCall { pixels: w.pixels, roi: [b.x0, b.y0, b.x1, b.y1], species_id: a.species_id })
}

/// Mean posterior over every test call of each species in scope, paired
/// with the training histogram. `samples_of(path)` returns a recording's
/// samples at the DSP rate.
pub fn aggregate_probe(
    det: &Detector,
    dsp: &DspConfig,
    train: &DatasetManifest,
    test: &DatasetManifest,
    scope: &SpeciesScope,
    grid_points: usize,
    samples_of: impl Fn(&str) -> Result<Vec<f64>> + Sync,
) -> Result<ProbeReport> {
    let grid = frequency_grid(dsp, grid_points);
    let geometry = GeometryMap::new(dsp);
    let mut calls: Vec<ProbeCall> = Vec::new();
    for r in &test.recordings {
        let anns: Vec<&AnnotationBox> = test.annotations_for(&r.path).filter(|a| scope.contains(a.species_id)).collect();
        if anns.is_empty() {
            continue;
        }
        let s = samples_of(&r.path)?;
        calls.extend(anns.into_iter().filter_map(|a| probe_call(&s, a, dsp)));
    }
    let (h, w) = (dsp.out_height, dsp.out_width);
    let posts: Vec<Result<Vec<f64>>> = par::map_slice(&calls, |c| {
        let p = sweep_frequency_encoding(det, &c.pixels, h, w, &c.roi, c.species_id, &grid, &geometry);
        posterior_from_bayes(&p)
    });
    let posts: Vec<Vec<f64>> = posts.into_iter().collect::<Result<_>>()?;

    let mut curves = Vec::new();
    let mut skipped = Vec::new();
    for sp in &scope.species {
        let mine: Vec<&Vec<f64>> = calls.iter().zip(&posts).filter(|(c, _)| c.species_id == sp.species_id).map(|(_, p)| p).collect();
        if mine.is_empty() {
            log::warn!("{}: no test calls, probe skipped", sp.short_code);
            skipped.push(sp.short_code.clone());
            continue;
        }
        let mut mean = vec![0.0; grid.len()];
        for p in &mine {
            for (m, v) in mean.iter_mut().zip(p.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= mine.len() as f64);
        let train_anns: Vec<&AnnotationBox> = train.annotations.iter().filter(|a| a.species_id == sp.species_id).collect();
        let hist = center_histogram(&train_anns, &grid);
        let peak_offset_bins = hist.as_ref().map(|h| argmax(&mean).abs_diff(argmax(h)));
        curves.push(PosteriorCurve {
            species_id: sp.species_id,
            code: sp.short_code.clone(),
            grid_hz: grid.clone(),
            posterior: mean,
            training_histogram: hist.unwrap_or_else(|| vec![0.0; grid.len()]),
            calls: mine.len(),
            peak_offset_bins,
        });
    }
    Ok(ProbeReport { schema: PROBE_SCHEMA.into(), probability: "raw softmax".into(), curves, skipped })
}

impl PosteriorCurve {
    pub fn peak_hz(&self) -> f64 {
        self.grid_hz[argmax(&self.posterior)]
    }

    pub fn peak_index(&self) -> usize {
        argmax(&self.posterior)
    }
}

/// Posterior (line) over the training histogram (bars).
pub fn render_curve_svg(c: &PosteriorCurve) -> String {
    use std::fmt::Write as _;
    let (w, h, m) = (480.0, 280.0, 40.0);
    let n = c.grid_hz.len().max(1) as f64;
    let top = c.posterior.iter().chain(&c.training_histogram).copied().fold(1e-12, f64::max);
    let x = |i: f64| m + i / n * (w - 2.0 * m);
    let y = |v: f64| h - m - v / top * (h - 2.0 * m);
    let mut s = format!(r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"##);
    s.push('\n');
    for (i, v) in c.training_histogram.iter().enumerate() {
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#ccc"/>"##,
            x(i as f64),
            y(*v),
            (w - 2.0 * m) / n,
            h - m - y(*v)
        );
    }
    let pts: Vec<String> = c.posterior.iter().enumerate().map(|(i, v)| format!("{:.1},{:.1}", x(i as f64 + 0.5), y(*v))).collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="2"/>"##, pts.join(" "));
    let _ = writeln!(
        s,
        r##"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}: p(f|c) vs training centre frequencies</text>"##,
        w / 2.0,
        c.code
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{:.0} Hz .. {:.0} Hz</text>"##,
        w / 2.0,
        h - 10.0,
        c.grid_hz.first().unwrap_or(&0.0),
        c.grid_hz.last().unwrap_or(&0.0)
    );
    s.push_str("</svg>\n");
    s
}
