//! Acceptance suite. Prints one PASS/FAIL (or SKIP for the online check)
//! line per criterion and exits non-zero if any criterion fails.
//!
//! The synthetic end-to-end criterion trains three small detectors; their
//! checkpoints are cached under cargo's target tmp dir so later runs only
//! repeat inference and scoring. Delete `target/tmp/acceptance` to retrain.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use callscope::dataset::fetch::{fetch, ArchiveSpec};
use callscope::dataset::{
    build_manifest_from_layout, compute_stats, filter_evaluation_scope, parse_audacity_labels, serialize_audacity,
    AnnotationBox, DatasetManifest, LayoutOptions, ScopeFilter, SpeciesEntry, SpeciesVocab, Split,
};
use callscope::detector::targets::GtBox;
use callscope::detector::{train, Detector, ModelConfig, PeContext, TrainingSet};
use callscope::dsp::{self, annotation_to_pixels, pixels_to_annotation, window_from_segment, DspConfig};
use callscope::eval::{average_precision, match_detections, PhysBox};
use callscope::inference::{write_detections_csv, InferenceConfig, Inferencer};
use callscope::nn::{init, Graph, Tensor};
use callscope::probe::{frequency_grid, grid_index, probe_call, sweep_frequency_encoding};
use callscope::synth::{run_benchmark, synth_corpus_in_memory, synth_recording, write_corpus, BenchmarkOutcome, BenchmarkSettings, SynthConfig};
use callscope::{par, Error};
use common::{brute_force_ap, brute_force_match, random_box};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn cache_dir() -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&d).expect("target tmp dir is writable");
    d
}

// ---------------------------------------------------------------------------
// 1. Synthetic end-to-end

const SEEDS: [u64; 3] = [7, 8, 9];
const MIN_DET_MAP: f64 = 0.80;
const MIN_ML_MAP: f64 = 0.85;
const TRAIN_BUDGET_S: f64 = 30.0 * 60.0;

struct SeedRun {
    seed: u64,
    outcome: BenchmarkOutcome,
    synth: SynthConfig,
    train_seconds: f64,
}

fn benchmark(seed: u64) -> std::result::Result<SeedRun, String> {
    let synth = SynthConfig { seed, ..SynthConfig::default() };
    let mut model = ModelConfig::small(synth.species.len());
    model.seed = seed;
    let ck = cache_dir().join(format!("synth_seed{seed}.checkpoint.json"));
    let timing = cache_dir().join(format!("synth_seed{seed}.train_seconds"));
    let settings = BenchmarkSettings { checkpoint: Some(ck), ..Default::default() };
    let outcome = run_benchmark(&synth, &model, &settings).map_err(|e| e.to_string())?;
    let train_seconds = match outcome.train_log.last() {
        Some(r) => {
            std::fs::write(&timing, r.wall_time.to_string()).map_err(|e| e.to_string())?;
            r.wall_time
        }
        None => std::fs::read_to_string(&timing).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(f64::NAN),
    };
    Ok(SeedRun { seed, outcome, synth, train_seconds })
}

fn synthetic_end_to_end(runs: &[std::result::Result<SeedRun, String>]) -> Check {
    let mut parts = Vec::new();
    let mut failed = Vec::new();
    for r in runs {
        let r = r.as_ref().map_err(|e| format!("benchmark errored: {e}"))?;
        let det = r.outcome.report.detection.as_ref().and_then(|s| s.map).unwrap_or(f64::NAN);
        let ml = r.outcome.report.multilabel.as_ref().and_then(|s| s.map).unwrap_or(f64::NAN);
        parts.push(format!("seed {}: det {det:.3} ml {ml:.3} train {:.0}s", r.seed, r.train_seconds));
        if !(det >= MIN_DET_MAP && ml >= MIN_ML_MAP) {
            failed.push(r.seed);
        }
        if !(r.train_seconds <= TRAIN_BUDGET_S) {
            failed.push(r.seed);
        }
    }
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let text = format!("{} ({cores} core(s))", parts.join("; "));
    if failed.is_empty() { Ok(text) } else { Err(text) }
}

// ---------------------------------------------------------------------------
// 2. Gradient oracle

const GRAD_COORDS: usize = 240;
const GRAD_RTOL: f64 = 1e-3;
/// Coordinates where both derivatives are below this are zero to within
/// finite-difference round-off and count as agreeing.
const GRAD_ZERO: f64 = 1e-9;

fn toy_image(seed: u64) -> Tensor {
    let t = init::normal(&mut ChaCha8Rng::seed_from_u64(seed), &[1, 16, 32], 1.0);
    let d = t.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
    Tensor::new(vec![1, 16, 32], d)
}

fn gradient_oracle() -> Check {
    let started = Instant::now();
    let mut det = Detector::new(ModelConfig::toy(2)).map_err(|e| e.to_string())?;
    let img = toy_image(6);
    let gts = vec![
        GtBox { bbox: [3.0, 2.0, 11.0, 9.0], class: 0 },
        GtBox { bbox: [16.0, 6.0, 27.0, 14.0], class: 1 },
    ];
    let ctx = PeContext { x_offset: 0.0, window_width: 32.0 };
    let mut g = Graph::new();
    let (_, _, plan) = det.loss(&mut g, &img, &gts, ctx, None, &mut ChaCha8Rng::seed_from_u64(9)).map_err(|e| e.to_string())?;
    // The sampled plan is frozen so the loss is a smooth function of the weights.
    let eval = |det: &Detector, grad: bool| {
        let mut g = if grad { Graph::new() } else { Graph::no_grad() };
        let (total, l, _) = det.loss(&mut g, &img, &gts, ctx, Some(&plan), &mut ChaCha8Rng::seed_from_u64(0)).expect("loss");
        let grads = if grad { g.backward(total, det.params.len()) } else { Vec::new() };
        (l.total(), grads)
    };
    let (_, grads) = eval(&det, true);
    let ids: Vec<_> = det.params.ids().collect();
    let sizes: Vec<usize> = ids.iter().map(|&id| det.params.get(id).len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    // One coordinate in every tensor, the rest uniform over all weights.
    let mut coords: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(t, &n)| (t, rng.gen_range(0..n))).collect();
    while coords.len() < GRAD_COORDS.max(ids.len()) {
        let mut k = rng.gen_range(0..total);
        let t = sizes.iter().position(|&n| if k < n { true } else { k -= n; false }).unwrap();
        coords.push((t, k));
    }
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    let mut zeros = 0;
    for &(t, i) in &coords {
        let id = ids[t];
        let orig = det.params.get(id).data()[i];
        det.params.get_mut(id).data_mut()[i] = orig + eps;
        let up = eval(&det, false).0;
        det.params.get_mut(id).data_mut()[i] = orig - eps;
        let down = eval(&det, false).0;
        det.params.get_mut(id).data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let an = grads[id.0].as_ref().map_or(0.0, |g| g.data()[i]);
        let scale = fd.abs().max(an.abs());
        if scale < GRAD_ZERO {
            zeros += 1;
            continue;
        }
        let rel = (fd - an).abs() / scale;
        worst = worst.max(rel);
        if rel > GRAD_RTOL {
            bad.push(format!("{}[{i}] fd {fd:.6e} an {an:.6e}", det.params.name(id)));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let text = format!("{} coordinates ({zeros} with both derivatives below {GRAD_ZERO:e}), worst rtol {worst:.2e}, {secs:.1}s", coords.len());
    ensure(secs < 300.0, || format!("{text}: over the 5 min budget"))?;
    ensure(bad.is_empty(), || format!("{text}; {} over {GRAD_RTOL}: {}", bad.len(), bad.iter().take(3).cloned().collect::<Vec<_>>().join(", ")))?;
    Ok(text)
}

// ---------------------------------------------------------------------------
// 3. Positional-encoding ablation and frequency probe

const PROBE_BINS: usize = 2;
const PROBE_SUM_TOL: f64 = 1e-6;

fn pe_ablation_and_probe(run: Option<&SeedRun>) -> Check {
    let run = run.ok_or("seed-7 benchmark unavailable")?;
    let dsp_cfg = DspConfig::default();
    let geometry = dsp_cfg.geometry();
    let grid = frequency_grid(&dsp_cfg, 64);

    // Ablation: one real test call swept across the grid.
    let (samples, anns) = synth_recording(&run.synth, Split::Test, 0);
    let samples = dsp::resample(&samples, run.synth.sample_rate as f64, &dsp_cfg).map_err(|e| e.to_string())?;
    let call = anns.iter().find_map(|a| probe_call(&samples, a, &dsp_cfg)).ok_or("no probe-able call in test recording 0")?;
    let (h, w) = (dsp_cfg.out_height, dsp_cfg.out_width);
    let mut blind = run.outcome.checkpoint.detector().map_err(|e| e.to_string())?;
    let proj = blind.rcnn.pe_proj.as_ref().ok_or("model has no PE projection")?.w;
    blind.params.get_mut(proj).data_mut().fill(0.0);
    let flat = sweep_frequency_encoding(&blind, &call.pixels, h, w, &call.roi, call.species_id, &grid, &geometry);
    ensure(flat.iter().all(|p| p.to_bits() == flat[0].to_bits()), || "zeroed PE still moves the class posterior".into())?;
    let live = run.outcome.checkpoint.detector().map_err(|e| e.to_string())?;
    let curve = sweep_frequency_encoding(&live, &call.pixels, h, w, &call.roi, call.species_id, &grid, &geometry);
    ensure(curve.iter().any(|p| p.to_bits() != curve[0].to_bits()), || "active PE has no effect".into())?;

    // Probe: mean posterior peak against each generated band centre.
    let curves = &run.outcome.probe.curves;
    ensure(curves.len() == run.synth.species.len(), || format!("{} probe curves for {} species", curves.len(), run.synth.species.len()))?;
    let mut offsets = Vec::new();
    for c in curves {
        let sp = &run.synth.species[c.species_id];
        let centre = grid_index(&c.grid_hz, 0.5 * (sp.band.0 + sp.band.1));
        let off = c.peak_index().abs_diff(centre);
        let sum: f64 = c.posterior.iter().sum();
        ensure((sum - 1.0).abs() <= PROBE_SUM_TOL, || format!("{}: posterior sums to {sum}", c.code))?;
        ensure(off <= PROBE_BINS, || format!("{}: peak bin {} vs centre {centre}", c.code, c.peak_index()))?;
        offsets.push(format!("{} {off}", c.code));
    }
    Ok(format!("ablation exact over {} grid points; peak offsets (bins): {}", grid.len(), offsets.join(", ")))
}

// ---------------------------------------------------------------------------
// 4. Evaluation oracles

fn eval_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in 0..1000 {
        let dets: Vec<(PhysBox, f64)> = (0..rng.gen_range(0..=5)).map(|_| (random_box(&mut rng), rng.gen_range(1..5) as f64 / 4.0)).collect();
        let gts: Vec<PhysBox> = (0..rng.gen_range(0..=5)).map(|_| random_box(&mut rng)).collect();
        let thr = [0.1, 0.3, 0.5][rng.gen_range(0..3)];
        let got: Vec<(usize, Option<usize>)> = match_detections(&dets, &gts, thr).iter().map(|m| (m.detection, m.annotation)).collect();
        ensure(got == brute_force_match(&dets, &gts, thr), || format!("matching instance {n} differs"))?;

        let scored: Vec<(f64, bool)> = (0..rng.gen_range(0..=5)).map(|_| (rng.gen_range(0..4) as f64 / 4.0, rng.gen_bool(0.5))).collect();
        let positives = scored.iter().filter(|s| s.1).count() + rng.gen_range(0..=2);
        let same = match (average_precision(&scored, positives), brute_force_ap(&scored, positives)) {
            (None, None) => true,
            (Some(g), Some((a, b))) => g == a as f64 / b as f64,
            _ => false,
        };
        ensure(same, || format!("AP instance {n} differs: {scored:?} / {positives}"))?;
    }
    let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2);
    ensure(ap == Some(5.0 / 6.0), || format!("[0.9 TP, 0.8 FP, 0.7 TP] over 2 gives {ap:?}"))?;
    Ok("1000 matching and 1000 AP instances equal the oracles; example AP = 5/6".into())
}

// ---------------------------------------------------------------------------
// 5. DSP geometry

fn dsp_geometry() -> Check {
    let cfg = DspConfig::default();
    let g = cfg.geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let audio: Vec<f64> = vec![0.0; cfg.window_samples()];
    let win = window_from_segment(&audio, 12.5, &cfg, "x.wav");
    let (t0, t1) = win.time_extent();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let y = rng.gen_range(0.0..cfg.out_height as f64);
        let x = rng.gen_range(0.0..cfg.out_width as f64);
        worst = worst.max((g.hz_to_px(g.px_to_hz(y)) - y).abs());
        worst = worst.max((g.sec_to_px(g.px_to_sec(x)) - x).abs());
        // Whole boxes through the window mapping and back, measured in pixels.
        let (ta, tb) = (rng.gen_range(t0..t1), rng.gen_range(t0..t1));
        let (fa, fb): (f64, f64) = (rng.gen_range(600.0..12900.0), rng.gen_range(600.0..12900.0));
        if (ta - tb).abs() < 0.05 || (fa - fb).abs() < 50.0 {
            continue;
        }
        let a = AnnotationBox { t_start: ta.min(tb), t_end: ta.max(tb), f_low: fa.min(fb), f_high: fa.max(fb), species_id: 0, source_file: "x.wav".into() };
        let p = annotation_to_pixels(&a, &win, 0.0).ok_or("visible box was dropped")?;
        let back = pixels_to_annotation(&p, &win);
        for (u, v) in [(back.t_start, a.t_start), (back.t_end, a.t_end)] {
            worst = worst.max(g.sec_to_px((u - v).abs()));
        }
        for (u, v) in [(back.f_low, a.f_low), (back.f_high, a.f_high)] {
            worst = worst.max((g.hz_to_px(u) - g.hz_to_px(v)).abs());
        }
    }
    ensure(worst <= 1.0, || format!("round-trip error {worst} px"))?;

    let sr = cfg.sample_rate as f64;
    let tone: Vec<f64> = (0..cfg.sample_rate as usize).map(|n| (2.0 * std::f64::consts::PI * 5000.0 * n as f64 / sr).sin()).collect();
    let spec = dsp::spectrogram(&tone, &cfg);
    let bins: Vec<usize> = (0..spec.cols).map(|c| spec.column_argmax(c)).collect();
    ensure(bins.iter().all(|&b| b.abs_diff(116) <= 1), || format!("5 kHz tone on bins {:?}", &bins[..bins.len().min(5)]))?;

    for _ in 0..100 {
        let len = rng.gen_range(cfg.n_fft..(sr as usize * 600));
        let mut frames = 0;
        while frames * cfg.hop + cfg.n_fft <= len {
            frames += 1;
        }
        let f = dsp::frame_count(len, &cfg);
        ensure(f == frames, || format!("{len} samples: {f} frames by formula, {frames} enumerated"))?;
        // Windows: origins every stride until one reaches the last frame.
        let total = dsp::padded_frame_count(len, &cfg);
        let mut windows = 1;
        while (windows - 1) * cfg.window_stride + cfg.out_width < total {
            windows += 1;
        }
        let w = dsp::window_count(total, &cfg);
        ensure(w == windows, || format!("{total} frames: {w} windows by formula, {windows} enumerated"))?;
    }
    Ok(format!("round-trip worst {worst:.3} px; tone on bin 116 in every frame; 100 frame and window counts agree"))
}

// ---------------------------------------------------------------------------
// 6. Audacity parser

fn decimal(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    // Mix of short decimals as typed by annotators and full-precision values.
    let v = rng.gen_range(lo..hi);
    match rng.gen_range(0..3) {
        0 => (v * 100.0).round() / 100.0,
        1 => (v * 1e6).round() / 1e6,
        _ => v,
    }
}

fn audacity_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut regions = 0;
    while regions < 10_000 {
        let n = rng.gen_range(1..=20).min(10_000 - regions);
        let mut boxes: Vec<AnnotationBox> = (0..n)
            .map(|_| {
                let t = decimal(&mut rng, 0.0, 3600.0);
                let f = decimal(&mut rng, 0.0, 20000.0);
                AnnotationBox {
                    t_start: t,
                    t_end: t + 0.001 + decimal(&mut rng, 0.0, 5.0),
                    f_low: f,
                    f_high: f + 1.0 + decimal(&mut rng, 0.0, 5000.0),
                    species_id: 3,
                    source_file: "r.wav".into(),
                }
            })
            .collect();
        boxes.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        let text = serialize_audacity(&boxes, |_| "GrGr");
        let text = if rng.gen_bool(0.5) { text.replace('\n', "\r\n") } else { text };
        let back = parse_audacity_labels(&text, 3, "r.wav").map_err(|e| e.to_string())?;
        ensure(back == boxes, || "region set changed in the round trip".into())?;
        regions += n;
    }

    let parse = |t: &str| parse_audacity_labels(t, 0, "r.wav");
    let cases: [(&str, &str, fn(&Error) -> bool); 8] = [
        ("malformed start", "1.x\t2.0\tGrGr\n\\\t100\t200\n", |e| matches!(e, Error::Parse { line: 1, .. })),
        ("malformed frequency", "1.0\t2.0\tGrGr\n\\\t1oo\t200\n", |e| matches!(e, Error::Parse { line: 2, .. })),
        ("comma decimal", "1,5\t2.0\tGrGr\n\\\t100\t200\n", |e| matches!(e, Error::Parse { line: 1, .. })),
        ("missing end time", "1.0\n\\\t100\t200\n", |e| matches!(e, Error::Parse { line: 1, .. })),
        ("reversed time bounds", "2.0\t1.0\tX\n\\\t100\t200\n", |e| matches!(e, Error::Validation(_))),
        ("reversed frequency bounds", "1.0\t2.0\tX\n\\\t300\t200\n", |e| matches!(e, Error::Validation(_))),
        ("missing frequency line", "1.0\t2.0\tX\n3.0\t4.0\tX\n\\\t1\t2\n", |e| matches!(e, Error::Validation(_))),
        ("orphan frequency line", "\\\t100\t200\n", |e| matches!(e, Error::Validation(_))),
    ];
    for (name, text, want) in cases {
        match parse(text) {
            Err(e) if want(&e) => {}
            other => return Err(format!("{name}: got {other:?}")),
        }
    }

    // Layout-level classes: unknown species code and directory/label conflict.
    let vocab = SpeciesVocab::from_latin_names(&["Grus grus", "Turdus merula"]).expect("vocab");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let write_case = |sub: &str, label: &str| -> std::result::Result<PathBuf, String> {
        let root = dir.path().join(sub);
        let d = root.join("GrGr");
        std::fs::create_dir_all(&d).map_err(|e| e.to_string())?;
        let wave = callscope::audio::Waveform::new(vec![0.0; 8000], 8000);
        callscope::audio::write_wav(&d.join("a.wav"), &wave).map_err(|e| e.to_string())?;
        std::fs::write(d.join("a.txt"), format!("0.1\t0.2\t{label}\n\\\t100\t200\n")).map_err(|e| e.to_string())?;
        Ok(root)
    };
    let unknown = build_manifest_from_layout(&write_case("unknown", "ZzZz")?, &vocab, &LayoutOptions::default());
    ensure(matches!(unknown, Err(Error::UnknownSpecies(ref c)) if c == &["ZzZz".to_string()]), || format!("unknown code: {unknown:?}"))?;
    let conflict = build_manifest_from_layout(&write_case("conflict", "TuMe")?, &vocab, &LayoutOptions::default());
    ensure(matches!(conflict, Err(Error::Conflict { .. })), || format!("conflict: {conflict:?}"))?;
    Ok(format!("{regions} regions round-trip; 10 malformed classes raise their errors"))
}

// ---------------------------------------------------------------------------
// 7. Published corpus statistics (online)

const FORCED: [&str; 3] = ["IxMi", "AnPr", "NyNy"];

/// Directory holding species-code folders, searched breadth-first.
fn find_corpus_root(dir: &Path) -> Option<PathBuf> {
    let mut queue = vec![dir.to_path_buf()];
    while let Some(d) = queue.pop() {
        let subdirs: Vec<PathBuf> = std::fs::read_dir(&d).ok()?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        if d.join("manifest.json").is_file() || subdirs.iter().filter(|p| is_code(p)).count() >= 10 {
            return Some(d);
        }
        if let Some(s) = subdirs.iter().find(|p| ["train", "test"].iter().any(|n| p.ends_with(n))) {
            if std::fs::read_dir(s).ok()?.filter_map(|e| e.ok()).filter(|e| is_code(&e.path())).count() >= 10 {
                return Some(d);
            }
        }
        queue.extend(subdirs);
    }
    None
}

fn is_code(p: &Path) -> bool {
    let n: Vec<char> = p.file_name().and_then(|n| n.to_str()).unwrap_or("").chars().collect();
    n.len() == 4 && n[0].is_ascii_uppercase() && n[1].is_ascii_lowercase() && n[2].is_ascii_uppercase() && n[3].is_ascii_lowercase()
}

/// Species named only by their directory codes.
fn layout_vocab(root: &Path) -> SpeciesVocab {
    let mut codes = std::collections::BTreeSet::new();
    let mut dirs = vec![root.to_path_buf()];
    for split in ["train", "test"] {
        dirs.push(root.join(split));
    }
    for d in dirs {
        if let Ok(rd) = std::fs::read_dir(&d) {
            for e in rd.filter_map(|e| e.ok()) {
                if is_code(&e.path()) {
                    codes.insert(e.file_name().to_string_lossy().into_owned());
                }
            }
        }
    }
    SpeciesVocab {
        entries: codes.into_iter().enumerate().map(|(i, c)| SpeciesEntry { species_id: i, latin_name: c.clone(), short_code: c }).collect(),
    }
}

fn corpus_statistics() -> Verdict {
    let spec_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/dataset.json");
    let spec = match ArchiveSpec::load(&spec_path) {
        Ok(s) => s,
        Err(e) => return Verdict::Fail(format!("dataset config: {e}")),
    };
    let cache = std::env::var_os("CALLSCOPE_CACHE").map(PathBuf::from).unwrap_or_else(|| cache_dir().join("corpus"));
    let fetched = match fetch(&spec, &cache) {
        Ok(f) => f,
        Err(e @ Error::Network(_)) => return Verdict::Skip(format!("offline ({e})")),
        Err(e) => return Verdict::Fail(format!("fetch: {e}")),
    };
    let result = (|| -> Check {
        let root = find_corpus_root(&fetched.extracted_to).ok_or("no species-code layout in the archive")?;
        let manifest = if root.join("manifest.json").is_file() {
            DatasetManifest::load(&root.join("manifest.json")).map_err(|e| e.to_string())?
        } else {
            build_manifest_from_layout(&root, &layout_vocab(&root), &LayoutOptions::default()).map_err(|e| e.to_string())?
        };
        let s = compute_stats(&manifest);
        let text = format!("{} annotations, {} files, {} species, {:.2} h", s.annotations, s.recordings, s.species_present, s.total_hours());
        ensure(s.annotations == 13_359 && s.recordings == 2_077 && s.species_present == 117 && s.total_hours() >= 37.5, || text.clone())?;
        let forced: Vec<usize> = FORCED.iter().filter_map(|c| manifest.vocab.id_of_code(c)).collect();
        ensure(forced.len() == 3, || format!("{text}; forced species missing from the vocabulary"))?;
        let scope = filter_evaluation_scope(&manifest.split(Split::Train), &ScopeFilter { forced_includes: forced, ..Default::default() })
            .map_err(|e| e.to_string())?;
        ensure(scope.len() == 45, || format!("{text}; scope has {} species", scope.len()))?;
        Ok(format!("{text}; scope 45 species"))
    })();
    match result {
        Ok(t) => Verdict::Pass(t),
        Err(t) => Verdict::Fail(t),
    }
}

// ---------------------------------------------------------------------------
// 8. Determinism

fn tiny_synth() -> SynthConfig {
    SynthConfig { files_train: 3, files_test: 2, file_duration_s: 4.0, calls_per_file: 3, ..SynthConfig::default() }
}

fn read_tree(dir: &Path, ext: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable").map(|e| e.expect("entry").path()) {
            if e.is_dir() {
                stack.push(e);
            } else if e.extension().is_some_and(|x| x == ext) {
                out.insert(e.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&e).expect("readable"));
            }
        }
    }
    out
}

fn determinism() -> Check {
    let cfg = tiny_synth();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    write_corpus(&cfg, &a, false).map_err(|e| e.to_string())?;
    write_corpus(&cfg, &b, false).map_err(|e| e.to_string())?;
    let labels = read_tree(&a, "txt");
    ensure(!labels.is_empty() && labels == read_tree(&b, "txt"), || "label files differ".into())?;
    ensure(read_tree(&a, "wav") == read_tree(&b, "wav"), || "audio differs".into())?;

    let (manifest, waves) = synth_corpus_in_memory(&cfg).map_err(|e| e.to_string())?;
    let dsp_cfg = DspConfig::default();
    let train_split = manifest.split(Split::Train);
    let recs: Vec<(String, Vec<f64>, Vec<AnnotationBox>)> = manifest
        .recordings
        .iter()
        .zip(&waves)
        .filter(|(r, _)| r.split == Split::Train)
        .map(|(r, w)| (r.path.clone(), w.clone(), train_split.annotations_for(&r.path).cloned().collect()))
        .collect();
    let set = TrainingSet::from_memory(recs, &dsp_cfg).map_err(|e| e.to_string())?;
    let mut model = ModelConfig::toy(cfg.species.len());
    model.train.steps = 12;
    let trace = |jobs: usize| {
        par::with_jobs(jobs, || train(model.clone(), &set, |_, _| Ok(())))
            .map(|o| (o.log.iter().map(|r| (r.total.to_bits(), r.source_file.clone(), r.crop_x0)).collect::<Vec<_>>(), o.detector))
            .map_err(|e| e.to_string())
    };
    let (t1, det) = trace(0)?;
    let (t2, _) = trace(0)?;
    let (t3, _) = trace(1)?;
    ensure(t1 == t2, || "loss traces differ between runs".into())?;
    ensure(t1 == t3, || "loss trace differs with one worker thread".into())?;

    let inf = Inferencer::new(det, dsp_cfg, manifest.vocab.clone(), InferenceConfig { score_threshold: InferenceConfig::EVAL_FLOOR, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let csv = |jobs: usize, name: &str| -> std::result::Result<Vec<u8>, String> {
        let dets: Vec<_> = par::with_jobs(jobs, || {
            manifest.recordings.iter().zip(&waves).filter(|(r, _)| r.split == Split::Test).flat_map(|(r, w)| inf.detect_samples(w, &r.path)).collect()
        });
        let p = tmp.path().join(name);
        write_detections_csv(&p, &dets, &manifest.vocab).map_err(|e| e.to_string())?;
        std::fs::read(&p).map_err(|e| e.to_string())
    };
    let c1 = csv(0, "d1.csv")?;
    ensure(c1 == csv(0, "d2.csv")?, || "detection CSVs differ".into())?;
    ensure(c1 == csv(1, "d3.csv")?, || "detection CSV differs with one worker thread".into())?;
    Ok(format!("{} label files, {} loss values, {} CSV bytes identical", labels.len(), t1.len(), c1.len()))
}

// ---------------------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Check) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(t)) => Verdict::Pass(t),
        Ok(Err(t)) => Verdict::Fail(t),
        Err(p) => Verdict::Fail(format!(
            "panicked: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    }
}

fn main() {
    // Bare numbers select criteria; libtest flags such as --quiet are ignored.
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| only.is_empty() || only.contains(&n);
    let started = Instant::now();
    let mut verdicts: Vec<(u32, &str, Verdict)> = Vec::new();

    let runs: Vec<std::result::Result<SeedRun, String>> = if wanted(1) || wanted(3) {
        SEEDS
            .iter()
            .filter(|&&s| wanted(1) || s == 7)
            .map(|&s| catch_unwind(|| benchmark(s)).unwrap_or_else(|_| Err(format!("seed {s} panicked"))))
            .collect()
    } else {
        Vec::new()
    };
    let seed7 = runs.iter().find_map(|r| r.as_ref().ok().filter(|r| r.seed == 7));
    let criteria: [(u32, &str, Box<dyn FnOnce() -> Verdict + '_>); 8] = [
        (1, "synthetic end-to-end", Box::new(|| guarded(|| synthetic_end_to_end(&runs)))),
        (2, "gradient oracle", Box::new(|| guarded(gradient_oracle))),
        (3, "PE ablation and probe", Box::new(|| guarded(|| pe_ablation_and_probe(seed7)))),
        (4, "evaluation oracles", Box::new(|| guarded(eval_oracles))),
        (5, "DSP geometry", Box::new(|| guarded(dsp_geometry))),
        (6, "Audacity parser", Box::new(|| guarded(audacity_suite))),
        (7, "corpus statistics", Box::new(|| catch_unwind(corpus_statistics).unwrap_or_else(|_| Verdict::Fail("panicked".into())))),
        (8, "determinism", Box::new(|| guarded(determinism))),
    ];
    for (n, name, run) in criteria {
        if wanted(n) {
            verdicts.push((n, name, run()));
        }
    }

    let mut failed = 0;
    println!();
    for (n, name, v) in &verdicts {
        let (tag, text) = match v {
            Verdict::Pass(t) => ("PASS", t),
            Verdict::Fail(t) => {
                failed += 1;
                ("FAIL", t)
            }
            Verdict::Skip(t) => ("SKIP", t),
        };
        println!("{tag} [{n}] {name}: {text}");
    }
    println!("acceptance: {} criteria, {failed} failed, {:.0}s", verdicts.len(), started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
