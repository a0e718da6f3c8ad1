use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use callscope::dataset::fetch::{self, ArchiveSpec};
use callscope::dataset::{
    build_manifest_from_layout, compute_stats, filter_evaluation_scope, DatasetManifest, LayoutOptions, Origin,
    ScopeFilter, SpeciesScope, SpeciesVocab, Split,
};
use callscope::detector::train::Trainer;
use callscope::detector::{Checkpoint, Detector, TrainingSet};
use callscope::eval::{eval_detection, eval_multilabel, multilabel_predictions, multilabel_truth, render_report, EvalReport};
use callscope::inference::{read_detections, write_detections_csv, write_detections_jsonl, Detection, Inferencer};
use callscope::probe::{aggregate_probe, render_curve_svg, ProbeReport, PROBE_SCHEMA};
use callscope::{audio, dsp, par, synth, Error, Result};
use serde_json::{json, Map, Value};

use crate::config::{self, Config};
use crate::{Cli, Command, CACHE_ENV};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum OriginArg {
    NbmOrig,
    NbmXc,
    Synth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn select(self, m: &DatasetManifest) -> DatasetManifest {
        match self {
            SplitArg::Train => m.split(Split::Train),
            SplitArg::Test => m.split(Split::Test),
            SplitArg::All => m.clone(),
        }
    }
}

/// Run directory bookkeeping: `config.json` holds the effective config,
/// `summary.json` the command's machine-readable result. Neither carries
/// absolute paths or timestamps, so identical runs give identical bytes.
struct Run {
    dir: PathBuf,
    command: &'static str,
    summary: Map<String, Value>,
}

impl Run {
    fn open(dir: PathBuf, command: &'static str, cfg: &Config) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_text(&dir.join("config.json"), &cfg.to_json()?)?;
        Ok(Self { dir, command, summary: Map::new() })
    }

    fn config_digest(&self) -> Result<String> {
        fetch::sha256_file(&self.dir.join("config.json"))
    }

    fn set(&mut self, key: &str, value: impl serde::Serialize) -> Result<()> {
        self.summary.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    fn close(self) -> Result<()> {
        let doc = json!({
            "schema": "callscope.run/1",
            "command": self.command,
            "crate_version": env!("CARGO_PKG_VERSION"),
            "summary": Value::Object(self.summary),
        });
        write_text(&self.dir.join("summary.json"), &serde_json::to_string_pretty(&doc)?)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let mut overrides = g.overrides.clone();
    if let Some(s) = g.seed {
        overrides.push(format!("model.seed={s}"));
        overrides.push(format!("synth.seed={s}"));
    }
    if let Some(j) = g.jobs {
        overrides.push(format!("jobs={j}"));
    }
    let cfg = config::load(g.preset, g.config.as_deref(), &overrides)?;
    let run_dir = g.run_dir;
    par::with_jobs(cfg.jobs, move || dispatch(cli.command, cfg, run_dir))
}

fn dispatch(command: Command, cfg: Config, run_dir: Option<PathBuf>) -> Result<()> {
    let dir = |default: PathBuf| run_dir.clone().unwrap_or(default);
    match command {
        Command::Fetch { cache_dir } => {
            let cache = cache_dir.map(Ok).unwrap_or_else(default_cache_dir)?;
            cmd_fetch(&cfg, &cache, Run::open(dir(cache.clone()), "fetch", &cfg)?)
        }
        Command::Ingest { root, vocab, out, origin } => {
            cmd_ingest(&root, &vocab, &out, origin, Run::open(dir(parent_dir(&out)), "ingest", &cfg)?)
        }
        Command::Stats { data, vocab } => {
            cmd_stats(&cfg, &data, vocab.as_deref(), Run::open(dir(PathBuf::from("runs/stats")), "stats", &cfg)?)
        }
        Command::Synth { out, force } => cmd_synth(&cfg, &out, force, run_dir),
        Command::Train { data, vocab, out, resume, scoped } => {
            cmd_train(cfg, &data, vocab.as_deref(), &out, resume.as_deref(), scoped, run_dir)
        }
        Command::Detect { weights, input, out, split, threshold } => {
            let mut cfg = cfg;
            if let Some(t) = threshold {
                cfg.inference.score_threshold = t;
                cfg.inference.validate()?;
            }
            let run = Run::open(dir(parent_dir(&out)), "detect", &cfg)?;
            cmd_detect(&cfg, &weights, &input, &out, split, run)
        }
        Command::EvalDet { detections, data, vocab, split, out } => {
            let run = Run::open(dir(out.clone()), "eval-det", &cfg)?;
            cmd_eval(&cfg, &detections, &data, vocab.as_deref(), split, &out, false, run)
        }
        Command::EvalMl { detections, data, vocab, split, out } => {
            let run = Run::open(dir(out.clone()), "eval-ml", &cfg)?;
            cmd_eval(&cfg, &detections, &data, vocab.as_deref(), split, &out, true, run)
        }
        Command::Probe { weights, data, out } => {
            let run = Run::open(dir(out.clone()), "probe", &cfg)?;
            cmd_probe(&cfg, &weights, &data, &out, run)
        }
        Command::Report { inputs, out } => {
            let run = Run::open(dir(out.clone()), "report", &cfg)?;
            cmd_report(&inputs, &out, run)
        }
    }
}

fn default_cache_dir() -> Result<PathBuf> {
    if let Some(d) = std::env::var_os(CACHE_ENV).filter(|d| !d.is_empty()) {
        return Ok(PathBuf::from(d));
    }
    std::env::var_os("HOME")
        .map(|h| PathBuf::from(h).join(".cache").join("callscope"))
        .ok_or_else(|| Error::Config(format!("set {CACHE_ENV} or pass --cache-dir")))
}

/// `nbm-eval`, a JSON vocabulary (object or entry list), or a text file with
/// one latin name per line (`#` comments allowed).
fn load_vocab(spec: &str) -> Result<SpeciesVocab> {
    if spec == "nbm-eval" {
        return Ok(SpeciesVocab::nbm_eval_species());
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v = if path.extension().is_some_and(|e| e == "json") {
        let value: Value = serde_json::from_str(&text)?;
        let value = if value.is_array() { json!({ "entries": value }) } else { value };
        serde_json::from_value::<SpeciesVocab>(value)?
    } else {
        let names: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
        SpeciesVocab::from_latin_names(&names)?
    };
    v.validate()?;
    Ok(v)
}

/// Returns the manifest and the directory its recording paths are relative
/// to. `data` is a manifest file, a directory with `manifest.json`, or a
/// layout to scan (which needs `vocab`).
fn load_corpus(data: &Path, vocab: Option<&str>) -> Result<(DatasetManifest, PathBuf)> {
    let given = vocab.map(load_vocab).transpose()?;
    let (manifest, root) = if data.is_file() {
        (DatasetManifest::load(data)?, parent_dir(data))
    } else if data.join("manifest.json").is_file() {
        (DatasetManifest::load(&data.join("manifest.json"))?, data.to_path_buf())
    } else {
        let v = given
            .clone()
            .ok_or_else(|| Error::Config(format!("{} has no manifest.json; pass --vocab to scan it", data.display())))?;
        (build_manifest_from_layout(data, &v, &LayoutOptions::default())?, data.to_path_buf())
    };
    if let Some(v) = given {
        if v != manifest.vocab {
            return Err(Error::Config("--vocab differs from the manifest's vocabulary".into()));
        }
    }
    Ok((manifest, root))
}

fn resolve_scope(cfg: &Config, manifest: &DatasetManifest) -> Result<SpeciesScope> {
    if !cfg.scope.filter {
        return Ok(SpeciesScope::all(&manifest.vocab));
    }
    let v = &manifest.vocab;
    let mut forced = Vec::new();
    let mut unknown = Vec::new();
    for name in &cfg.scope.forced {
        match v.id_of_code(name).or_else(|| v.id_of_latin(name)) {
            Some(id) => forced.push(id),
            None => unknown.push(name.clone()),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownSpecies(unknown));
    }
    let filter = ScopeFilter {
        min_samples: cfg.scope.min_samples,
        min_files: cfg.scope.min_files,
        forced_includes: forced,
    };
    filter_evaluation_scope(&manifest.split(Split::Train), &filter)
}

/// Re-expresses `m` in `target`'s ids, matching species by code and
/// dropping annotations of species `target` lacks.
fn remap(m: &DatasetManifest, target: &SpeciesVocab) -> DatasetManifest {
    if &m.vocab == target {
        return m.clone();
    }
    let mut out = m.clone();
    out.annotations = m
        .annotations
        .iter()
        .filter_map(|a| {
            let id = target.id_of_code(m.vocab.code(a.species_id))?;
            Some(callscope::dataset::AnnotationBox { species_id: id, ..a.clone() })
        })
        .collect();
    out.vocab = target.clone();
    out
}

fn cmd_fetch(cfg: &Config, cache: &Path, mut run: Run) -> Result<()> {
    let spec = ArchiveSpec {
        record: cfg.dataset.record,
        file_name: cfg.dataset.file_name.clone(),
        sha256: cfg.dataset.sha256.clone(),
    };
    let outcome = fetch::fetch(&spec, cache)?;
    println!("archive   {}", outcome.archive.display());
    println!("extracted {}", outcome.extracted_to.display());
    println!("sha256    {}{}", outcome.sha256, if outcome.verified { "" } else { " (not pinned)" });
    run.set("sha256", &outcome.sha256)?;
    run.set("verified", outcome.verified)?;
    run.set("archive", file_name(&outcome.archive))?;
    run.set("extracted_to", file_name(&outcome.extracted_to))?;
    run.close()
}

fn cmd_ingest(root: &Path, vocab: &str, out: &Path, origin: OriginArg, mut run: Run) -> Result<()> {
    let v = load_vocab(vocab)?;
    let origin = match origin {
        OriginArg::NbmOrig => Origin::NbmOrig,
        OriginArg::NbmXc => Origin::NbmXc,
        OriginArg::Synth => Origin::Synth,
    };
    let m = build_manifest_from_layout(root, &v, &LayoutOptions { origin, ..Default::default() })?;
    m.save(out)?;
    println!("{} recordings, {} annotations -> {}", m.recordings.len(), m.annotations.len(), out.display());
    run.set("manifest", file_name(out))?;
    run.set("recordings", m.recordings.len())?;
    run.set("annotations", m.annotations.len())?;
    run.close()
}

fn cmd_stats(cfg: &Config, data: &Path, vocab: Option<&str>, mut run: Run) -> Result<()> {
    let (m, _) = load_corpus(data, vocab)?;
    let s = compute_stats(&m);
    println!("recordings        {}", s.recordings);
    println!("annotations       {}", s.annotations);
    println!("species           {}", s.species_present);
    println!("duration (h)      {:.2}", s.total_hours());
    for (split, n) in &s.recordings_per_split {
        println!("  {split:<15} {n} recordings");
    }
    println!("species >= 100 annotations: {}", s.species_with_annotations(100));
    println!("species in >= 10 files:     {}", s.species_in_files(10));
    // The threshold filter always runs here so the scope size is reported
    // even when evaluation would score every species.
    let scoped = Config { scope: config::ScopeSettings { filter: true, ..cfg.scope.clone() }, ..cfg.clone() };
    let scope = resolve_scope(&scoped, &m)?;
    println!(
        "evaluation scope  {} species (>= {} train annotations, >= {} train files, {} forced)",
        scope.len(),
        cfg.scope.min_samples,
        cfg.scope.min_files,
        cfg.scope.forced.len()
    );
    write_text(&run.dir.join("stats.json"), &serde_json::to_string_pretty(&s)?)?;
    run.set("recordings", s.recordings)?;
    run.set("annotations", s.annotations)?;
    run.set("species", s.species_present)?;
    run.set("total_hours", s.total_hours())?;
    run.set("scope", scope.species.iter().map(|e| e.short_code.clone()).collect::<Vec<_>>())?;
    run.close()
}

fn cmd_synth(cfg: &Config, out: &Path, force: bool, run_dir: Option<PathBuf>) -> Result<()> {
    let m = synth::write_corpus(&cfg.synth, out, force)?;
    let mut run = Run::open(run_dir.unwrap_or_else(|| out.to_path_buf()), "synth", cfg)?;
    println!("{} recordings, {} annotations -> {}", m.recordings.len(), m.annotations.len(), out.display());
    run.set("recordings", m.recordings.len())?;
    run.set("annotations", m.annotations.len())?;
    run.set("species", m.vocab.entries.iter().map(|e| e.short_code.clone()).collect::<Vec<_>>())?;
    run.close()
}

fn cmd_train(
    mut cfg: Config,
    data: &Path,
    vocab: Option<&str>,
    out: &Path,
    resume: Option<&Path>,
    scoped: bool,
    run_dir: Option<PathBuf>,
) -> Result<()> {
    let (manifest, root) = load_corpus(data, vocab)?;
    let (vocab, ids) = if scoped {
        resolve_scope(&Config { scope: config::ScopeSettings { filter: true, ..cfg.scope.clone() }, ..cfg.clone() }, &manifest)?
            .to_vocab(&manifest.vocab)
    } else {
        (manifest.vocab.clone(), (0..manifest.vocab.len()).collect())
    };
    if vocab.is_empty() {
        return Err(Error::Validation("no species to train on".into()));
    }
    cfg.model.num_classes = vocab.len();
    cfg.model.validate()?;
    let mut run = Run::open(run_dir.unwrap_or_else(|| out.to_path_buf()), "train", &cfg)?;

    let set = TrainingSet::from_manifest(&manifest, &root, &cfg.dsp, |id| ids.iter().position(|&o| o == id))?;
    log::info!("{} training windows, {} annotations", set.window_count(), set.annotation_count());
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let mut expected = cfg.model.clone();
            expected.train.steps = ck.model.train.steps;
            if ck.model != expected || ck.dsp != cfg.dsp || ck.vocab != vocab {
                return Err(Error::Config(format!("{} was trained with a different configuration", p.display())));
            }
            let opt = ck
                .optimizer
                .clone()
                .ok_or_else(|| Error::Config(format!("{} holds no optimizer state", p.display())))?;
            Trainer::resume(Detector::with_params(cfg.model.clone(), ck.params.clone())?, opt, ck.step, &set)
        }
        None => Trainer::new(cfg.model.clone(), &set)?,
    };

    let log_path = out.join("train_log.jsonl");
    let mut log_file = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let t = cfg.model.train.clone();
    let mut last = None;
    while !trainer.finished() {
        let rec = trainer.step()?;
        if t.log_every > 0 && (rec.step % t.log_every == 0 || trainer.finished()) {
            writeln!(log_file, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&log_path, e))?;
        }
        if t.checkpoint_every > 0 && trainer.step % t.checkpoint_every == 0 && !trainer.finished() {
            Checkpoint::new(&trainer.detector, &cfg.dsp, &vocab, trainer.step, Some(&trainer.optimizer))?
                .save(&out.join(format!("checkpoint-{:06}.json", trainer.step)))?;
        }
        last = Some(rec);
    }
    let ck = Checkpoint::new(&trainer.detector, &cfg.dsp, &vocab, trainer.step, Some(&trainer.optimizer))?;
    ck.save(&out.join("checkpoint.json"))?;
    if let Some(r) = &last {
        println!("step {} loss {:.4} ({:.1} s)", trainer.step, r.total, r.wall_time);
        run.set("final_loss", r.total)?;
    }
    run.set("steps", trainer.step)?;
    run.set("species", vocab.entries.iter().map(|e| e.short_code.clone()).collect::<Vec<_>>())?;
    run.set("checkpoint", "checkpoint.json")?;
    run.set("params_digest", ck.params.digest())?;
    run.close()
}

fn collect_audio(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_audio(&p, out)?;
        } else if p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav") || e.eq_ignore_ascii_case("flac"))
        {
            out.push(p);
        }
    }
    Ok(())
}

fn relative_id(path: &Path, root: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

fn cmd_detect(cfg: &Config, weights: &Path, input: &Path, out: &Path, split: Option<SplitArg>, mut run: Run) -> Result<()> {
    let ck = Checkpoint::load(weights)?;
    let inf = Inferencer::from_checkpoint(&ck, cfg.inference.clone())?;
    let files: Vec<(PathBuf, String)> = if input.is_file() {
        vec![(input.to_path_buf(), file_name(input))]
    } else if let Some(s) = split {
        let (m, root) = if input.join("manifest.json").is_file() {
            load_corpus(input, None)?
        } else {
            (build_manifest_from_layout(input, &ck.vocab, &LayoutOptions::default())?, input.to_path_buf())
        };
        s.select(&m).recordings.iter().map(|r| (root.join(&r.path), r.path.clone())).collect()
    } else {
        let mut paths = Vec::new();
        collect_audio(input, &mut paths)?;
        paths.into_iter().map(|p| { let id = relative_id(&p, input); (p, id) }).collect()
    };
    let mut dets: Vec<Detection> = Vec::new();
    for (p, id) in &files {
        dets.extend(inf.detect_path(p, id)?);
    }
    if out.extension().is_some_and(|e| e == "jsonl") {
        write_detections_jsonl(out, &dets, &ck.vocab)?;
    } else {
        write_detections_csv(out, &dets, &ck.vocab)?;
    }
    println!("{} detections in {} files -> {}", dets.len(), files.len(), out.display());
    run.set("files", files.len())?;
    run.set("detections", dets.len())?;
    run.set("output", file_name(out))?;
    run.set("weights_digest", ck.params.digest())?;
    run.close()
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cfg: &Config,
    detections: &Path,
    data: &Path,
    vocab: Option<&str>,
    split: SplitArg,
    out: &Path,
    multilabel: bool,
    mut run: Run,
) -> Result<()> {
    let (manifest, _) = load_corpus(data, vocab)?;
    let truth = split.select(&manifest);
    let all = read_detections(detections, &manifest.vocab)?;
    let mut unknown: Vec<String> = all.iter().filter(|d| manifest.recording(&d.file).is_none()).map(|d| d.file.clone()).collect();
    unknown.sort();
    unknown.dedup();
    if !unknown.is_empty() {
        return Err(Error::Validation(format!("detections for files absent from the manifest: {}", unknown.join(", "))));
    }
    let dets: Vec<Detection> = all.into_iter().filter(|d| truth.recording(&d.file).is_some()).collect();
    let scope = resolve_scope(cfg, &manifest)?;
    let step = cfg.inference.multilabel_window_s;
    let mut report = EvalReport::new(
        scope.species.iter().map(|e| e.short_code.clone()).collect(),
        cfg.eval.iou_threshold,
        step,
        run.config_digest()?,
    );
    let section = if multilabel {
        let pred = multilabel_predictions(&dets, &truth, step)?;
        eval_multilabel(&pred, &multilabel_truth(&truth, step), &scope)?
    } else {
        eval_detection(&dets, &truth, &scope, cfg.eval.iou_threshold)?
    };
    let map = section.map;
    if multilabel {
        report.multilabel = Some(section);
    } else {
        report.detection = Some(section);
    }
    let written = render_report(&report, out)?;
    let label = if multilabel { "multi-label mAP" } else { "detection mAP" };
    match map {
        Some(v) => println!("{label} {v:.4} over {} species", scope.len()),
        None => println!("{label} undefined: no species in scope has test positives"),
    }
    run.set("map", map)?;
    run.set("scope", scope.len())?;
    run.set("outputs", written.iter().map(|p| file_name(p)).collect::<Vec<_>>())?;
    run.close()
}

fn cmd_probe(cfg: &Config, weights: &Path, data: &Path, out: &Path, mut run: Run) -> Result<()> {
    let ck = Checkpoint::load(weights)?;
    let det = ck.detector()?;
    let (manifest, root) = load_corpus(data, None)?;
    let manifest = remap(&manifest, &ck.vocab);
    let scope = resolve_scope(cfg, &manifest)?;
    let samples_of = |p: &str| -> Result<Vec<f64>> {
        let w = audio::read(&root.join(p))?;
        Ok(dsp::resample_waveform(&w, &ck.dsp)?.samples)
    };
    let report = aggregate_probe(
        &det,
        &ck.dsp,
        &manifest.split(Split::Train),
        &manifest.split(Split::Test),
        &scope,
        cfg.eval.grid_points,
        samples_of,
    )?;
    let mut written = vec![write_probe(&report, out)?];
    written.extend(write_probe_plots(&report, out)?);
    for c in &report.curves {
        let offset = c.peak_offset_bins.map(|b| b.to_string()).unwrap_or_else(|| "-".into());
        println!("{:<6} peak {:>8.1} Hz  offset {offset} bins  ({} calls)", c.code, c.peak_hz(), c.calls);
    }
    run.set("species", report.curves.len())?;
    run.set("skipped", &report.skipped)?;
    run.set("outputs", written.iter().map(|p| file_name(p)).collect::<Vec<_>>())?;
    run.close()
}

fn write_probe(report: &ProbeReport, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("probe.json");
    write_text(&p, &serde_json::to_string_pretty(report)?)?;
    Ok(p)
}

fn write_probe_plots(report: &ProbeReport, dir: &Path) -> Result<Vec<PathBuf>> {
    report
        .curves
        .iter()
        .map(|c| {
            let p = dir.join(format!("probe_{}.svg", c.code));
            write_text(&p, &render_curve_svg(c))?;
            Ok(p)
        })
        .collect()
}

enum Input {
    Eval(EvalReport),
    Probe(ProbeReport),
}

fn read_input(path: &Path) -> Result<Vec<Input>> {
    if path.is_dir() {
        let mut found = Vec::new();
        for name in ["report.json", "probe.json"] {
            let p = path.join(name);
            if p.is_file() {
                found.extend(read_input(&p)?);
            }
        }
        if found.is_empty() {
            return Err(Error::Validation(format!("{} holds neither report.json nor probe.json", path.display())));
        }
        return Ok(found);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Value = serde_json::from_str(&text)?;
    match v.get("schema").and_then(Value::as_str) {
        Some(s) if s == PROBE_SCHEMA => Ok(vec![Input::Probe(serde_json::from_value(v)?)]),
        Some(_) => Ok(vec![Input::Eval(EvalReport::from_json(&text)?)]),
        None => Err(Error::Validation(format!("{}: no schema field", path.display()))),
    }
}

fn cmd_report(inputs: &[PathBuf], out: &Path, mut run: Run) -> Result<()> {
    let mut merged: Option<EvalReport> = None;
    let mut probe: Option<ProbeReport> = None;
    for p in inputs {
        for item in read_input(p)? {
            match item {
                Input::Probe(r) => probe = Some(r),
                Input::Eval(r) => match &mut merged {
                    None => merged = Some(r),
                    Some(m) => {
                        if m.scope != r.scope || m.iou_threshold != r.iou_threshold {
                            m.notes.push(format!("{} was scored with a different scope or IoU threshold", p.display()));
                        }
                        m.detection = r.detection.or(m.detection.take());
                        m.multilabel = r.multilabel.or(m.multilabel.take());
                    }
                },
            }
        }
    }
    let mut written = Vec::new();
    if let Some(r) = &merged {
        written.extend(render_report(r, out)?);
    }
    if let Some(pr) = &probe {
        written.push(write_probe(pr, out)?);
        written.extend(write_probe_plots(pr, out)?);
        let md = out.join("report.md");
        let mut text = if md.is_file() { fs::read_to_string(&md).map_err(|e| Error::io(&md, e))? } else { String::new() };
        text.push_str("\n## Frequency probe\n\n| Species | Calls | Peak (Hz) | Offset from training mode (bins) |\n|---|---|---|---|\n");
        for c in &pr.curves {
            let offset = c.peak_offset_bins.map(|b| b.to_string()).unwrap_or_else(|| "-".into());
            text.push_str(&format!("| {} | {} | {:.1} | {} |\n", c.code, c.calls, c.peak_hz(), offset));
        }
        write_text(&md, &text)?;
        if !written.contains(&md) {
            written.push(md);
        }
    }
    println!("{} files -> {}", written.len(), out.display());
    run.set("outputs", written.iter().map(|p| file_name(p)).collect::<Vec<_>>())?;
    run.close()
}
