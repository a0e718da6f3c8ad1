//! Manifest construction from an on-disk corpus.
//!
//! Layout: `<root>/[train|test/]<Dir>/<recording>.{wav,flac}` with an
//! optional sibling `<recording>.txt` Audacity label file. When `<Dir>` is a
//! species code it names the species of every region in the file; otherwise
//! each region label must be a species code. A `<root>/manifest.json`
//! replaces the scan entirely.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::audacity::parse_label_regions;
use super::vocab::looks_like_code;
use super::{AnnotationBox, DatasetManifest, Origin, RecordingMeta, Split, SpeciesVocab};
use crate::{audio, par, Error, Result};

#[derive(Clone, Debug)]
pub struct LayoutOptions {
    pub origin: Origin,
    pub version: String,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        Self {
            origin: Origin::NbmOrig,
            version: "unversioned".into(),
        }
    }
}

/// Loads `<root>/manifest.json` when present, otherwise scans the layout.
pub fn build_manifest(root: &Path, vocab: &SpeciesVocab) -> Result<DatasetManifest> {
    let file = root.join("manifest.json");
    if file.is_file() {
        let m = DatasetManifest::load(&file)?;
        if &m.vocab != vocab {
            return Err(Error::Config(format!(
                "{} was written with a different species vocabulary",
                file.display()
            )));
        }
        return Ok(m);
    }
    build_manifest_from_layout(root, vocab, &LayoutOptions::default())
}

fn is_audio(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav") || e.eq_ignore_ascii_case("flac"))
}

fn collect_audio(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_audio(&p, out)?;
        } else if is_audio(&p) {
            out.push(p);
        }
    }
    Ok(())
}

fn relative_id(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

struct Scanned {
    recording: RecordingMeta,
    annotations: Vec<AnnotationBox>,
    unknown: BTreeSet<String>,
}

fn scan_one(root: &Path, path: &Path, vocab: &SpeciesVocab, opts: &LayoutOptions) -> Result<Scanned> {
    let id = relative_id(root, path);
    let parts: Vec<&str> = id.split('/').collect();
    let split = match parts.first().map(|s| s.to_ascii_lowercase()) {
        Some(s) if s == "test" && parts.len() > 1 => Split::Test,
        _ => Split::Train,
    };
    let info = audio::probe(path)?;
    let recording = RecordingMeta {
        path: id.clone(),
        duration: info.duration(),
        sample_rate: info.sample_rate,
        origin: opts.origin,
        split,
    };
    let mut unknown = BTreeSet::new();
    let dir_name = if parts.len() >= 2 { Some(parts[parts.len() - 2]) } else { None };
    let dir_species = match dir_name {
        Some(d) if looks_like_code(d) => match vocab.id_of_code(d) {
            Some(s) => Some(s),
            None => {
                unknown.insert(d.to_string());
                None
            }
        },
        _ => None,
    };

    let label_path = path.with_extension("txt");
    let mut annotations = Vec::new();
    if label_path.is_file() {
        let text = std::fs::read_to_string(&label_path).map_err(|e| Error::io(&label_path, e))?;
        for r in parse_label_regions(&text)? {
            let label = r.label.trim();
            let species = if looks_like_code(label) {
                match (vocab.id_of_code(label), dir_species) {
                    (None, _) => {
                        unknown.insert(label.to_string());
                        continue;
                    }
                    (Some(l), Some(d)) if l != d => {
                        return Err(Error::Conflict {
                            directory: vocab.code(d).to_string(),
                            label: label.to_string(),
                            file: id.clone(),
                        })
                    }
                    (Some(l), _) => l,
                }
            } else if let Some(d) = dir_species {
                d
            } else {
                if dir_name.is_none_or(|d| !looks_like_code(d)) {
                    unknown.insert(if label.is_empty() { "<empty label>".into() } else { label.to_string() });
                }
                continue;
            };
            annotations.push(AnnotationBox {
                t_start: r.t_start,
                t_end: r.t_end,
                f_low: r.f_low,
                f_high: r.f_high,
                species_id: species,
                source_file: id.clone(),
            });
        }
    }
    Ok(Scanned { recording, annotations, unknown })
}

/// Scans the directory layout, ignoring any `manifest.json`. Recordings
/// without labels are kept as hard negatives.
pub fn build_manifest_from_layout(root: &Path, vocab: &SpeciesVocab, opts: &LayoutOptions) -> Result<DatasetManifest> {
    let mut files = Vec::new();
    collect_audio(root, &mut files)?;
    let scanned = par::map_slice(&files, |p| scan_one(root, p, vocab, opts));
    let mut recordings = Vec::new();
    let mut annotations = Vec::new();
    let mut unknown = BTreeSet::new();
    for s in scanned {
        let s = s?;
        recordings.push(s.recording);
        annotations.extend(s.annotations);
        unknown.extend(s.unknown);
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownSpecies(unknown.into_iter().collect()));
    }
    DatasetManifest::new(opts.version.clone(), recordings, annotations, vocab.clone())
}
