//! Annotated-corpus ingestion: species vocabulary, Audacity label parsing,
//! manifest construction, corpus statistics and evaluation-scope filtering.

mod audacity;
pub mod fetch;
mod manifest;
mod stats;
mod vocab;

pub use audacity::{parse_audacity_labels, parse_label_regions, serialize_audacity, LabelRegion};
pub use manifest::{build_manifest, build_manifest_from_layout, LayoutOptions};
pub use stats::{compute_stats, filter_evaluation_scope, CorpusStats, ScopeFilter, SpeciesScope, SpeciesStats};
pub use vocab::{short_code, SpeciesEntry, SpeciesVocab};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MANIFEST_SCHEMA: &str = "callscope.manifest/1";

/// One vocalization localized in seconds x Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBox {
    pub t_start: f64,
    pub t_end: f64,
    pub f_low: f64,
    pub f_high: f64,
    pub species_id: usize,
    pub source_file: String,
}

impl AnnotationBox {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.t_start, self.t_end, self.f_low, self.f_high]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation(format!("non-finite bounds in {self:?}")));
        }
        if self.t_start < 0.0 || self.t_start >= self.t_end {
            return Err(Error::Validation(format!(
                "time bounds [{}, {}] not increasing from >= 0",
                self.t_start, self.t_end
            )));
        }
        if self.f_low < 0.0 || self.f_low >= self.f_high {
            return Err(Error::Validation(format!(
                "frequency bounds [{}, {}] not increasing from >= 0",
                self.f_low, self.f_high
            )));
        }
        Ok(())
    }

    pub fn center_frequency(&self) -> f64 {
        0.5 * (self.f_low + self.f_high)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    NbmOrig,
    NbmXc,
    Synth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    /// Path relative to the dataset root, `/`-separated. Doubles as the
    /// recording identifier referenced by annotations.
    pub path: String,
    pub duration: f64,
    pub sample_rate: u32,
    pub origin: Origin,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub version: String,
    pub recordings: Vec<RecordingMeta>,
    pub annotations: Vec<AnnotationBox>,
    pub vocab: SpeciesVocab,
}

/// Slack allowed when comparing annotation ends against header durations.
const DURATION_SLACK: f64 = 1e-6;

impl DatasetManifest {
    pub fn new(
        version: impl Into<String>,
        recordings: Vec<RecordingMeta>,
        annotations: Vec<AnnotationBox>,
        vocab: SpeciesVocab,
    ) -> Result<Self> {
        let m = Self {
            schema: MANIFEST_SCHEMA.to_string(),
            version: version.into(),
            recordings,
            annotations,
            vocab,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != MANIFEST_SCHEMA {
            return Err(Error::Validation(format!(
                "unsupported manifest schema {:?}",
                self.schema
            )));
        }
        self.vocab.validate()?;
        let mut by_path = std::collections::HashMap::new();
        for r in &self.recordings {
            if !(r.duration > 0.0) || r.sample_rate == 0 {
                return Err(Error::Validation(format!(
                    "recording {} has non-positive duration or rate",
                    r.path
                )));
            }
            if by_path.insert(r.path.as_str(), r).is_some() {
                return Err(Error::Validation(format!("duplicate recording {}", r.path)));
            }
        }
        for a in &self.annotations {
            a.validate()?;
            if a.species_id >= self.vocab.len() {
                return Err(Error::Validation(format!(
                    "species id {} outside vocabulary of {}",
                    a.species_id,
                    self.vocab.len()
                )));
            }
            let rec = by_path.get(a.source_file.as_str()).ok_or_else(|| {
                Error::Validation(format!("annotation source {} has no recording", a.source_file))
            })?;
            if a.t_end > rec.duration + DURATION_SLACK {
                return Err(Error::Validation(format!(
                    "annotation ends at {} beyond {} ({} s)",
                    a.t_end, rec.path, rec.duration
                )));
            }
        }
        Ok(())
    }

    pub fn recording(&self, path: &str) -> Option<&RecordingMeta> {
        self.recordings.iter().find(|r| r.path == path)
    }

    pub fn annotations_for<'a>(&'a self, path: &'a str) -> impl Iterator<Item = &'a AnnotationBox> + 'a {
        self.annotations.iter().filter(move |a| a.source_file == path)
    }

    /// The subset of recordings (and their annotations) in `split`.
    pub fn split(&self, split: Split) -> DatasetManifest {
        let recordings: Vec<_> = self
            .recordings
            .iter()
            .filter(|r| r.split == split)
            .cloned()
            .collect();
        let keep: std::collections::HashSet<&str> = recordings.iter().map(|r| r.path.as_str()).collect();
        let annotations = self
            .annotations
            .iter()
            .filter(|a| keep.contains(a.source_file.as_str()))
            .cloned()
            .collect();
        DatasetManifest {
            schema: self.schema.clone(),
            version: self.version.clone(),
            recordings,
            annotations,
            vocab: self.vocab.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}
