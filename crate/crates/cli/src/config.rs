//! Layered run configuration: built-in defaults, then an optional JSON file,
//! then `--set key=value` overrides. Only the merged result is ever written.

use std::path::Path;

use callscope::dataset::ScopeFilter;
use callscope::detector::ModelConfig;
use callscope::dsp::DspConfig;
use callscope::inference::InferenceConfig;
use callscope::synth::SynthConfig;
use callscope::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Small,
    Full,
    Toy,
}

/// Evaluation scope. `filter = false` scores every species that has test
/// annotations or predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScopeSettings {
    pub filter: bool,
    pub min_samples: usize,
    pub min_files: usize,
    /// Codes or latin names kept regardless of the thresholds.
    pub forced: Vec<String>,
}

impl Default for ScopeSettings {
    fn default() -> Self {
        let f = ScopeFilter::default();
        Self {
            filter: false,
            min_samples: f.min_samples,
            min_files: f.min_files,
            forced: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub iou_threshold: f64,
    pub grid_points: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            grid_points: callscope::probe::DEFAULT_GRID_POINTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSettings {
    pub record: u64,
    pub file_name: String,
    pub sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Worker threads for data-parallel stages; 0 lets rayon decide.
    pub jobs: usize,
    pub dsp: DspConfig,
    pub model: ModelConfig,
    pub inference: InferenceConfig,
    pub synth: SynthConfig,
    pub scope: ScopeSettings,
    pub eval: EvalSettings,
    pub dataset: DatasetSettings,
}

const PINNED_DATASET: &str = include_str!("../../../config/dataset.json");

impl Config {
    pub fn defaults(preset: Preset) -> Self {
        let dataset: DatasetSettings = serde_json::from_str(PINNED_DATASET).expect("config/dataset.json is valid");
        // num_classes is replaced by the vocabulary size when training.
        let model = match preset {
            Preset::Small => ModelConfig::small(1),
            Preset::Full => ModelConfig::full(1),
            Preset::Toy => ModelConfig::toy(1),
        };
        Self {
            jobs: 0,
            dsp: DspConfig::default(),
            model,
            inference: InferenceConfig::default(),
            synth: SynthConfig::default(),
            scope: ScopeSettings::default(),
            eval: EvalSettings::default(),
            dataset,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.model.validate()?;
        self.inference.validate()?;
        self.synth.validate()?;
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0) {
            return Err(Error::Config("eval.iou_threshold must lie in (0, 1]".into()));
        }
        if self.eval.grid_points < 2 {
            return Err(Error::Config("eval.grid_points must be at least 2".into()));
        }
        if self.scope.min_samples == 0 || self.scope.min_files == 0 {
            return Err(Error::Config("scope thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// Recursively overlays `top` onto `base`. Objects merge key by key; any
/// other value replaces. Keys absent from `base` are kept so that
/// deserialization can reject them by name.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `a.b.c=value`. The value is read as JSON when it parses as JSON,
/// otherwise as a bare string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} has an empty segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(root: &mut Value, path: &[String], value: Value) -> Result<()> {
    let mut node = root;
    for (i, seg) in path.iter().enumerate() {
        let unknown = || Error::Config(format!("unknown configuration key {}", path[..=i].join(".")));
        node = match node {
            Value::Object(obj) => obj.get_mut(seg).ok_or_else(unknown)?,
            Value::Array(items) => seg.parse::<usize>().ok().and_then(|k| items.get_mut(k)).ok_or_else(unknown)?,
            _ => return Err(Error::Config(format!("{} is not a section", path[..i].join(".")))),
        };
    }
    *node = value;
    Ok(())
}

/// Defaults, then `file`, then `overrides` in order.
pub fn load(preset: Preset, file: Option<&Path>, overrides: &[String]) -> Result<Config> {
    let mut v = serde_json::to_value(Config::defaults(preset))?;
    if let Some(p) = file {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let layer: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        if !layer.is_object() {
            return Err(Error::Config(format!("{}: top level must be an object", p.display())));
        }
        merge(&mut v, layer);
    }
    for o in overrides {
        let (path, value) = parse_override(o)?;
        apply_override(&mut v, &path, value)?;
    }
    let cfg: Config = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
