use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Detector, ModelConfig};
use crate::dataset::SpeciesVocab;
use crate::dsp::DspConfig;
use crate::nn::optim::AdamW;
use crate::nn::ParamStore;
use crate::{Error, Result};

pub const CHECKPOINT_SCHEMA: &str = "callscope.checkpoint/1";

/// Source revision the library was built from.
pub const COMMIT: &str = env!("CALLSCOPE_COMMIT");

/// Self-describing weights file: everything needed to run or resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub commit: String,
    pub crate_version: String,
    /// Optimizer steps completed.
    pub step: usize,
    pub model: ModelConfig,
    pub dsp: DspConfig,
    /// Class `i + 1` of the head is `vocab.entries[i]`.
    pub vocab: SpeciesVocab,
    pub params: ParamStore,
    pub optimizer: Option<AdamW>,
}

impl Checkpoint {
    pub fn new(det: &Detector, dsp: &DspConfig, vocab: &SpeciesVocab, step: usize, optimizer: Option<&AdamW>) -> Result<Self> {
        if vocab.len() != det.cfg.num_classes {
            return Err(Error::Config(format!(
                "vocabulary of {} species for a {}-class model",
                vocab.len(),
                det.cfg.num_classes
            )));
        }
        Ok(Self {
            schema: CHECKPOINT_SCHEMA.into(),
            commit: COMMIT.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            step,
            model: det.cfg.clone(),
            dsp: dsp.clone(),
            vocab: vocab.clone(),
            params: det.params.clone(),
            optimizer: optimizer.cloned(),
        })
    }

    pub fn detector(&self) -> Result<Detector> {
        Detector::with_params(self.model.clone(), self.params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_slice(&bytes)?;
        if c.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Validation(format!("unsupported checkpoint schema {}", c.schema)));
        }
        c.model.validate()?;
        c.dsp.validate()?;
        c.vocab.validate()?;
        if c.vocab.len() != c.model.num_classes {
            return Err(Error::Config("checkpoint vocabulary does not match class count".into()));
        }
        Ok(c)
    }
}
