//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form, so saving and loading is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::charts::ChartAtlas;
use crate::datasets::DatasetMeta;
use crate::model::{BundleNet, PriorSpec};
use crate::train::TrainConfig;
use crate::{Error, Result};

pub const FORMAT: &str = "bundlenet-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: BundleNet,
    pub atlas: ChartAtlas,
    pub prior: PriorSpec,
    pub train_config: TrainConfig,
    pub dataset: DatasetMeta,
    /// Epochs actually run.
    pub epochs: usize,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(FORMAT) => {}
            Some(other) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported checkpoint format {other:?}, expected {FORMAT:?}"
                )))
            }
            None => return Err(Error::Checkpoint("missing format tag".into())),
        }
        let ckpt: Checkpoint = serde_json::from_value(value)?;
        ckpt.model.config.validate()?;
        if ckpt.atlas.len() != ckpt.prior.charts.len() {
            return Err(Error::Checkpoint(format!(
                "{} charts but {} priors",
                ckpt.atlas.len(),
                ckpt.prior.charts.len()
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
