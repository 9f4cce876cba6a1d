//! JSON checkpoints carrying architecture, parameters and optimiser/RNG state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::train::{ModelKind, Trainer};

const FORMAT: &str = "iaa-learn-checkpoint/1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub kind: ModelKind,
    /// The network chosen by model selection.
    pub network: Network,
    pub best_epoch: usize,
    /// Final training state, enough to resume.
    pub trainer: Option<Trainer>,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, network: Network, best_epoch: usize, trainer: Option<Trainer>) -> Self {
        Self {
            format: FORMAT.to_string(),
            kind,
            network,
            best_epoch,
            trainer,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, json).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {:?}", ck.format)));
        }
        Ok(ck)
    }
}
