//! Model checkpoint: classifier, cluster bank and normalization constants
//! in versioned JSON. Floats are written in shortest round-trip form, so a
//! load reproduces the saved values exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierParams, ClusterBank, Hyperparams, PricingError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub hyper: Hyperparams,
    pub classifier: ClassifierParams<f64>,
    pub bank: ClusterBank<f64>,
    pub loss_trace: Vec<f64>,
    pub config_fingerprint: String,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), PricingError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| PricingError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| PricingError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PricingError> {
        let text = std::fs::read_to_string(path).map_err(|e| PricingError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| PricingError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(PricingError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        ck.classifier.validate()?;
        if ck.bank.k() != ck.classifier.k {
            return Err(PricingError::Checkpoint("bank and classifier disagree on k".into()));
        }
        Ok(ck)
    }
}
