use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::language::{StopLists, Vocabulary};
use crate::params::{NamedTensor, ParamStore};

use super::{HyperConfig, ModelError, ModelParameters};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with everything needed to run it on new text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: HyperConfig,
    pub vocabulary: Vocabulary,
    pub stop_lists: StopLists,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(model: &ModelParameters, vocabulary: &Vocabulary, stop_lists: &StopLists) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            vocabulary: vocabulary.clone(),
            stop_lists: stop_lists.clone(),
            params: model.store.to_records(),
        }
    }

    /// Rebuilds the parameters, checking every shape against the config.
    pub fn model(&self) -> Result<ModelParameters, ModelError> {
        let store = ParamStore::from_records(self.params.clone())?;
        let model = ModelParameters {
            config: self.config.clone(),
            vocab_size: self.vocabulary.len(),
            store,
        };
        model.validate_shapes()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => return Err(ModelError::Checkpoint(format!("unsupported version {v}"))),
            None => return Err(ModelError::Checkpoint("missing version field".into())),
        }
        serde_json::from_value(value).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
