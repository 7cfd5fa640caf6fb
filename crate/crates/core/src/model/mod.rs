//! Multimodal fusion, gated graph convolution, scoring and checkpoints.

mod checkpoint;
mod config;
mod forward;
mod ggcn;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{Branch, EdgeMode, HyperConfig, ModelParameters};
pub use forward::{
    final_context, forward, forward_on_tape, fuse_multimodal, matching_scores, BranchDiagnostics, ForwardPass,
    ModelInput, Prediction,
};
pub use ggcn::{edge_operators, ggcn_layer, EdgeBiasParams, EdgeOperators, LayerParams};

pub(crate) use config::BranchKind;

use thiserror::Error;

use crate::language::LanguageError;
use crate::scene_graph::SceneError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("proposal {index} has a {got}-wide feature, model expects {expected}")]
    FeatureWidth { index: usize, expected: usize, got: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Language(#[from] LanguageError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Tensor(TensorError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::DegenerateNorm { norm } => {
                ModelError::Degenerate(format!("projected vector has norm {norm:e}; cannot normalize"))
            }
            other => ModelError::Tensor(other),
        }
    }
}
