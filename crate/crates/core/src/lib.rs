//! Cross-modal relationship inference for grounding referring expressions.

pub mod cross_modal;
pub mod commands;
pub mod data_synth;
pub mod language;
pub mod model;
pub mod params;
pub mod scene_graph;
pub mod tensor;
pub mod training;
