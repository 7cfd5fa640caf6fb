use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_synth::GeneratorConfig;
use crate::language::StopLists;
use crate::model::{Branch, HyperConfig};
use crate::scene_graph::GraphVariantConfig;
use crate::training::{LossKind, Mining, TrainConfig};

use super::CommandError;

/// Everything a run depends on. Loaded from JSON, then adjusted by
/// command-line [`Overrides`] and validated as a whole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces the model, generator and training seeds.
    pub seed: Option<u64>,
    pub model: HyperConfig,
    pub generator: GeneratorConfig,
    pub training: TrainConfig,
    pub stop_lists: StopLists,
    /// Tokens must occur more often than this in the training split.
    pub vocab_min_count: usize,
    pub data_dir: PathBuf,
    pub runs_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            model: HyperConfig::default(),
            generator: GeneratorConfig::default(),
            training: TrainConfig::desk_scale(),
            stop_lists: StopLists::default(),
            vocab_min_count: crate::language::MIN_OCCURRENCES,
            data_dir: PathBuf::from("data"),
            runs_dir: PathBuf::from("runs"),
        }
    }
}

/// Command-line adjustments; `None` keeps the configured value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub layers: Option<usize>,
    pub graph: Option<String>,
    pub branch: Option<String>,
    pub loss: Option<String>,
    pub mining: Option<String>,
    pub negatives: Option<usize>,
    pub margin: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub data_dir: Option<PathBuf>,
    pub runs_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Reads `path`, or starts from the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CommandError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CommandError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| CommandError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CommandError> {
        let bad = |what: &str, v: &str| CommandError::Config(format!("unknown {what} {v:?}"));
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(n) = o.layers {
            self.model.layers = n;
        }
        if let Some(g) = &o.graph {
            self.model.graph = GraphVariantConfig::parse(g).map_err(|e| CommandError::Config(e.to_string()))?;
        }
        if let Some(b) = &o.branch {
            self.model.branch = Branch::parse(b).ok_or_else(|| bad("branch", b))?;
        }
        if let Some(l) = &o.loss {
            self.training.loss.kind = match l.as_str() {
                "triplet" => LossKind::Triplet,
                "softmax" => LossKind::Softmax,
                _ => return Err(bad("loss", l)),
            };
        }
        if let Some(m) = &o.mining {
            self.training.loss.mining = Mining::parse(m).ok_or_else(|| bad("mining strategy", m))?;
        }
        if let Some(n) = o.negatives {
            self.training.loss.negatives = n;
        }
        if let Some(m) = o.margin {
            self.training.loss.margin = m;
        }
        if let Some(e) = o.epochs {
            self.training.epochs = e;
        }
        if let Some(b) = o.batch_size {
            self.training.batch_size = b;
        }
        if let Some(lr) = o.lr {
            self.training.lr = lr;
            self.training.lr_decayed = self.training.lr_decayed.min(lr);
        }
        if let Some(d) = &o.data_dir {
            self.data_dir = d.clone();
        }
        if let Some(d) = &o.runs_dir {
            self.runs_dir = d.clone();
        }
        Ok(())
    }

    /// Pushes the global seed into every component.
    pub fn resolve_seeds(&mut self) {
        if let Some(s) = self.seed {
            self.model.seed = s;
            self.generator.seed = s;
            self.training.seed = s;
        }
    }

    pub fn validate(&self) -> Result<(), CommandError> {
        self.model.validate()?;
        self.generator.validate()?;
        self.training.validate()?;
        if self.generator.d_x != self.model.d_x {
            return Err(CommandError::Config(format!(
                "generator d_x {} differs from model d_x {}",
                self.generator.d_x, self.model.d_x
            )));
        }
        Ok(())
    }

    /// Load, override, seed and validate in one step.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CommandError> {
        let mut cfg = RunConfig::load(path)?;
        cfg.apply(overrides)?;
        cfg.resolve_seeds();
        cfg.validate()?;
        Ok(cfg)
    }
}
