//! The operations behind the command-line tool, as plain library calls.
//!
//! Each command takes explicit paths and returns a serializable summary;
//! the binary only parses flags and prints.

mod config;
mod gradcheck;
mod render;

pub use config::{Overrides, RunConfig};
pub use gradcheck::{
    cmd_gradcheck, gradcheck_fixture, GradcheckSummary, GroupCheck, WorstCoordinate, GRADCHECK_EPSILON,
    GRADCHECK_TOLERANCE,
};
pub use render::render_heatmap;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_synth::{
    generate_splits, read_dataset_file, resolve_sample, write_dataset_file, DataError, Dataset, Sample, SynthError,
};
use crate::language::{build_vocabulary_with, parse_bracketed_tree, tokenize, LanguageError, StopLists, Vocabulary};
use crate::model::{forward, Checkpoint, ModelError, ModelInput, ModelParameters, Prediction};
use crate::scene_graph::{Proposal, SceneError, SemanticDetection};
use crate::tensor::GradCheckError;
use crate::training::{evaluate, train, EvalReport, Example, TrainError};

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Dataset {
        path: PathBuf,
        #[source]
        source: DataError,
    },
    #[error("{0}")]
    Mismatch(String),
    #[error("generated sample {index} does not resolve to its ground truth")]
    Unresolved { index: usize },
    #[error("index {index} out of range for {len} samples")]
    Index { index: usize, len: usize },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Language(#[from] LanguageError),
    #[error(transparent)]
    GradCheck(#[from] GradCheckError),
}

impl CommandError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CommandError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<crate::language::TreeError> for CommandError {
    fn from(e: crate::language::TreeError) -> Self {
        CommandError::Language(e.into())
    }
}

impl From<crate::tensor::TensorError> for CommandError {
    fn from(e: crate::tensor::TensorError) -> Self {
        CommandError::Model(e.into())
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CommandError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| CommandError::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenDataManifest {
    pub counts: [usize; 3],
    pub files: Vec<String>,
    pub generator: crate::data_synth::GeneratorConfig,
}

/// Generates the three splits into `out_dir`, after checking every sample
/// against the symbolic resolver.
pub fn cmd_gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<GenDataManifest, CommandError> {
    let g = &cfg.generator;
    g.validate()?;
    let splits = generate_splits(g)?;
    let mut offset = 0;
    for split in &splits {
        for (i, s) in split.iter().enumerate() {
            if resolve_sample(s, g) != Some(s.gt_index) {
                return Err(CommandError::Unresolved { index: offset + i });
            }
        }
        offset += split.len();
    }
    fs::create_dir_all(out_dir).map_err(|e| CommandError::io(out_dir, e))?;
    let mut files = Vec::new();
    for (name, samples) in SPLIT_NAMES.iter().zip(splits.iter()) {
        let file = format!("{name}.jsonl");
        let path = out_dir.join(&file);
        let ds = Dataset::new(g.d_x, crate::data_synth::SEMANTIC_CATEGORIES, samples.clone());
        write_dataset_file(&ds, &path).map_err(|source| CommandError::Dataset { path, source })?;
        files.push(file);
    }
    let manifest = GenDataManifest {
        counts: [splits[0].len(), splits[1].len(), splits[2].len()],
        files,
        generator: g.clone(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Reads a dataset and checks it against the model dimensions.
pub fn load_dataset(path: &Path, model: &crate::model::HyperConfig) -> Result<Dataset, CommandError> {
    let ds = read_dataset_file(path).map_err(|source| CommandError::Dataset {
        path: path.to_path_buf(),
        source,
    })?;
    if ds.header.d_x != model.d_x {
        return Err(CommandError::Mismatch(format!(
            "{}: dataset feature width {} does not match model d_x {}",
            path.display(),
            ds.header.d_x,
            model.d_x
        )));
    }
    let semantic = model.branch.parts().contains(&crate::model::BranchKind::Semantic);
    if semantic && ds.header.relation_categories != model.relation_categories {
        return Err(CommandError::Mismatch(format!(
            "{}: dataset has {} relation categories, model expects {}",
            path.display(),
            ds.header.relation_categories,
            model.relation_categories
        )));
    }
    Ok(ds)
}

pub fn to_examples(
    samples: &[Sample],
    vocab: &Vocabulary,
    stops: &StopLists,
    model: &crate::model::HyperConfig,
) -> Result<Vec<Example>, CommandError> {
    samples
        .iter()
        .enumerate()
        .map(|(index, s)| {
            s.to_example(vocab, stops, &model.graph)
                .map_err(|source| CommandError::Train(TrainError::Sample { index, source }))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainManifest {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub data_dir: PathBuf,
    pub best_epoch: usize,
    pub best_val_p_at_1: Option<f64>,
    pub vocabulary_size: usize,
    pub num_parameters: usize,
    pub config: RunConfig,
}

fn timestamped_dir(root: &Path) -> Result<PathBuf, CommandError> {
    fs::create_dir_all(root).map_err(|e| CommandError::io(root, e))?;
    let stamp = chrono::Utc::now().format("run-%Y%m%d-%H%M%S").to_string();
    for n in 0.. {
        let dir = if n == 0 {
            root.join(&stamp)
        } else {
            root.join(format!("{stamp}-{n}"))
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CommandError::io(&dir, e)),
        }
    }
    unreachable!()
}

/// Trains on `<data_dir>/train.jsonl`, selecting on `val.jsonl`. Artifacts
/// go to `run_dir`, or to a fresh timestamped directory under `runs_dir`.
pub fn cmd_train(cfg: &RunConfig, run_dir: Option<&Path>) -> Result<TrainManifest, CommandError> {
    cfg.validate()?;
    let train_ds = load_dataset(&cfg.data_dir.join("train.jsonl"), &cfg.model)?;
    let val_path = cfg.data_dir.join("val.jsonl");
    let val_ds = if val_path.exists() {
        Some(load_dataset(&val_path, &cfg.model)?)
    } else {
        None
    };
    let corpus: Vec<Vec<String>> = train_ds.samples.iter().map(|s| s.tokens.clone()).collect();
    let vocab = build_vocabulary_with(&corpus, cfg.vocab_min_count);
    let train_set = to_examples(&train_ds.samples, &vocab, &cfg.stop_lists, &cfg.model)?;
    let val_set = match &val_ds {
        Some(ds) => to_examples(&ds.samples, &vocab, &cfg.stop_lists, &cfg.model)?,
        None => Vec::new(),
    };
    let initial = ModelParameters::init(&cfg.model, vocab.len())?;

    let dir = match run_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| CommandError::io(d, e))?;
            d.to_path_buf()
        }
        None => timestamped_dir(&cfg.runs_dir)?,
    };
    write_json(&dir.join("config.json"), cfg)?;
    let metrics_path = dir.join("metrics.jsonl");
    let file = File::create(&metrics_path).map_err(|e| CommandError::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let mut write_err = None;
    let outcome = train(&initial, &train_set, &val_set, &cfg.training, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(metrics, "{line}").and_then(|_| metrics.flush()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(CommandError::io(&metrics_path, e));
    }

    let checkpoint = dir.join("checkpoint.json");
    let last_checkpoint = dir.join("checkpoint_last.json");
    Checkpoint::new(&outcome.best, &vocab, &cfg.stop_lists).save(&checkpoint)?;
    Checkpoint::new(&outcome.last, &vocab, &cfg.stop_lists).save(&last_checkpoint)?;
    let manifest = TrainManifest {
        run_dir: dir.clone(),
        checkpoint,
        last_checkpoint,
        metrics: metrics_path,
        data_dir: cfg.data_dir.clone(),
        best_epoch: outcome.best_epoch,
        best_val_p_at_1: outcome.metrics[outcome.best_epoch - 1].val_p_at_1,
        vocabulary_size: vocab.len(),
        num_parameters: outcome.best.store.num_scalars(),
        config: cfg.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, ModelParameters), CommandError> {
    let ckpt = Checkpoint::load(path).map_err(|e| match e {
        ModelError::Io(source) => CommandError::io(path, source),
        other => CommandError::Model(other),
    })?;
    let model = ckpt.model()?;
    Ok((ckpt, model))
}

/// Precision@1 of a checkpoint on a dataset file, overall and by relation order.
pub fn cmd_eval(checkpoint: &Path, dataset: &Path) -> Result<EvalReport, CommandError> {
    let (ckpt, model) = load_checkpoint(checkpoint)?;
    let ds = load_dataset(dataset, &model.config)?;
    let examples = to_examples(&ds.samples, &ckpt.vocabulary, &ckpt.stop_lists, &model.config)?;
    Ok(evaluate(&model, &examples)?)
}

/// Scene file for grounding. Extra fields (e.g. stored edges) are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundScene {
    pub proposals: Vec<Proposal>,
    #[serde(default)]
    pub semantic_edges: Vec<SemanticDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedProposal {
    pub index: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundReport {
    pub tokens: Vec<String>,
    pub predicted: usize,
    /// Highest score first.
    pub ranking: Vec<RankedProposal>,
    pub details: Prediction,
}

pub struct GroundRequest<'a> {
    pub checkpoint: &'a Path,
    pub scene: &'a Path,
    pub expression: &'a str,
    /// Bracketed constituency parse of the expression.
    pub tree: &'a str,
    /// Optional `(path, width, height)` of a PPM heat map.
    pub heatmap: Option<(&'a Path, usize, usize)>,
}

/// Scores every proposal of a scene against an expression.
pub fn cmd_ground(req: &GroundRequest<'_>) -> Result<GroundReport, CommandError> {
    let (ckpt, model) = load_checkpoint(req.checkpoint)?;
    let text = fs::read_to_string(req.scene).map_err(|e| CommandError::io(req.scene, e))?;
    let scene: GroundScene = serde_json::from_str(&text)
        .map_err(|e| CommandError::Config(format!("{}: {e}", req.scene.display())))?;
    let report = ground_scene(&ckpt, &model, &scene, req.expression, req.tree)?;
    if let Some((path, w, h)) = req.heatmap {
        if w == 0 || h == 0 {
            return Err(CommandError::Config("heat map size must be positive".into()));
        }
        let img = render_heatmap(&scene.proposals, &report.details.scores, w, h);
        fs::write(path, img).map_err(|e| CommandError::io(path, e))?;
    }
    Ok(report)
}

/// Grounding on in-memory inputs.
pub fn ground_scene(
    ckpt: &Checkpoint,
    model: &ModelParameters,
    scene: &GroundScene,
    expression: &str,
    tree: &str,
) -> Result<GroundReport, CommandError> {
    let tokens = tokenize(expression);
    let tree = parse_bracketed_tree(tree)?;
    let input = ModelInput::prepare(
        &scene.proposals,
        &tokens,
        &tree,
        &scene.semantic_edges,
        &ckpt.vocabulary,
        &ckpt.stop_lists,
        &model.config.graph,
    )?;
    let details = forward(model, &input)?;
    let mut ranking: Vec<RankedProposal> = details
        .scores
        .iter()
        .enumerate()
        .map(|(index, &score)| RankedProposal {
            index,
            score,
            bbox: scene.proposals[index].bbox(),
        })
        .collect();
    ranking.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    Ok(GroundReport {
        tokens,
        predicted: details.argmax(),
        ranking,
        details,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InspectReport {
    pub index: usize,
    pub scene_id: String,
    pub tokens: Vec<String>,
    pub order: u8,
    pub gt_index: usize,
    pub predicted: usize,
    pub details: Prediction,
}

/// Attention maps, word types and edge gates for one dataset sample.
pub fn cmd_inspect(checkpoint: &Path, dataset: &Path, index: usize) -> Result<InspectReport, CommandError> {
    let (ckpt, model) = load_checkpoint(checkpoint)?;
    let ds = load_dataset(dataset, &model.config)?;
    let sample = ds.samples.get(index).ok_or(CommandError::Index {
        index,
        len: ds.samples.len(),
    })?;
    let ex = sample.to_example(&ckpt.vocabulary, &ckpt.stop_lists, &model.config.graph)?;
    let details = forward(&model, &ex.input)?;
    Ok(InspectReport {
        index,
        scene_id: sample.scene_id.clone(),
        tokens: sample.tokens.clone(),
        order: sample.order,
        gt_index: sample.gt_index,
        predicted: details.argmax(),
        details,
    })
}
