//! Browser bindings. Every export takes and returns JSON strings so the page
//! needs no generated type glue; the `*_json` functions hold the logic and
//! are what the native tests call.

use cmrin::commands::{ground_scene, GroundScene};
use cmrin::data_synth::{expression_tree, generate_sample, parse_expression, GeneratorConfig};
use cmrin::language::{build_vocabulary_with, extract_noun_phrases, parse_bracketed_tree, tokenize, StopLists};
use cmrin::model::{Checkpoint, HyperConfig, ModelParameters};
use cmrin::scene_graph::{build_spatial_graph, GraphVariantConfig, Proposal, SpatialRelation};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Deserialize)]
pub struct BoxInput {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Serialize)]
pub struct RelationEdge {
    pub from: usize,
    pub to: usize,
    pub label: u8,
    pub name: String,
}

#[derive(Debug, Serialize)]
pub struct RelationGraph {
    pub variant: String,
    pub labels: Vec<Vec<u8>>,
    pub edges: Vec<RelationEdge>,
}

/// Relation labels between every pair of boxes (centre/size, normalized).
pub fn relation_graph_json(boxes: &str, variant: &str) -> Result<String, String> {
    let boxes: Vec<BoxInput> = serde_json::from_str(boxes).map_err(|e| format!("boxes: {e}"))?;
    let cfg = GraphVariantConfig::parse(variant).map_err(|e| e.to_string())?;
    let proposals = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| Proposal::new(b.x, b.y, b.w, b.h, vec![]).map_err(|e| format!("box {i}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let graph = build_spatial_graph(&proposals, &cfg).map_err(|e| e.to_string())?;
    let edges = graph
        .edges()
        .map(|(from, to, label)| RelationEdge {
            from,
            to,
            label,
            name: edge_name(&cfg, label),
        })
        .collect();
    let out = RelationGraph {
        variant: variant.to_string(),
        labels: graph.edge_labels,
        edges,
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

fn edge_name(cfg: &GraphVariantConfig, label: u8) -> String {
    use cmrin::scene_graph::EdgeDesign;
    match cfg.edge_design {
        EdgeDesign::Type7 => ["right", "top", "left", "bottom", "inside", "cover", "overlap"]
            .get(label as usize - 1)
            .map_or_else(|| label.to_string(), |s| s.to_string()),
        _ => SpatialRelation::from_label(label).map_or_else(|| label.to_string(), |r| r.name().to_string()),
    }
}

#[derive(Debug, Serialize)]
pub struct PhraseReport {
    pub tokens: Vec<String>,
    pub candidates: Vec<String>,
    pub phrases: Vec<String>,
}

/// Candidate noun phrases of a bracketed parse and the phrases kept after
/// stop-word filtering.
pub fn noun_phrases_json(tree: &str) -> Result<String, String> {
    let tree = parse_bracketed_tree(tree).map_err(|e| e.to_string())?;
    let tokens: Vec<String> = tree.leaves().iter().map(|s| s.to_string()).collect();
    let np = extract_noun_phrases(&tree, &tokens, &StopLists::default()).map_err(|e| e.to_string())?;
    let join = |ids: &mut dyn Iterator<Item = usize>| ids.map(|i| tokens[i].as_str()).collect::<Vec<_>>().join(" ");
    let out = PhraseReport {
        candidates: np.candidates.iter().map(|s| join(&mut (s.start..s.end))).collect(),
        phrases: np.phrases.iter().map(|p| join(&mut p.iter().copied())).collect(),
        tokens: tokens.clone(),
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

#[derive(Debug, Serialize)]
pub struct DemoScene {
    pub proposals: Vec<Proposal>,
    pub semantic_edges: Vec<cmrin::scene_graph::SemanticDetection>,
    pub attributes: Vec<cmrin::data_synth::ObjectAttributes>,
    pub expression: String,
    pub tree: String,
    pub gt_index: usize,
    pub order: u8,
}

/// One generated scene with its expression, drawn from the default generator.
pub fn generate_scene_json(seed: u64) -> Result<String, String> {
    let cfg = GeneratorConfig {
        seed,
        ..GeneratorConfig::default()
    };
    let s = generate_sample(&cfg, 0).map_err(|e| e.to_string())?;
    let out = DemoScene {
        proposals: s.proposals,
        semantic_edges: s.semantic_edges,
        attributes: s.attributes.unwrap_or_default(),
        expression: s.tokens.join(" "),
        tree: s.tree,
        gt_index: s.gt_index,
        order: s.order,
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

/// Parse for an expression: the given tree, or the template parse when the
/// expression follows the generator's grammar.
fn tree_for(expression: &str, tree: &str) -> Result<String, String> {
    if !tree.trim().is_empty() {
        return Ok(tree.to_string());
    }
    let cfg = GeneratorConfig::default();
    parse_expression(&tokenize(expression), &cfg.colors, &cfg.shapes)
        .map(|e| expression_tree(&e).to_string())
        .ok_or_else(|| "expression does not follow the template grammar; supply a bracketed tree".to_string())
}

/// An untrained model over the generator vocabulary, used when no
/// checkpoint is loaded.
fn untrained() -> Result<Checkpoint, String> {
    let cfg = GeneratorConfig::default();
    let words: Vec<String> = ["the", "left", "right", "of", "above", "below"]
        .iter()
        .map(|s| s.to_string())
        .chain(cfg.colors.iter().cloned())
        .chain(cfg.shapes.iter().cloned())
        .collect();
    let vocab = build_vocabulary_with(&[words], 0);
    let model = ModelParameters::init(&HyperConfig::default(), vocab.len()).map_err(|e| e.to_string())?;
    Ok(Checkpoint::new(&model, &vocab, &StopLists::default()))
}

/// Scores every proposal of `scene` against `expression`. An empty
/// `checkpoint` uses a randomly initialised model.
pub fn ground_json(checkpoint: &str, scene: &str, expression: &str, tree: &str) -> Result<String, String> {
    let ckpt = if checkpoint.trim().is_empty() {
        untrained()?
    } else {
        Checkpoint::from_json(checkpoint).map_err(|e| e.to_string())?
    };
    let model = ckpt.model().map_err(|e| e.to_string())?;
    let scene: GroundScene = serde_json::from_str(scene).map_err(|e| format!("scene: {e}"))?;
    let tree = tree_for(expression, tree)?;
    let report = ground_scene(&ckpt, &model, &scene, expression, &tree).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&report).expect("serializable"))
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = relationGraph)]
pub fn relation_graph(boxes: &str, variant: &str) -> Result<String, JsValue> {
    js(relation_graph_json(boxes, variant))
}

#[wasm_bindgen(js_name = nounPhrases)]
pub fn noun_phrases(tree: &str) -> Result<String, JsValue> {
    js(noun_phrases_json(tree))
}

#[wasm_bindgen(js_name = generateScene)]
pub fn generate_scene(seed: u32) -> Result<String, JsValue> {
    js(generate_scene_json(seed as u64))
}

#[wasm_bindgen]
pub fn ground(checkpoint: &str, scene: &str, expression: &str, tree: &str) -> Result<String, JsValue> {
    js(ground_json(checkpoint, scene, expression, tree))
}
