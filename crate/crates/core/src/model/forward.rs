use serde::Serialize;

use crate::cross_modal::{assemble_guided_graph, vertex_guidance, EdgeInput, LanguageGuidedGraph, VertexGuidance};
use crate::language::{encode_expression, extract_noun_phrases, ConstituencyNode, EncodedExpression, StopLists, Vocabulary};
use crate::params::BoundParams;
use crate::scene_graph::{build_spatial_graph, GraphVariantConfig, Proposal, SceneGraph, SemanticDetection};
use crate::tensor::{Tape, Tensor, TensorError, Var};

use super::config::EdgeMode;
use super::ggcn::{edge_operators, ggcn_layer, LayerParams};
use super::{BranchKind, ModelError, ModelParameters};

/// Everything the network consumes for one expression–scene pair.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub graph: SceneGraph,
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
    pub phrases: Vec<Vec<usize>>,
    pub semantic: Vec<SemanticDetection>,
}

impl ModelInput {
    /// Builds the spatial graph, maps tokens to ids and extracts noun phrases.
    pub fn prepare(
        proposals: &[Proposal],
        tokens: &[String],
        tree: &ConstituencyNode,
        semantic: &[SemanticDetection],
        vocab: &Vocabulary,
        stops: &StopLists,
        graph: &GraphVariantConfig,
    ) -> Result<Self, ModelError> {
        let graph = build_spatial_graph(proposals, graph)?;
        let phrases = extract_noun_phrases(tree, tokens, stops)?.phrases;
        Ok(ModelInput {
            graph,
            tokens: tokens.to_vec(),
            ids: vocab.encode(tokens),
            phrases,
            semantic: semantic.to_vec(),
        })
    }

    pub fn num_proposals(&self) -> usize {
        self.graph.len()
    }
}

/// `[K, D_x + D_h]`: visual features followed by language contexts.
pub fn fuse_multimodal(tape: &mut Tape, visual: Var, contexts: Var) -> Result<Var, TensorError> {
    tape.concat(&[visual, contexts], 1)
}

/// `[K, D_p + width]`: projected spatial features followed by the graph context.
pub fn final_context(tape: &mut Tape, spatial: Var, w_p: Var, context: Var) -> Result<Var, TensorError> {
    let projected = tape.matmul(spatial, w_p)?;
    tape.concat(&[projected, context], 1)
}

/// `[K, 1]` cosine similarities between projected contexts and the
/// projected global language context.
pub fn matching_scores(tape: &mut Tape, contexts: Var, global: Var, w_s0: Var, w_s1: Var) -> Result<Var, TensorError> {
    let v = tape.matmul(contexts, w_s0)?;
    let v = tape.l2_normalize(v, 1)?;
    let l = tape.matmul(global, w_s1)?;
    let l = tape.l2_normalize(l, 1)?;
    let lt = tape.transpose(l)?;
    tape.matmul(v, lt)
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `[K, 1]` final scores.
    pub scores: Var,
    pub encoded: EncodedExpression,
    pub vertex: VertexGuidance,
    pub branches: Vec<(&'static str, Option<LanguageGuidedGraph>, Var)>,
}

fn visual_matrix(graph: &SceneGraph, d_x: usize) -> Result<Tensor, ModelError> {
    let mut data = Vec::with_capacity(graph.len() * d_x);
    for (index, p) in graph.proposals.iter().enumerate() {
        if p.feature.len() != d_x {
            return Err(ModelError::FeatureWidth {
                index,
                expected: d_x,
                got: p.feature.len(),
            });
        }
        data.extend_from_slice(&p.feature);
    }
    Ok(Tensor::new(vec![graph.len(), d_x], data)?)
}

fn branch_edges(
    tape: &mut Tape,
    params: &BoundParams,
    model: &ModelParameters,
    kind: BranchKind,
    input: &ModelInput,
) -> Result<EdgeInput, ModelError> {
    let cfg = &model.config;
    match (kind, cfg.edge_mode(kind)) {
        (BranchKind::Spatial, EdgeMode::Typed(num_types)) => {
            let (mut src, mut dst, mut labels) = (Vec::new(), Vec::new(), Vec::new());
            for (i, j, l) in input.graph.edges() {
                src.push(i);
                dst.push(j);
                labels.push(l);
            }
            Ok(EdgeInput::Typed {
                src,
                dst,
                labels,
                num_types,
            })
        }
        (BranchKind::Spatial, EdgeMode::Features(width)) => {
            let soft = input
                .graph
                .soft_features
                .as_ref()
                .ok_or_else(|| ModelError::Config("soft edges requested but graph has no edge features".into()))?;
            let (mut src, mut dst, mut data) = (Vec::new(), Vec::new(), Vec::new());
            for (i, j, _) in input.graph.edges() {
                src.push(i);
                dst.push(j);
                data.extend_from_slice(&soft[i][j]);
            }
            let features = tape.constant(Tensor::new(vec![src.len(), width], data)?);
            Ok(EdgeInput::Features { src, dst, features })
        }
        (BranchKind::Semantic, _) => {
            let k = input.num_proposals();
            crate::scene_graph::validate_detections(k, &input.semantic, cfg.relation_categories)?;
            let (mut src, mut dst, mut probs) = (Vec::new(), Vec::new(), Vec::new());
            for d in &input.semantic {
                if d.probs.iter().sum::<f64>() > 0.0 {
                    src.push(d.i);
                    dst.push(d.j);
                    probs.extend_from_slice(&d.probs);
                }
            }
            let p = tape.constant(Tensor::new(vec![src.len(), cfg.relation_categories], probs)?);
            let features = tape.matmul(p, params.var("semantic.relation_embedding"))?;
            Ok(EdgeInput::Features { src, dst, features })
        }
    }
}

/// Runs the whole network on `tape`, returning handles for training.
pub fn forward_on_tape(
    tape: &mut Tape,
    model: &ModelParameters,
    params: &BoundParams,
    input: &ModelInput,
) -> Result<ForwardPass, ModelError> {
    let cfg = &model.config;
    let k = input.num_proposals();
    if k == 0 {
        return Err(ModelError::Degenerate("no proposals".into()));
    }
    if let Some(&bad) = input.ids.iter().find(|&&id| id >= model.vocab_size) {
        return Err(ModelError::Config(format!("token id {bad} outside vocabulary of {}", model.vocab_size)));
    }
    let visual = tape.constant(visual_matrix(&input.graph, cfg.d_x)?);
    let spatial_data: Vec<f64> = input.graph.spatial_features.iter().flatten().copied().collect();
    let spatial = tape.constant(Tensor::new(vec![k, 5], spatial_data)?);

    let encoded = encode_expression(tape, params, &input.tokens, &input.ids, &input.phrases, cfg.max_length)?;
    let vertex = vertex_guidance(tape, params, &encoded, visual)?;
    let fused = fuse_multimodal(tape, visual, vertex.vertex_contexts)?;

    let mut branches = Vec::new();
    for &kind in cfg.branch.parts() {
        let prefix = kind.prefix();
        let (guided, context) = if cfg.layers == 0 {
            (None, fused)
        } else {
            let edges = branch_edges(tape, params, model, kind, input)?;
            let guided = assemble_guided_graph(tape, params, prefix, &encoded, vertex, edges)?;
            let ops = edge_operators(
                tape,
                k,
                &guided.edges.src,
                &guided.edges.dst,
                guided.edges.gates,
                guided.edges.descriptor.as_ref(),
                vertex.vertex_gates,
            )?;
            let mut x = fused;
            for n in 1..=cfg.layers {
                let layer = LayerParams::bind(params, prefix, n);
                x = ggcn_layer(tape, x, ops.as_ref(), &layer)?;
            }
            (Some(guided), x)
        };
        let ctx = final_context(tape, spatial, params.var(&format!("{prefix}.w_p")), context)?;
        let scores = matching_scores(
            tape,
            ctx,
            vertex.global_context,
            params.var(&format!("{prefix}.w_s0")),
            params.var(&format!("{prefix}.w_s1")),
        )?;
        branches.push((prefix, guided, scores));
    }
    let scores = if branches.len() == 1 {
        branches[0].2
    } else {
        let sum = tape.add(branches[0].2, branches[1].2)?;
        tape.scale(sum, 0.5)?
    };
    Ok(ForwardPass {
        scores,
        encoded,
        vertex,
        branches,
    })
}

/// Per-branch diagnostics as plain values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchDiagnostics {
    pub branch: String,
    pub scores: Vec<f64>,
    /// Gates per edge type (typed edges only).
    pub edge_type_gates: Option<Vec<f64>>,
    /// `(source, target, gate)` for every edge.
    pub edge_gates: Vec<(usize, usize, f64)>,
}

/// Scores and attention maps of one sample, detached from any tape.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub scores: Vec<f64>,
    /// `[T][4]`
    pub type_weights: Vec<Vec<f64>>,
    /// `[T][K]`
    pub word_attention: Vec<Vec<f64>>,
    /// `[M][K]`
    pub phrase_attention: Vec<Vec<f64>>,
    pub phrases: Vec<Vec<usize>>,
    pub vertex_gates: Vec<f64>,
    pub branches: Vec<BranchDiagnostics>,
}

impl Prediction {
    /// Index of the highest score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

/// Inference without gradients.
pub fn forward(model: &ModelParameters, input: &ModelInput) -> Result<Prediction, ModelError> {
    let mut tape = Tape::new();
    let params = model.store.bind(&mut tape);
    let pass = forward_on_tape(&mut tape, model, &params, input)?;
    let branches = pass
        .branches
        .iter()
        .map(|(name, guided, scores)| {
            let (edge_type_gates, edge_gates) = match guided {
                None => (None, Vec::new()),
                Some(g) => {
                    let types = g.edges.type_gates.map(|v| tape.value(v).data().to_vec());
                    let gates = match g.edges.gates {
                        None => Vec::new(),
                        Some(v) => {
                            let vals = tape.value(v).data();
                            g.edges
                                .src
                                .iter()
                                .zip(&g.edges.dst)
                                .zip(vals)
                                .map(|((&s, &d), &p)| (s, d, p))
                                .collect()
                        }
                    };
                    (types, gates)
                }
            };
            BranchDiagnostics {
                branch: name.to_string(),
                scores: tape.value(*scores).data().to_vec(),
                edge_type_gates,
                edge_gates,
            }
        })
        .collect();
    Ok(Prediction {
        scores: tape.value(pass.scores).data().to_vec(),
        type_weights: rows_of(tape.value(pass.encoded.type_weights)),
        word_attention: rows_of(tape.value(pass.vertex.word_attention)),
        phrase_attention: pass.vertex.phrase_attention.map_or_else(Vec::new, |v| rows_of(tape.value(v))),
        phrases: pass.encoded.phrases.clone(),
        vertex_gates: tape.value(pass.vertex.vertex_gates).data().to_vec(),
        branches,
    })
}
