//! Word/phrase attention over proposals, language contexts and the gates
//! that turn a scene graph into a language-guided graph.

use crate::language::{EncodedExpression, ENTITY, RELATION, UNNECESSARY};
use crate::params::BoundParams;
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Attention denominators below this yield a zero context.
pub const CONTEXT_EPS: f64 = 1e-12;

/// `logits[q, i] = w_n · tanh(W_v x_i + W_f f_q)` as `[Q, K]`.
fn attention_logits(tape: &mut Tape, params: &BoundParams, prefix: &str, visual: Var, queries: Var) -> Result<Var, TensorError> {
    let k = tape.shape(visual)[0];
    let q = tape.shape(queries)[0];
    let v = tape.matmul(visual, params.var(&format!("{prefix}.w_v")))?;
    let f = tape.matmul(queries, params.var(&format!("{prefix}.w_f")))?;
    let d = tape.shape(v)[1];
    let v = tape.reshape(v, &[1, k, d])?;
    let f = tape.reshape(f, &[q, 1, d])?;
    let joint = tape.add(f, v)?;
    let joint = tape.tanh(joint)?;
    let joint = tape.reshape(joint, &[q * k, d])?;
    let logits = tape.matmul(joint, params.var(&format!("{prefix}.w_n")))?;
    tape.reshape(logits, &[q, k])
}

/// Column `slot` of the `[T, 4]` type weights, as `[T, 1]`.
pub fn type_column(tape: &mut Tape, enc: &EncodedExpression, slot: usize) -> Result<Var, TensorError> {
    tape.slice(enc.type_weights, 1, slot, slot + 1)
}

/// `[T, K]` word attention; row `t` sums to the word's entity weight.
pub fn word_vertex_attention(tape: &mut Tape, params: &BoundParams, enc: &EncodedExpression, visual: Var) -> Result<Var, TensorError> {
    let logits = attention_logits(tape, params, "word_attn", visual, enc.embeddings)?;
    let dist = tape.softmax(logits, 1)?;
    let entity = type_column(tape, enc, ENTITY)?;
    tape.mul(dist, entity)
}

/// `[M, K]` phrase attention with rows summing to 1, or `None` without phrases.
pub fn phrase_vertex_attention(
    tape: &mut Tape,
    params: &BoundParams,
    enc: &EncodedExpression,
    visual: Var,
) -> Result<Option<Var>, TensorError> {
    match enc.phrase_features {
        None => Ok(None),
        Some(features) => {
            let logits = attention_logits(tape, params, "phrase_attn", visual, features)?;
            Ok(Some(tape.softmax(logits, 1)?))
        }
    }
}

/// Per-vertex attention mass `[K, 1]` and attention-weighted mean of the
/// word and phrase contexts `[K, D_h]`.
pub fn vertex_language_context(
    tape: &mut Tape,
    enc: &EncodedExpression,
    word_attention: Var,
    phrase_attention: Option<Var>,
) -> Result<(Var, Var), TensorError> {
    let wt = tape.transpose(word_attention)?;
    let mut numerator = tape.matmul(wt, enc.contexts)?;
    let mut gates = tape.sum(wt, Some(1))?;
    if let (Some(pa), Some(pc)) = (phrase_attention, enc.phrase_contexts) {
        let pt = tape.transpose(pa)?;
        let pn = tape.matmul(pt, pc)?;
        numerator = tape.add(numerator, pn)?;
        let pg = tape.sum(pt, Some(1))?;
        gates = tape.add(gates, pg)?;
    }
    let g = tape.value(gates).data().to_vec();
    let k = g.len();
    let guard: Vec<f64> = g.iter().map(|&v| if v < CONTEXT_EPS { 1.0 } else { 0.0 }).collect();
    let keep: Vec<f64> = guard.iter().map(|v| 1.0 - v).collect();
    let guard = tape.constant(Tensor::new(vec![k, 1], guard)?);
    let keep = tape.constant(Tensor::new(vec![k, 1], keep)?);
    let safe = tape.add(gates, guard)?;
    let ctx = tape.div(numerator, safe)?;
    let ctx = tape.mul(ctx, keep)?;
    Ok((gates, ctx))
}

/// `[1, D_h]` sum of word contexts weighted by their non-"unnecessary" mass.
pub fn global_language_context(tape: &mut Tape, enc: &EncodedExpression) -> Result<Var, TensorError> {
    let useful = tape.slice(enc.type_weights, 1, 0, UNNECESSARY)?;
    let useful = tape.sum(useful, Some(1))?;
    let useful = tape.transpose(useful)?;
    tape.matmul(useful, enc.contexts)
}

/// `[1, N_e]` gates over edge types; they sum to the total relation weight.
pub fn edge_type_gates(tape: &mut Tape, params: &BoundParams, prefix: &str, enc: &EncodedExpression) -> Result<Var, TensorError> {
    let z = tape.matmul(enc.contexts, params.var(&format!("{prefix}.edge_type.w0")))?;
    let z = tape.add(z, params.var(&format!("{prefix}.edge_type.b0")))?;
    let z = tape.relu(z)?;
    let z = tape.matmul(z, params.var(&format!("{prefix}.edge_type.w1")))?;
    let z = tape.add(z, params.var(&format!("{prefix}.edge_type.b1")))?;
    let dist = tape.softmax(z, 1)?;
    let rel = type_column(tape, enc, RELATION)?;
    let weighted = tape.mul(dist, rel)?;
    tape.sum(weighted, Some(0))
}

/// `[E, 1]` gates for individual edges described by feature rows
/// `[E, W]`: every word spreads its relation weight over the edges.
pub fn edge_feature_gates(
    tape: &mut Tape,
    params: &BoundParams,
    prefix: &str,
    enc: &EncodedExpression,
    features: Var,
) -> Result<Var, TensorError> {
    let e = tape.shape(features)[0];
    let t = enc.len();
    let r = tape.matmul(features, params.var(&format!("{prefix}.edge_attn.w_r")))?;
    let h = tape.matmul(enc.contexts, params.var(&format!("{prefix}.edge_attn.w_h")))?;
    let d = tape.shape(r)[1];
    let r = tape.reshape(r, &[1, e, d])?;
    let h = tape.reshape(h, &[t, 1, d])?;
    let joint = tape.add(h, r)?;
    let joint = tape.tanh(joint)?;
    let joint = tape.reshape(joint, &[t * e, d])?;
    let logits = tape.matmul(joint, params.var(&format!("{prefix}.edge_attn.w_n")))?;
    let logits = tape.reshape(logits, &[t, e])?;
    let dist = tape.softmax(logits, 1)?;
    let rel = type_column(tape, enc, RELATION)?;
    let weighted = tape.mul(dist, rel)?;
    let gates = tape.sum(weighted, Some(0))?;
    tape.transpose(gates)
}

/// Vertex-side guidance shared by every branch.
#[derive(Debug, Clone, Copy)]
pub struct VertexGuidance {
    /// `[T, K]`
    pub word_attention: Var,
    /// `[M, K]`
    pub phrase_attention: Option<Var>,
    /// `[K, 1]`
    pub vertex_gates: Var,
    /// `[K, D_h]`
    pub vertex_contexts: Var,
    /// `[1, D_h]`
    pub global_context: Var,
}

pub fn vertex_guidance(
    tape: &mut Tape,
    params: &BoundParams,
    enc: &EncodedExpression,
    visual: Var,
) -> Result<VertexGuidance, TensorError> {
    let word_attention = word_vertex_attention(tape, params, enc, visual)?;
    let phrase_attention = phrase_vertex_attention(tape, params, enc, visual)?;
    let (vertex_gates, vertex_contexts) = vertex_language_context(tape, enc, word_attention, phrase_attention)?;
    let global_context = global_language_context(tape, enc)?;
    Ok(VertexGuidance {
        word_attention,
        phrase_attention,
        vertex_gates,
        vertex_contexts,
        global_context,
    })
}

/// Directed edges of one branch before language guidance.
#[derive(Debug, Clone)]
pub enum EdgeInput {
    /// Labelled edges `src[e] -> dst[e]` with labels in `1..=num_types`.
    Typed {
        src: Vec<usize>,
        dst: Vec<usize>,
        labels: Vec<u8>,
        num_types: usize,
    },
    /// Edges carrying feature rows `[E, W]`.
    Features { src: Vec<usize>, dst: Vec<usize>, features: Var },
}

/// How per-edge biases are derived inside each graph layer.
#[derive(Debug, Clone)]
pub enum EdgeDescriptor {
    /// `[E, N_e]` one-hot labels.
    Typed(Var),
    /// `[E, W]` edge features.
    Features(Var),
}

/// Edges of one branch with their language gates.
#[derive(Debug, Clone)]
pub struct GuidedEdges {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// `[E, 1]`, `None` when the graph has no edges.
    pub gates: Option<Var>,
    /// `[1, N_e]` for typed edges.
    pub type_gates: Option<Var>,
    pub descriptor: Option<EdgeDescriptor>,
}

impl GuidedEdges {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// The language-guided graph of one branch.
#[derive(Debug, Clone)]
pub struct LanguageGuidedGraph {
    pub vertex: VertexGuidance,
    pub edges: GuidedEdges,
}

/// One-hot `[E, N_e]` rows for labels `1..=num_types`.
pub fn label_one_hot(labels: &[u8], num_types: usize) -> Result<Tensor, TensorError> {
    let mut data = vec![0.0; labels.len() * num_types];
    for (e, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l == 0 || l > num_types {
            return Err(TensorError::Index {
                index: l,
                rows: num_types + 1,
            });
        }
        data[e * num_types + l - 1] = 1.0;
    }
    Tensor::new(vec![labels.len(), num_types], data)
}

/// Computes edge gates for `edges` under `prefix` and bundles them with
/// the shared vertex guidance.
pub fn assemble_guided_graph(
    tape: &mut Tape,
    params: &BoundParams,
    prefix: &str,
    enc: &EncodedExpression,
    vertex: VertexGuidance,
    edges: EdgeInput,
) -> Result<LanguageGuidedGraph, TensorError> {
    let edges = match edges {
        EdgeInput::Typed {
            src,
            dst,
            labels,
            num_types,
        } => {
            let type_gates = edge_type_gates(tape, params, prefix, enc)?;
            let (gates, descriptor) = if labels.is_empty() {
                (None, None)
            } else {
                let onehot = tape.constant(label_one_hot(&labels, num_types)?);
                let col = tape.transpose(type_gates)?;
                (Some(tape.matmul(onehot, col)?), Some(EdgeDescriptor::Typed(onehot)))
            };
            GuidedEdges {
                src,
                dst,
                gates,
                type_gates: Some(type_gates),
                descriptor,
            }
        }
        EdgeInput::Features { src, dst, features } => {
            let (gates, descriptor) = if src.is_empty() {
                (None, None)
            } else {
                (
                    Some(edge_feature_gates(tape, params, prefix, enc, features)?),
                    Some(EdgeDescriptor::Features(features)),
                )
            };
            GuidedEdges {
                src,
                dst,
                gates,
                type_gates: None,
                descriptor,
            }
        }
    };
    Ok(LanguageGuidedGraph { vertex, edges })
}
