use crate::cross_modal::EdgeDescriptor;
use crate::params::BoundParams;
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Weights of one gated graph convolution layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerParams {
    pub w_out: Var,
    pub w_in: Var,
    pub w_self: Var,
    pub b_self: Var,
    pub bias: EdgeBiasParams,
}

/// Per-edge bias source: one row per edge type, or a linear map of edge features.
#[derive(Debug, Clone, Copy)]
pub enum EdgeBiasParams {
    Typed(Var),
    Features { w: Var, b: Var },
}

impl LayerParams {
    pub fn bind(params: &BoundParams, prefix: &str, layer: usize) -> Self {
        let l = format!("{prefix}.ggcn{layer}");
        let bias = match params.try_var(&format!("{l}.edge_bias")) {
            Some(v) => EdgeBiasParams::Typed(v),
            None => EdgeBiasParams::Features {
                w: params.var(&format!("{l}.edge_bias_w")),
                b: params.var(&format!("{l}.edge_bias_b")),
            },
        };
        LayerParams {
            w_out: params.var(&format!("{l}.w_out")),
            w_in: params.var(&format!("{l}.w_in")),
            w_self: params.var(&format!("{l}.w_self")),
            b_self: params.var(&format!("{l}.b_self")),
            bias,
        }
    }
}

/// Gated adjacency operators of one graph, shared by all of its layers.
#[derive(Debug, Clone)]
pub struct EdgeOperators {
    /// `a_out[i, j]`: gate of edge `i -> j` times the vertex gate of `j`.
    pub a_out: Var,
    /// `a_in[i, j]`: gate of edge `j -> i` times the vertex gate of `j`.
    pub a_in: Var,
    /// `[K, E]`: how much of each edge's bias reaches each vertex (both directions).
    pub bias_mix: Var,
    pub descriptor: EdgeDescriptor,
}

fn incidence(k: usize, ends: &[usize]) -> Result<Tensor, TensorError> {
    let e = ends.len();
    let mut data = vec![0.0; k * e];
    for (col, &v) in ends.iter().enumerate() {
        if v >= k {
            return Err(TensorError::Index { index: v, rows: k });
        }
        data[v * e + col] = 1.0;
    }
    Tensor::new(vec![k, e], data)
}

/// Builds the gated operators for `k` vertices from edge gates `[E, 1]`
/// and vertex gates `[K, 1]`. Returns `None` for an edgeless graph.
pub fn edge_operators(
    tape: &mut Tape,
    k: usize,
    src: &[usize],
    dst: &[usize],
    edge_gates: Option<Var>,
    descriptor: Option<&EdgeDescriptor>,
    vertex_gates: Var,
) -> Result<Option<EdgeOperators>, TensorError> {
    let (Some(gates), Some(descriptor)) = (edge_gates, descriptor) else {
        return Ok(None);
    };
    if src.is_empty() {
        return Ok(None);
    }
    // S[i, e] = 1 iff edge e leaves i; D[j, e] = 1 iff edge e enters j.
    let s = incidence(k, src)?;
    let d = incidence(k, dst)?;
    let s_t = tape.constant(transpose(&s));
    let d_t = tape.constant(transpose(&d));
    let s = tape.constant(s);
    let d = tape.constant(d);
    let p_row = tape.transpose(gates)?;
    let v_row = tape.transpose(vertex_gates)?;
    let sp = tape.mul(s, p_row)?;
    let dp = tape.mul(d, p_row)?;
    let a_out = tape.matmul(sp, d_t)?;
    let a_out = tape.mul(a_out, v_row)?;
    let a_in = tape.matmul(dp, s_t)?;
    let a_in = tape.mul(a_in, v_row)?;
    let bias_mix = tape.add(sp, dp)?;
    Ok(Some(EdgeOperators {
        a_out,
        a_in,
        bias_mix,
        descriptor: descriptor.clone(),
    }))
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], data).expect("same data")
}

/// One gated graph convolution: gated messages along out- and in-edges
/// with per-edge biases, plus a self term, through relu.
pub fn ggcn_layer(tape: &mut Tape, x: Var, ops: Option<&EdgeOperators>, layer: &LayerParams) -> Result<Var, TensorError> {
    let self_term = tape.matmul(x, layer.w_self)?;
    let mut total = tape.add(self_term, layer.b_self)?;
    if let Some(ops) = ops {
        let xo = tape.matmul(x, layer.w_out)?;
        let out = tape.matmul(ops.a_out, xo)?;
        let xi = tape.matmul(x, layer.w_in)?;
        let inc = tape.matmul(ops.a_in, xi)?;
        let edge_bias = match (&ops.descriptor, layer.bias) {
            (EdgeDescriptor::Typed(onehot), EdgeBiasParams::Typed(b)) => tape.matmul(*onehot, b)?,
            (EdgeDescriptor::Features(f), EdgeBiasParams::Features { w, b }) => {
                let z = tape.matmul(*f, w)?;
                tape.add(z, b)?
            }
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "ggcn edge bias",
                    lhs: tape.shape(x).to_vec(),
                    rhs: vec![],
                })
            }
        };
        let bias = tape.matmul(ops.bias_mix, edge_bias)?;
        total = tape.add(total, out)?;
        total = tape.add(total, inc)?;
        total = tape.add(total, bias)?;
    }
    tape.relu(total)
}
