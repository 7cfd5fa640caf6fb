use std::fmt;
use std::sync::Arc;

use super::{axis_split, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    Concat,
    Slice,
    Sum,
    Mean,
    Max,
    Tanh,
    Relu,
    Sigmoid,
    Softmax,
    L2Normalize,
    Exp,
    Log,
    Reshape,
    Transpose,
    GatherRows,
}

impl OpKind {
    pub const ALL: [OpKind; 21] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Div,
        OpKind::Scale,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Max,
        OpKind::Tanh,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Softmax,
        OpKind::L2Normalize,
        OpKind::Exp,
        OpKind::Log,
        OpKind::Reshape,
        OpKind::Transpose,
        OpKind::GatherRows,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "subtract",
            OpKind::Mul => "multiply",
            OpKind::Div => "divide",
            OpKind::Scale => "scale",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Max => "max",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax",
            OpKind::L2Normalize => "l2-normalize",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Reshape => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::GatherRows => "gather-rows",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Sum { input: Var, axis: Option<usize> },
    Mean { input: Var, axis: Option<usize> },
    Max { input: Var, argmax: Vec<usize> },
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax { input: Var, axis: usize },
    L2Normalize { input: Var, axis: usize },
    Exp(Var),
    Log(Var),
    Reshape(Var),
    Transpose(Var),
    GatherRows { input: Var, indices: Vec<usize> },
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Div(..) => OpKind::Div,
            Op::Scale(..) => OpKind::Scale,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Max { .. } => OpKind::Max,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::L2Normalize { .. } => OpKind::L2Normalize,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Transpose(_) => OpKind::Transpose,
            Op::GatherRows { .. } => OpKind::GatherRows,
        })
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations in evaluation order so gradients can be pulled back
/// in one reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`. `None` only for nodes that do not
    /// require a gradient; unused trainable leaves get zeros.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Corrupts the backward rule of `kind` (its input gradients are scaled
    /// by 1.5). Only useful to demonstrate that gradient checking catches a
    /// broken rule.
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Arc<Tensor>) -> Var {
        self.push_arc(value, Op::Leaf, true)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_arc(Arc::new(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &'static str) -> Result<Var, TensorError> {
        let value = value.ensure_finite(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_arc(Arc::new(value), op, requires_grad))
    }

    // ---- forward ops ----

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let out = matmul_raw(av, bv);
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = broadcast_binary(self.value(a), self.value(b), "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = broadcast_binary(self.value(a), self.value(b), "subtract", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), &[a, b], "subtract")
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = broadcast_binary(self.value(a), self.value(b), "multiply", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), &[a, b], "multiply")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = broadcast_binary(self.value(a), self.value(b), "divide", |x, y| x / y)?;
        self.push(out, Op::Div(a, b), &[a, b], "divide")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), &[a], "scale")
    }

    /// `a + c` for a constant `c`.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let k = self.constant(Tensor::scalar(c));
        self.add(a, k)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs.first().ok_or(TensorError::EmptyConcat)?;
        let base = self.shape(*first).to_vec();
        let (outer, _, inner) = axis_split(&base, axis)?;
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::from_parts(shape, data);
        self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
            "concat",
        )
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (outer, len, inner) = axis_split(t.shape(), axis)?;
        if start > end || end > len {
            return Err(TensorError::Range { start, end, len });
        }
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&t.data()[base + start * inner..base + end * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = width;
        let out = Tensor::from_parts(shape, data);
        self.push(out, Op::Slice { input: a, axis, start }, &[a], "slice")
    }

    /// Sum over `axis` (kept as extent 1), or over everything into a rank-0
    /// scalar when `axis` is `None`.
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var, TensorError> {
        let out = reduce_sum(self.value(a), axis)?;
        self.push(out, Op::Sum { input: a, axis }, &[a], "sum")
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var, TensorError> {
        let t = self.value(a);
        let count = match axis {
            Some(ax) => axis_split(t.shape(), ax)?.1,
            None => t.len(),
        } as f64;
        let out = reduce_sum(t, axis)?.map(|v| v / count);
        self.push(out, Op::Mean { input: a, axis }, &[a], "mean")
    }

    /// Max over `axis`, kept as extent 1. Ties go to the first index.
    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (outer, len, inner) = axis_split(t.shape(), axis)?;
        if len == 0 {
            return Err(TensorError::Range { start: 0, end: 1, len });
        }
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for k in 1..len {
                    let idx = (o * len + k) * inner + i;
                    if t.data()[idx] > t.data()[best] {
                        best = idx;
                    }
                }
                data.push(t.data()[best]);
                argmax.push(best);
            }
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = 1;
        let out = Tensor::from_parts(shape, data);
        self.push(out, Op::Max { input: a, argmax }, &[a], "max")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a], "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a], "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a], "sigmoid")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), &[a], "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), &[a], "log")
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (outer, len, inner) = axis_split(t.shape(), axis)?;
        let mut data = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| data[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..len {
                    let e = (data[idx(k)] - m).exp();
                    data[idx(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    data[idx(k)] /= z;
                }
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(out, Op::Softmax { input: a, axis }, &[a], "softmax")
    }

    /// Scales every fiber along `axis` to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (outer, len, inner) = axis_split(t.shape(), axis)?;
        let mut data = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let norm = (0..len).map(|k| data[idx(k)].powi(2)).sum::<f64>().sqrt();
                if norm < 1e-12 {
                    return Err(TensorError::DegenerateNorm { norm });
                }
                for k in 0..len {
                    data[idx(k)] /= norm;
                }
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(out, Op::L2Normalize { input: a, axis }, &[a], "l2-normalize")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = Tensor::from_parts(shape.to_vec(), t.data().to_vec());
        self.push(out, Op::Reshape(a), &[a], "reshape")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(TensorError::Rank {
                op: "transpose",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        let out = transpose_raw(t);
        self.push(out, Op::Transpose(a), &[a], "transpose")
    }

    /// Selects rows of a rank-2 tensor (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(TensorError::Rank {
                op: "gather-rows",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::Index { index: i, rows });
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::from_parts(vec![indices.len(), cols], data);
        self.push(
            out,
            Op::GatherRows {
                input: a,
                indices: indices.to_vec(),
            },
            &[a],
            "gather-rows",
        )
    }

    // ---- backward ----

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let contributions = self.input_grads(node, &g);
            let fault = matches!((self.fault, node.op.kind()), (Some(f), Some(k)) if f == k);
            for (input, mut ig) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if fault {
                    ig = ig.map(|x| x * 1.5);
                }
                accumulate(&mut grads[input.0], ig);
            }
            grads[id] = Some(g);
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
            if !node.requires_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn input_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };
        let out = &node.value;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut res = Vec::with_capacity(2);
                if self.nodes[a.0].requires_grad {
                    res.push((*a, matmul_raw(g, &transpose_raw(val(*b)))));
                }
                if self.nodes[b.0].requires_grad {
                    res.push((*b, matmul_raw(&transpose_raw(val(*a)), g)));
                }
                res
            }
            Op::Add(a, b) => vec![
                (*a, reduce_to(g, val(*a).shape())),
                (*b, reduce_to(g, val(*b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (*a, reduce_to(g, val(*a).shape())),
                (*b, reduce_to(&g.map(|x| -x), val(*b).shape())),
            ],
            Op::Mul(a, b) => {
                let ga = broadcast_binary(g, val(*b), "", |x, y| x * y).expect("shapes recorded");
                let gb = broadcast_binary(g, val(*a), "", |x, y| x * y).expect("shapes recorded");
                vec![
                    (*a, reduce_to(&ga, val(*a).shape())),
                    (*b, reduce_to(&gb, val(*b).shape())),
                ]
            }
            Op::Div(a, b) => {
                let ga = broadcast_binary(g, val(*b), "", |x, y| x / y).expect("shapes recorded");
                // d(a/b)/db = -out / b
                let t = broadcast_binary(g, out, "", |x, y| -x * y).expect("shapes recorded");
                let gb = broadcast_binary(&t, val(*b), "", |x, y| x / y).expect("shapes recorded");
                vec![
                    (*a, reduce_to(&ga, val(*a).shape())),
                    (*b, reduce_to(&gb, val(*b).shape())),
                ]
            }
            Op::Scale(a, f) => vec![(*a, g.map(|x| x * f))],
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis).expect("recorded");
                let mut offset = 0;
                let mut res = Vec::with_capacity(inputs.len());
                for v in inputs {
                    let s = val(*v).shape();
                    let w = s[*axis];
                    let mut data = Vec::with_capacity(outer * w * inner);
                    for o in 0..outer {
                        let base = o * total * inner;
                        data.extend_from_slice(&g.data()[base + offset * inner..base + (offset + w) * inner]);
                    }
                    res.push((*v, Tensor::from_parts(s.to_vec(), data)));
                    offset += w;
                }
                res
            }
            Op::Slice { input, axis, start } => {
                let s = val(*input).shape();
                let (outer, len, inner) = axis_split(s, *axis).expect("recorded");
                let w = out.shape()[*axis];
                let mut data = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let dst = o * len * inner + start * inner;
                    let src = o * w * inner;
                    data[dst..dst + w * inner].copy_from_slice(&g.data()[src..src + w * inner]);
                }
                vec![(*input, Tensor::from_parts(s.to_vec(), data))]
            }
            Op::Sum { input, axis } => vec![(*input, expand_reduced(g, val(*input).shape(), *axis, 1.0))],
            Op::Mean { input, axis } => {
                let s = val(*input).shape();
                let count = match axis {
                    Some(ax) => s[*ax],
                    None => s.iter().product(),
                } as f64;
                vec![(*input, expand_reduced(g, s, *axis, 1.0 / count))]
            }
            Op::Max { input, argmax } => {
                let s = val(*input).shape();
                let mut data = vec![0.0; s.iter().product()];
                for (k, &idx) in argmax.iter().enumerate() {
                    data[idx] += g.data()[k];
                }
                vec![(*input, Tensor::from_parts(s.to_vec(), data))]
            }
            Op::Tanh(a) => vec![(*a, zip_map(g, out, |gi, y| gi * (1.0 - y * y)))],
            Op::Relu(a) => vec![(*a, zip_map(g, val(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }))],
            Op::Sigmoid(a) => vec![(*a, zip_map(g, out, |gi, y| gi * y * (1.0 - y)))],
            Op::Exp(a) => vec![(*a, zip_map(g, out, |gi, y| gi * y))],
            Op::Log(a) => vec![(*a, zip_map(g, val(*a), |gi, x| gi / x))],
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis).expect("recorded");
                let mut data = vec![0.0; out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g.data()[idx(k)] * out.data()[idx(k)]).sum();
                        for k in 0..len {
                            data[idx(k)] = out.data()[idx(k)] * (g.data()[idx(k)] - dot);
                        }
                    }
                }
                vec![(*input, Tensor::from_parts(out.shape().to_vec(), data))]
            }
            Op::L2Normalize { input, axis } => {
                let x = val(*input);
                let (outer, len, inner) = axis_split(out.shape(), *axis).expect("recorded");
                let mut data = vec![0.0; out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let norm = (0..len).map(|k| x.data()[idx(k)].powi(2)).sum::<f64>().sqrt();
                        let dot: f64 = (0..len).map(|k| g.data()[idx(k)] * out.data()[idx(k)]).sum();
                        for k in 0..len {
                            data[idx(k)] = (g.data()[idx(k)] - out.data()[idx(k)] * dot) / norm;
                        }
                    }
                }
                vec![(*input, Tensor::from_parts(out.shape().to_vec(), data))]
            }
            Op::Reshape(a) => vec![(*a, Tensor::from_parts(val(*a).shape().to_vec(), g.data().to_vec()))],
            Op::Transpose(a) => vec![(*a, transpose_raw(g))],
            Op::GatherRows { input, indices } => {
                let s = val(*input).shape();
                let cols = s[1];
                let mut data = vec![0.0; s[0] * cols];
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..cols {
                        data[i * cols + c] += g.data()[r * cols + c];
                    }
                }
                vec![(*input, Tensor::from_parts(s.to_vec(), data))]
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

pub(crate) fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::from_parts(vec![m, n], out)
}

pub(crate) fn transpose_raw(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::from_parts(vec![c, r], data)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let x = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let y = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        out[d] = match (x, y) {
            _ if x == y => x,
            (1, _) => y,
            (_, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` aligned to `out` rank, zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let pad = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d + pad] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

fn broadcast_binary(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, TensorError> {
    if a.shape() == b.shape() {
        return Ok(zip_map(a, b, f));
    }
    if b.len() == 1 {
        let y = b.data()[0];
        if a.rank() >= b.rank() {
            return Ok(a.map(|x| f(x, y)));
        }
    }
    if a.len() == 1 && a.rank() <= b.rank() {
        let x = a.data()[0];
        return Ok(b.map(|y| f(x, y)));
    }
    let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })?;
    let sa = broadcast_strides(a.shape(), &shape);
    let sb = broadcast_strides(b.shape(), &shape);
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        let oa: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ob: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
        data.push(f(a.data()[oa], b.data()[ob]));
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let target_len: usize = shape.iter().product();
    if target_len == 1 {
        return Tensor::from_parts(shape.to_vec(), vec![g.data().iter().sum()]);
    }
    let out_shape = g.shape();
    let strides = broadcast_strides(shape, out_shape);
    let mut data = vec![0.0; target_len];
    let mut idx = vec![0usize; out_shape.len()];
    for &v in g.data() {
        let o: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        data[o] += v;
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_parts(shape.to_vec(), data)
}

fn reduce_sum(t: &Tensor, axis: Option<usize>) -> Result<Tensor, TensorError> {
    match axis {
        None => Ok(Tensor::scalar(t.data().iter().sum())),
        Some(ax) => {
            let (outer, len, inner) = axis_split(t.shape(), ax)?;
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for k in 0..len {
                    let base = (o * len + k) * inner;
                    for i in 0..inner {
                        data[o * inner + i] += t.data()[base + i];
                    }
                }
            }
            let mut shape = t.shape().to_vec();
            shape[ax] = 1;
            Ok(Tensor::from_parts(shape, data))
        }
    }
}

/// Gradient of a (keep-dim) reduction: repeat `g` across the reduced axis.
fn expand_reduced(g: &Tensor, shape: &[usize], axis: Option<usize>, factor: f64) -> Tensor {
    match axis {
        None => Tensor::full(shape, g.data()[0] * factor),
        Some(ax) => {
            let (outer, len, inner) = axis_split(shape, ax).expect("recorded");
            let mut data = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        data[(o * len + k) * inner + i] = g.data()[o * inner + i] * factor;
                    }
                }
            }
            Tensor::from_parts(shape.to_vec(), data)
        }
    }
}
