//! Single-op gradient probes, used to localise a failing model gradcheck.

use super::{finite_difference_check, GradCheckError, GradCheckReport, OpKind, Tape, Tensor, TensorError, Var};

const ROWS: usize = 3;
const COLS: usize = 4;

fn fixture(shape: &[usize], offset: f64, positive: bool) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|i| {
            // distinct, well away from 0 so relu/max are smooth at the probe point
            let v = ((i as f64 * 0.7 + offset).sin() * 1.5) + 0.11 * i as f64;
            if positive {
                v.abs() + 0.5
            } else if v.abs() < 0.1 {
                v + 0.3
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite fixture")
}

fn apply(kind: OpKind, t: &mut Tape, v: &[Var]) -> Result<Var, TensorError> {
    match kind {
        OpKind::MatMul => t.matmul(v[0], v[2]),
        OpKind::Add => t.add(v[0], v[1]),
        OpKind::Sub => t.sub(v[0], v[1]),
        OpKind::Mul => t.mul(v[0], v[1]),
        OpKind::Div => t.div(v[0], v[3]),
        OpKind::Scale => t.scale(v[0], -1.7),
        OpKind::Concat => t.concat(&[v[0], v[1]], 0),
        OpKind::Slice => t.slice(v[0], 1, 1, COLS),
        OpKind::Sum => t.sum(v[0], Some(0)),
        OpKind::Mean => t.mean(v[0], Some(1)),
        OpKind::Max => t.max(v[0], 1),
        OpKind::Tanh => t.tanh(v[0]),
        OpKind::Relu => t.relu(v[0]),
        OpKind::Sigmoid => t.sigmoid(v[0]),
        OpKind::Softmax => t.softmax(v[0], 1),
        OpKind::L2Normalize => t.l2_normalize(v[0], 0),
        OpKind::Exp => t.exp(v[0]),
        OpKind::Log => t.log(v[3]),
        OpKind::Reshape => t.reshape(v[0], &[COLS, ROWS]),
        OpKind::Transpose => t.transpose(v[0]),
        OpKind::GatherRows => t.gather_rows(v[0], &[ROWS - 1, 0, ROWS - 1]),
    }
}

/// Gradient-checks `kind` in isolation on a fixed input. `fault` is forwarded
/// to [`Tape::inject_backward_fault`].
pub fn probe_op(kind: OpKind, fault: Option<OpKind>) -> Result<GradCheckReport, GradCheckError> {
    let params = [
        fixture(&[ROWS, COLS], 0.0, false),
        fixture(&[1, COLS], 1.3, false),
        fixture(&[COLS, 2], 2.1, false),
        fixture(&[ROWS, COLS], 0.4, true),
    ];
    let mut probe = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| probe.constant(p.clone())).collect();
    let out = apply(kind, &mut probe, &vars)?;
    let weights = fixture(probe.shape(out), 3.7, false);
    finite_difference_check(
        |t, v| {
            if let Some(f) = fault {
                t.inject_backward_fault(f);
            }
            let y = apply(kind, t, v)?;
            let w = t.constant(weights.clone());
            let prod = t.mul(y, w)?;
            t.sum(prod, None)
        },
        &params,
        1e-5,
        1e-4,
    )
}

/// Ops whose isolated probe fails.
pub fn failing_ops(fault: Option<OpKind>) -> Result<Vec<OpKind>, GradCheckError> {
    let mut out = Vec::new();
    for kind in OpKind::ALL {
        if !probe_op(kind, fault)?.passed() {
            out.push(kind);
        }
    }
    Ok(out)
}
