use std::sync::Arc;

use thiserror::Error;

use super::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("epsilon {0:e} outside (1e-8, 1e-2)")]
    Epsilon(f64),
    #[error("function is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Location of a single parameter coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinate {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error, if any coordinate was checked.
    pub worst: Option<Coordinate>,
    /// Largest relative error per parameter tensor, in input order.
    pub per_param: Vec<f64>,
    pub coordinates: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub(crate) fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `f` with central differences.
///
/// `f` receives a fresh tape and one trainable leaf per entry of `params`
/// and must return a single-element loss.
pub fn finite_difference_check<F>(
    f: F,
    params: &[Tensor],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    if !(epsilon > 1e-8 && epsilon < 1e-2) {
        return Err(GradCheckError::Epsilon(epsilon));
    }
    let eval = |values: &[Arc<Tensor>]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf((**v).clone(), false)).collect();
        let loss = f(&mut tape, &vars)?;
        let v = tape.value(loss);
        v.item().ok_or_else(|| TensorError::NonScalarLoss {
            shape: v.shape().to_vec(),
        })
    };

    let mut values: Vec<Arc<Tensor>> = params.iter().cloned().map(Arc::new).collect();
    let first = eval(&values)?;
    let second = eval(&values)?;
    if first.to_bits() != second.to_bits() {
        return Err(GradCheckError::NonDeterministic { first, second });
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = values.iter().map(|v| tape.param(Arc::clone(v))).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| grads.get(*v).cloned().expect("trainable leaf"))
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        per_param: vec![0.0; params.len()],
        coordinates: 0,
        tolerance,
    };
    for p in 0..values.len() {
        for i in 0..values[p].len() {
            let orig = values[p].data()[i];
            Arc::make_mut(&mut values[p]).data_mut()[i] = orig + epsilon;
            let plus = eval(&values)?;
            Arc::make_mut(&mut values[p]).data_mut()[i] = orig - epsilon;
            let minus = eval(&values)?;
            Arc::make_mut(&mut values[p]).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[p].data()[i];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            report.per_param[p] = report.per_param[p].max(err);
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(Coordinate {
                    param: p,
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn sum_of_squares_matches() {
        let params = [Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap()];
        let report = finite_difference_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq, None)
            },
            &params,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(report.coordinates, 3);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let params = [Tensor::row(&[0.3, -0.7])];
        let report = finite_difference_check(
            |t, _| Ok(t.constant(Tensor::scalar(4.0))),
            &params,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn detects_non_determinism() {
        let counter = Cell::new(0.0);
        let params = [Tensor::row(&[1.0])];
        let err = finite_difference_check(
            |t, v| {
                counter.set(counter.get() + 1.0);
                let s = t.sum(v[0], None)?;
                t.add_scalar(s, counter.get())
            },
            &params,
            1e-5,
            1e-6,
        )
        .unwrap_err();
        assert!(matches!(err, GradCheckError::NonDeterministic { .. }));
    }

    #[test]
    fn rejects_bad_epsilon() {
        let params = [Tensor::row(&[1.0])];
        let r = finite_difference_check(|t, v| t.sum(v[0], None), &params, 0.1, 1e-4);
        assert!(matches!(r, Err(GradCheckError::Epsilon(_))));
    }

    #[test]
    fn injected_fault_is_caught() {
        let params = [Tensor::row(&[0.2, -0.4])];
        let report = finite_difference_check(
            |t, v| {
                t.inject_backward_fault(crate::tensor::OpKind::Tanh);
                let y = t.tanh(v[0])?;
                t.sum(y, None)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.passed());
    }
}
