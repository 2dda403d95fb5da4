//! Tape-based reverse-mode automatic differentiation.
//!
//! Branches in recorded code are taken on plain values and are not
//! differentiated: the gradient is that of the active branch. `abs` has a
//! zero partial at the origin, and `max`/`min` assign the whole partial to
//! their first argument on an exact tie.

mod scalar;
mod tape;

pub use scalar::Scalar;
pub use tape::{record, AdjointVector, ElementaryOp, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdError {
    #[error("unsupported operation `{0}`")]
    Unsupported(String),
    #[error("operation `{op}` expects {expected} argument(s), got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },
    #[error("domain error in `{op}` at node {node} (argument {value})")]
    Domain { op: &'static str, node: usize, value: f64 },
    #[error("seed has dimension {got}, tape has {expected} outputs")]
    SeedDimension { expected: usize, got: usize },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec<F>(x: &[f64], f: F) -> (Tape, Vec<f64>)
    where
        F: FnOnce(&[Var]) -> Vec<Var>,
    {
        record::<AdError, _>(x, |v| Ok(f(v))).unwrap()
    }

    #[test]
    fn square_records_one_mul() {
        let (tape, out) = rec(&[3.0], |v| vec![v[0] * v[0]]);
        assert_eq!(out, vec![9.0]);
        assert_eq!(tape.operation_count(), 1);
        assert_eq!(tape.op(1), ElementaryOp::Mul);
        assert_eq!(tape.backward(&[1.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn product_plus_term() {
        let (tape, out) = rec(&[2.0, 5.0], |v| vec![v[0] * v[1] + v[1]]);
        assert_eq!(out, vec![15.0]);
        assert_eq!(tape.backward(&[1.0]).unwrap(), vec![5.0, 3.0]);
        let (tape, _) = rec(&[2.0, 5.0], |v| vec![v[0] * v[1]]);
        assert_eq!(tape.backward(&[1.0]).unwrap(), vec![5.0, 2.0]);
    }

    #[test]
    fn tie_rules() {
        let (t, _) = rec(&[3.0, 3.0], |v| vec![v[0].max(v[1])]);
        assert_eq!(t.backward(&[1.0]).unwrap(), vec![1.0, 0.0]);
        let (t, _) = rec(&[3.0, 4.0], |v| vec![v[0].max(v[1])]);
        assert_eq!(t.backward(&[1.0]).unwrap(), vec![0.0, 1.0]);
        let (t, _) = rec(&[2.0, 2.0], |v| vec![v[0].min(v[1])]);
        assert_eq!(t.backward(&[1.0]).unwrap(), vec![1.0, 0.0]);
        let (t, _) = rec(&[0.0], |v| vec![v[0].abs()]);
        assert_eq!(t.backward(&[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn domain_errors_name_the_node() {
        let err = record::<AdError, _>(&[-1.0], |v| Ok(vec![(v[0] * 2.0).ln()])).unwrap_err();
        assert!(matches!(err, AdError::Domain { op: "ln", node: 2, .. }), "{err:?}");
        let err = record::<AdError, _>(&[-1.0], |v| Ok(vec![v[0].sqrt()])).unwrap_err();
        assert!(matches!(err, AdError::Domain { op: "sqrt", .. }));
    }

    #[test]
    fn unsupported_op_is_rejected() {
        let err = record::<AdError, _>(&[1.0], |v| Ok(vec![Var::apply("tanh", &[v[0]], None)?])).unwrap_err();
        assert_eq!(err, AdError::Unsupported("tanh".into()));
        let (t, out) = record::<AdError, _>(&[2.0], |v| Ok(vec![Var::apply("pow", &[v[0]], Some(3.0))?])).unwrap();
        assert_eq!(out[0], 8.0);
        assert_eq!(t.backward(&[1.0]).unwrap(), vec![12.0]);
    }

    #[test]
    fn seed_dimension_checked() {
        let (t, _) = rec(&[1.0, 2.0], |v| vec![v[0] + v[1], v[0] * v[1]]);
        assert_eq!(t.backward(&[1.0]), Err(AdError::SeedDimension { expected: 2, got: 1 }));
    }

    #[test]
    fn constants_fold_off_tape() {
        let (t, out) = rec(&[1.5], |v| {
            let c = Var::constant(2.0) * Var::constant(3.0) + Var::constant(1.0);
            let z = v[0] * Var::constant(0.0);
            vec![c, z, v[0] * 1.0]
        });
        assert_eq!(out, vec![7.0, 0.0, 1.5]);
        assert_eq!(t.operation_count(), 0);
        assert_eq!(t.backward(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn nested_recordings_are_independent() {
        let (t, out) = rec(&[2.0], |v| {
            let x = v[0] * v[0];
            let inner = x.value();
            let (it, _) = rec(&[inner], |w| vec![w[0].exp()]);
            let g = it.backward(&[1.0]).unwrap()[0];
            vec![x * g]
        });
        let expected = 4.0 * 4.0f64.exp();
        assert_eq!(out[0], expected);
        assert_eq!(t.backward(&[1.0]).unwrap()[0], 4.0f64.exp() * 4.0);
    }

    #[test]
    fn rerecord_reuses_storage() {
        let (mut t, _) = rec(&[1.0, 2.0], |v| vec![v[0] * v[1]]);
        let out = t.rerecord::<AdError, _>(&[3.0, 4.0], |v| Ok(vec![v[0] * v[1], v[0].exp()])).unwrap();
        assert_eq!(out[0], 12.0);
        assert_eq!(t.output_count(), 2);
        assert_eq!(t.backward(&[1.0, 0.0]).unwrap(), vec![4.0, 3.0]);
    }
}
