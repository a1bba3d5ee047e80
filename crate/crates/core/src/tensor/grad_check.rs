//! Central finite-difference gradient checking.

use super::{Tape, Tensor, TensorError, ValueId};

/// Per-leaf worst relative error between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (leaf position, max relative error over that leaf's elements)
    pub per_leaf: Vec<(usize, f64)>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Relative error with an absolute floor so near-zero gradients compare sanely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Compare the tape's gradients for `f` against central finite differences
/// at `points`. `f` must build a scalar result from the given leaf ids.
pub fn grad_check<F>(f: F, points: &[Tensor], step: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[ValueId]) -> Result<ValueId, TensorError>,
{
    if step <= 0.0 {
        return Err(TensorError::InvalidArgument {
            op: "grad_check",
            detail: format!("step must be positive, got {}", step),
        });
    }
    let eval = |pts: &[Tensor]| -> Result<(f64, Vec<Vec<f64>>), TensorError> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = pts.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &ids)?;
        if !tape.value(out).is_scalar() {
            return Err(TensorError::NotScalar { op: "grad_check", shape: tape.value(out).shape().to_vec() });
        }
        let loss = tape.value(out).item();
        tape.backward(out)?;
        let grads = ids.iter().map(|&id| tape.grad_or_zeros(id)).collect();
        Ok((loss, grads))
    };

    let (_, analytic) = eval(points)?;

    let eval_value = |pts: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = pts.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &ids)?;
        Ok(tape.value(out).item())
    };

    let mut per_leaf = Vec::with_capacity(points.len());
    let mut max_rel_err = 0.0f64;
    let mut work: Vec<Tensor> = points.to_vec();
    for (li, point) in points.iter().enumerate() {
        let mut leaf_max = 0.0f64;
        for (ei, &orig) in point.data().iter().enumerate() {
            work[li].data_mut()[ei] = orig + step;
            let up = eval_value(&work)?;
            work[li].data_mut()[ei] = orig - step;
            let down = eval_value(&work)?;
            work[li].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic[li][ei], numeric);
            leaf_max = leaf_max.max(err);
        }
        max_rel_err = max_rel_err.max(leaf_max);
        per_leaf.push((li, leaf_max));
    }
    Ok(GradCheckReport { per_leaf, max_rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_zero_error() {
        // Binary-representable values and a power-of-two step keep the
        // central difference of a plain sum exact.
        let point = Tensor::new(vec![4], vec![0.25, -1.5, 2.0, 0.75]).unwrap();
        let report = grad_check(|tape, ids| Ok(tape.sum_all(ids[0])), &[point], 0.0078125).unwrap();
        assert_eq!(report.max_rel_err, 0.0);

        // Arbitrary points still agree to near machine precision.
        let point = Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let report = grad_check(|tape, ids| Ok(tape.sum_all(ids[0])), &[point], 1e-5).unwrap();
        assert!(report.max_rel_err < 1e-9, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn softmax_cross_entropy_matches_hand_gradient() {
        let point = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        let report = grad_check(
            |tape, ids| tape.softmax_cross_entropy(ids[0], 0),
            &[point],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn rejects_non_scalar_objective() {
        let point = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(|tape, ids| Ok(tape.relu(ids[0])), &[point], 1e-5).unwrap_err();
        assert!(matches!(err, TensorError::NotScalar { .. }));
    }
}
