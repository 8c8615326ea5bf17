//! Central-difference gradient checking against the tape's backward pass.

use std::collections::BTreeMap;

use cgfuse::tensor::Tensor;

/// Relative error with a unit floor, so tiny gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

/// Checks analytic gradients for `params` against central differences of
/// `loss`, probing up to `samples` spread-out coordinates per tensor.
/// Returns (worst relative error, coordinates checked).
pub fn check_grads(
    params: &BTreeMap<String, Tensor>,
    analytic: &BTreeMap<String, Tensor>,
    samples: usize,
    eps: f32,
    loss: impl Fn(&BTreeMap<String, Tensor>) -> f32,
) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (name, grad) in analytic {
        let len = grad.data().len();
        let stride = (len / samples).max(1);
        for i in (0..len).step_by(stride) {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += eps;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= eps;
            let fd = (loss(&plus) as f64 - loss(&minus) as f64) / (2.0 * eps as f64);
            let err = rel_err(fd, grad.data()[i] as f64);
            assert!(
                err.is_finite(),
                "{name}[{i}]: non-finite comparison (fd {fd}, analytic {})",
                grad.data()[i]
            );
            if err > worst {
                worst = err;
            }
            checked += 1;
        }
    }
    (worst, checked)
}
