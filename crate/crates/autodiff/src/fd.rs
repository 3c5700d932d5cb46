use crate::error::AdError;
use crate::tensor::Tensor;

/// Central-difference gradient of a black-box scalar function.
///
/// Coordinate `k` is `(f(p + h e_k) - f(p - h e_k)) / 2h`.
pub fn finite_diff_gradient<F>(mut loss_fn: F, point: &Tensor, step: f64) -> Result<Tensor, AdError>
where
    F: FnMut(&Tensor) -> Result<f64, AdError>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(AdError::InvalidStep(step));
    }
    let mut probe = point.clone();
    let mut grad = Tensor::zeros(point.shape());
    for k in 0..point.len() {
        let x = point.data()[k];
        probe.data_mut()[k] = x + step;
        let up = loss_fn(&probe)?;
        probe.data_mut()[k] = x - step;
        let down = loss_fn(&probe)?;
        probe.data_mut()[k] = x;
        if !(up.is_finite() && down.is_finite()) {
            return Err(AdError::NonFiniteObjective { coord: k });
        }
        grad.data_mut()[k] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}
