use super::{Result, Tensor, TensorError};

/// Compares analytic gradients against central differences of `f`.
///
/// Returns the largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
/// over every entry of every parameter. `params` is perturbed in place and
/// restored before returning.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &mut [Tensor<f64>],
    analytic: &[Tensor<f64>],
    epsilon: f64,
) -> Result<f64>
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    if !(epsilon > 0.0) {
        return Err(TensorError::Invalid {
            op: "finite_difference_check",
            reason: format!("epsilon must be positive, got {epsilon}"),
        });
    }
    if params.len() != analytic.len()
        || params
            .iter()
            .zip(analytic)
            .any(|(p, g)| p.shape() != g.shape())
    {
        return Err(TensorError::Invalid {
            op: "finite_difference_check",
            reason: "analytic gradients do not line up with parameters".into(),
        });
    }

    let mut worst = 0.0f64;
    for p in 0..params.len() {
        for i in 0..params[p].len() {
            let original = params[p].data()[i];
            params[p].data_mut()[i] = original + epsilon;
            let plus = f(params);
            params[p].data_mut()[i] = original - epsilon;
            let minus = f(params);
            params[p].data_mut()[i] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(TensorError::NonFinite {
                    op: "finite_difference_check",
                });
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let exact = analytic[p].data()[i];
            let scale = exact.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((exact - numeric).abs() / scale);
        }
    }
    Ok(worst)
}
