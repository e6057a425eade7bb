//! Finite-difference gradient checking.

use crate::error::Result;
use crate::nn::loss::LossHead;
use crate::nn::mlp::MlpParameters;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / (||a|| + ||b||)`, falling back to the absolute error when
/// both vectors are numerically zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

/// Per-sample loss of `head` at input `x`.
pub fn sample_loss(params: &MlpParameters, x: &[f64], head: &LossHead) -> Result<f64> {
    let (z, _) = params.forward(x)?;
    Ok(head.loss_and_logit_grad(&z)?.0)
}

/// Relative error between backprop and central differences over every
/// weight and bias of `params` for one sample.
pub fn check_param_gradients(params: &MlpParameters, x: &[f64], head: &LossHead, h: f64) -> Result<f64> {
    let (z, cache) = params.forward(x)?;
    let (_, dz) = head.loss_and_logit_grad(&z)?;
    let analytic = params.backprop(&cache, &dz)?.flatten();

    let mut probe = params.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..params.num_params() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + h;
        let up = sample_loss(&probe, x, head)?;
        *probe.param_mut(i) = orig - h;
        let down = sample_loss(&probe, x, head)?;
        *probe.param_mut(i) = orig;
        numeric.push((up - down) / (2.0 * h));
    }
    Ok(relative_error(&analytic, &numeric))
}
