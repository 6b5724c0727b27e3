use super::loss::{loss, LossKind};
use super::network::{Mode, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient of the loss with respect to every trainable
/// parameter. A test oracle: O(parameters) forward passes.
///
/// In train mode each evaluation reuses the same dropout seed, so the mask is
/// held fixed across perturbations.
pub fn finite_diff_gradient(
    network: &Network,
    input: &Tensor,
    target: &Tensor,
    kind: LossKind,
    h: f64,
    mode: Mode,
) -> Result<Vec<f64>> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Config(format!(
            "finite-difference step {h} outside [1e-7, 1e-3]"
        )));
    }
    let mut net = network.clone();
    let base = network.trainable().to_vec();
    let mut theta = base.clone();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        theta[i] = base[i] + h;
        net.set_trainable(&theta)?;
        let plus = loss(kind, &net.forward(input, mode)?.0, target)?;
        theta[i] = base[i] - h;
        net.set_trainable(&theta)?;
        let minus = loss(kind, &net.forward(input, mode)?.0, target)?;
        theta[i] = base[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Central-difference gradient with respect to the input values.
pub fn finite_diff_input_gradient(
    network: &Network,
    input: &Tensor,
    target: &Tensor,
    kind: LossKind,
    h: f64,
    mode: Mode,
) -> Result<Vec<f64>> {
    let mut x = input.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.values()[i];
        x.values_mut()[i] = orig + h;
        let plus = loss(kind, &network.forward(&x, mode)?.0, target)?;
        x.values_mut()[i] = orig - h;
        let minus = loss(kind, &network.forward(&x, mode)?.0, target)?;
        x.values_mut()[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}
