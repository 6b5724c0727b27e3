//! Differentiable network substrate: layers, forward/backward passes, losses.

mod gradcheck;
pub mod kernels;
mod layer;
mod loss;
mod network;

pub use gradcheck::{finite_diff_gradient, finite_diff_input_gradient};
pub use layer::{LayerSpec, SampleShape};
pub use loss::{loss, loss_gradient, one_hot, LossKind, PROB_FLOOR};
pub use network::{
    softmax_into, Architecture, ForwardCache, Gradients, Mode, Network, NetworkParams, ParamBlock, BATCH_NORM_EPS,
    BATCH_NORM_MOMENTUM,
};

/// `||a - b|| / max(||a||, ||b||)`, 0 when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
