//! Hand-rolled dense-network numerics: forward/backward passes, Adam, and a
//! bit-exact checkpoint container. Inner matrix products go through
//! `matrixmultiply`; everything above them (layer logic, gradients, the
//! optimizer) lives here.

mod adam;
mod checkpoint;
mod gemm;
mod mlp;

pub use adam::{AdamState, ScalarAdam};
pub use checkpoint::{Checkpoint, Section};
pub use mlp::{BatchActivations, Mlp, MlpGrads};

use crate::error::{Error, Result};

/// Mean-squared error over all output elements plus its gradient w.r.t. the
/// predictions: `d mse / d pred_i = 2 (pred_i - target_i) / n`.
pub fn mse_and_grad(pred: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), targets.len(), "prediction/target shape");
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(targets) {
        let diff = p - t;
        loss += diff * diff;
        grad.push(2.0 * diff / n);
    }
    (loss / n, grad)
}

/// One supervised step: forward, MSE, backward, Adam update. Returns the
/// pre-update batch loss. A non-finite loss aborts before touching the
/// parameters.
pub fn train_step(
    net: &mut Mlp,
    opt: &mut AdamState,
    inputs: &[f64],
    targets: &[f64],
) -> Result<f64> {
    let (in_dim, out_dim) = (net.input_dim(), net.output_dim());
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    if !inputs.len().is_multiple_of(in_dim) {
        return Err(Error::DimensionMismatch { expected: in_dim, got: inputs.len() });
    }
    let batch = inputs.len() / in_dim;
    if targets.len() != batch * out_dim {
        return Err(Error::DimensionMismatch { expected: batch * out_dim, got: targets.len() });
    }

    let acts = net.forward_batch(inputs, batch);
    let (loss, d_out) = mse_and_grad(acts.output(), targets);
    if !loss.is_finite() {
        return Err(Error::NumericFailure(format!("training loss is {loss}")));
    }
    let grads = net.backward_batch(inputs, &acts, &d_out, true, false);
    opt.apply(net, &grads);
    Ok(loss)
}

/// Worst relative error between analytic input gradients and central finite
/// differences for a scalar-output network, probing each input dimension
/// with step `h`. The relative error divides by `max(|analytic|, 1e-8)`.
///
/// Only meaningful when `x` sits further than `h` from every ReLU kink
/// (see [`Mlp::min_kink_distance`]); probes that straddle a kink measure a
/// different slope than the one the analytic gradient reports.
pub fn finite_diff_check(net: &Mlp, x: &[f64], h: f64) -> Result<f64> {
    let analytic = net.input_gradient(x)?;
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let up = net.forward_scalar(&probe)?;
        probe[j] = x[j] - h;
        let down = net.forward_scalar(&probe)?;
        probe[j] = x[j];
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - analytic[j]).abs() / analytic[j].abs().max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
