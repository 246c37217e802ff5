//! Double-precision kernels for the attention block and the loss.

mod cbam;
mod focal;
mod gradcheck;
mod tensor;

pub use cbam::{
    cbam_backward, cbam_forward, cbam_grad_check, cbam_grad_check_with, channel_attention, spatial_attention,
    CbamCache, CbamObjective, CbamParams, DEFAULT_KERNEL_SIZE, DEFAULT_REDUCTION,
};
pub use focal::{focal_loss, focal_loss_grad, focal_loss_mean, FocalBatch, FocalEval, FocalParams, PT_FLOOR};
pub use gradcheck::{grad_check, relative_error, Differentiable, GradReport};
pub use tensor::Tensor4;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
