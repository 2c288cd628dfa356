//! Dense double-precision numeric kernel: tensors, recurrent cells,
//! attention, softmax/cross-entropy, Adam and a finite-difference checker.
//!
//! Models wire their own backward passes out of the per-kernel backward
//! functions here; there is no tape.

mod attention;
pub mod dd;
mod gemm;
mod gradcheck;
mod loss;
mod lstm;
mod optim;
mod params;
mod tensor;

pub use attention::{
    additive_attention, attend_projected, attend_projected_backward, mhsa_backward, mhsa_forward,
    AdditiveAttention, AttendCache, AttendGrads, MhsaCache, MhsaView, MultiHeadSelfAttention,
};
pub use gemm::gemm;
pub use gradcheck::{finite_diff_check, GradCheckReport, FD_STEP};
pub use loss::{compensated_sum, log_softmax, softmax, softmax_crossentropy, SoftmaxCe};
pub use lstm::{
    lstm_step_backward, lstm_step_forward, LstmCell, LstmCellGrads, LstmStepCache, LstmView, FORGET_BIAS_INIT,
};
pub use optim::OptimState;
pub use params::ParamStore;
pub use tensor::Tensor;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
