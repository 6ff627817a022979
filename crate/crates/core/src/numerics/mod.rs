//! Dense f64 tensors, a reverse-mode tape, and the Adam optimizer.

mod params;
mod tape;
mod tensor;

pub use params::{adam_step, AdamConfig, Param, ParamId, ParamStore};
pub use tape::{second_difference_loss, Grads, Tape, Var};
pub use tensor::{
    layer_norm, masked_softmax, matmul, sigmoid, silu, silu_scalar, Tensor, LN_EPS, MASKED,
};
