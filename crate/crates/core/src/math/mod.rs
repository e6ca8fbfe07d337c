//! Dense tensors, reverse-mode differentiation and optimizers.

mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{clip_grad_norm, AdamWConfig, AdamWState, Optimizer};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{lse, sigmoid, softmax_in_place, CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::{dot, gemm_acc, gemm_nt_acc, gemm_tn_acc};
