//! Dense tensor arithmetic and the finite-difference gradient oracle.

pub mod counter;
pub mod grad;
pub mod io;
pub mod ops;
pub mod tensor;

pub use grad::{finite_diff_grad, max_rel_err};
pub use ops::{
    activation, conv1d, conv1d_backward, gelu, layer_norm, matmul, silu, softmax_axis, softplus,
    Activation, Conv1dSpec, Padding,
};
pub use tensor::Tensor;
