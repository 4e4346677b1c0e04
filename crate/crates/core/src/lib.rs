pub mod analysis;
pub mod bench;
pub mod blocks;
pub mod corpus;
pub mod error;
pub mod finetune_asr;
pub mod numerics;
pub mod pretrain;
pub mod scalar;
pub mod ssm;

pub use error::{Error, Result};
pub use numerics::Tensor;
pub use scalar::{DType, Scalar};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
