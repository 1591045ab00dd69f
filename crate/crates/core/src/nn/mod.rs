//! Minimal CPU tensor engine with hand-written backward passes: 3-D
//! convolution, batch normalisation, pooling, affine layers and Adam.

mod layers;
mod param;
mod real;
mod tensor;

pub use layers::{conv_out, global_avg_pool, global_avg_pool_backward, BatchNorm, Conv3d, Dims3, Linear, MaxPool3d, Relu};
pub use param::{parameter_digest, Adam, Module, Param};
pub(crate) use param::join;
pub use real::{gemm, Op, Real};
pub use tensor::Tensor;
