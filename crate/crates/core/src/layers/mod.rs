//! Layer kernels: convolution, max pooling, fully-connected, ReLU and
//! softmax cross-entropy, each with an exact backward pass.

mod activation;
mod conv;
mod dense;
pub(crate) mod gemm;
mod loss;
mod pool;
pub mod reference;

pub(crate) use activation::relu_in_place;
pub use activation::{relu, relu_backward};
pub(crate) use conv::conv2d_backward_impl;
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub(crate) use dense::fc_backward_impl;
pub use dense::{fc_backward, fc_forward, DenseGrads};
pub use loss::{softmax, softmax_cross_entropy, SoftmaxLoss};
pub use pool::{maxpool_backward, maxpool_forward, PoolParams};
