//! A from-scratch engine for compact convolutional classifiers.
//!
//! The crate covers the whole life cycle of a small traffic-sign network:
//!
//! - [`tensor`]: NCHW tensors in float32, float16 or 16-bit fixed point.
//! - [`layers`]: convolution, max pooling, fully-connected, ReLU and softmax
//!   cross-entropy with exact gradients.
//! - [`network`]: architecture descriptors, the 43-class default network,
//!   initialisation, forward/backward and the weight-file format.
//! - [`training`]: SGD with momentum, staircase learning-rate decay and L2
//!   weight decay.
//! - [`quantization`]: post-training float16 / fixed16 conversion and
//!   parity checks against the float32 model.
//! - [`efficiency`]: exact parameter and MAC counts, information density
//!   and NetScore.
//! - [`search`]: parameter minimisation over filter counts and kernel sizes
//!   under a validation-accuracy floor.
//! - [`data`]: benchmark ingestion, crop/resize, augmentation, class
//!   balancing, noise degradation and a synthetic glyph dataset.
//! - [`cli`]: the `micronnet` command surface.

pub mod cli;
pub mod data;
pub mod efficiency;
pub mod error;
pub mod layers;
pub mod network;
pub mod quantization;
pub mod search;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use network::{micronnet_default, ArchitectureSpec, LayerSpec, Network};
pub use tensor::{ScalarFormat, Tensor};
