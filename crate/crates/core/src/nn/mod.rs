//! Minimal differentiable tensor layer.
//!
//! Provides exactly the operations the convolutional VAE needs: 4-D tensors,
//! convolution and transposed convolution (with reverse-mode gradients),
//! batch normalization, ReLU/sigmoid, Xavier-uniform initialization, Gaussian
//! sampling, and the Adam optimizer. Nothing here is a general autodiff
//! system; each layer exposes an explicit `forward` that produces a cache and
//! a `backward` that consumes it.

mod adam;
mod batchnorm;
mod conv;
mod init;
mod network;
mod ops;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BnCache, BN_EPS, BN_MOMENTUM};
pub use conv::{
    conv2d, conv2d_backward, deconv2d, deconv2d_backward, deconv_output_hw, ConvGrads, Padding,
};
pub use init::{randn, xavier_bound, xavier_init, xavier_uniform};
pub use network::{Layer, LayerCache, Mode, Network};
pub use ops::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use params::{ParamEntry, ParamStore};
pub use tensor::Tensor4;
