//! Likelihood-based outlier detection with convolutional variational
//! autoencoders.
//!
//! The crate trains small convolutional VAEs, estimates per-sample marginal
//! log-likelihoods with an importance-weighted bound, applies three remedies
//! for the well-known biases in those likelihoods (a sample-specific
//! bias-correction term, contrast normalization of the inputs, and the
//! variance of the likelihood across an ensemble), and evaluates outlier
//! detection across dataset pairs with AUROC / AUPRC / FPR@TPR metrics.
//!
//! Module map:
//!
//! - [`nn`] — minimal differentiable tensor substrate (conv, deconv,
//!   batchnorm, activations, Adam, Xavier init) with reverse-mode gradients.
//! - [`dists`] — visible distributions (Bernoulli, continuous Bernoulli,
//!   categorical), their log-densities and perfect-reconstruction
//!   correction terms.
//! - [`data`] — dataset ingestion (IDX, image directories), resizing,
//!   splitting, noise generation, contrast stretching, histogram
//!   equalization, and simulated intensity / contrast sweeps.
//! - [`vae`] — the encoder/decoder pair, ELBO training with
//!   best-validation checkpointing, and the importance-weighted
//!   log-likelihood estimator.
//! - [`scoring`] — per-sample outlier scores (LL, BC-LL, EV-LL, WAIC, IC).
//! - [`eval`] — threshold-free metrics, all-vs-all grid reports,
//!   affine-perturbation probes.
//!
//! Numeric kernels are generic over the scalar type via [`Scalar`]; models
//! train in `f32` and gradient checks instantiate the same code at `f64`.

pub mod data;
pub mod dists;
pub mod error;
pub mod eval;
pub mod nn;
pub mod scalar;
pub mod scoring;
pub mod vae;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default precision for training and stored model parameters.
pub type TrainScalar = f32;
/// Precision used for scores, corrections, and gradient checking.
pub type Real = f64;

/// Four-dimensional tensor at training precision.
pub type Tensor4f = nn::Tensor4<f32>;
/// Four-dimensional tensor at checking precision.
pub type Tensor4d = nn::Tensor4<f64>;
