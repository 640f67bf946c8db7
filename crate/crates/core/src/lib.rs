//! A small convolutional denoising-autoencoder lab: tensor kernels with
//! hand-derived gradients, a mini-batch training loop, seeded pixel
//! corruption, SSIM/PSNR metrics, classical baseline filters, grayscale
//! image I/O, and an experiment harness that ties them together.
//!
//! The numeric core is generic over [`scalar::Scalar`] (f32 or f64); the
//! shipped pipeline runs at f32 via the aliases below.

pub mod baselines;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod network;
pub mod noise;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use scalar::Scalar;

/// The pipeline's tensor type (32-bit elements).
pub type Tensor32 = tensor::Tensor<f32>;
/// The pipeline's image type (32-bit elements).
pub type Image32 = tensor::Image<f32>;
/// The pipeline's convolution parameter type (32-bit elements).
pub type ConvWeights32 = tensor::ConvWeights<f32>;
