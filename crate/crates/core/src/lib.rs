//! Smoke removal toolkit.
//!
//! The crate is organised around a planar [`Image`] type with intensities in
//! `[0, 1]` and a small set of pipelines built on it:
//!
//! * [`smokesim`] renders paired clean/smoky data through the atmospheric
//!   scattering model `I = J t + A (1 - t)`.
//! * [`quality`] holds full-reference metrics (RMSE, PSNR, SSIM, MS-SSIM,
//!   CIEDE2000) together with analytic SSIM/MS-SSIM gradients.
//! * [`classic`] implements dark-channel-prior dehazing and a veil remover.
//! * [`spectral`] measures periodic grid artifacts in the Fourier domain.
//! * [`neuro`] is a minimal CPU network kit and conditional GAN trainer.
//! * [`bench`] evaluates methods and runs the with/without MS-SSIM experiment.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for the common cases.

pub mod bench;
pub mod classic;
pub mod error;
pub mod imgio;
pub mod neuro;
pub mod quality;
pub mod scalar;
pub mod scenes;
pub mod smokesim;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double precision image, the default for metrics and data generation.
pub type Image = imgio::Image<f64>;
/// Single precision image, used on the training path.
pub type ImageF32 = imgio::Image<f32>;
pub type Plane = imgio::Plane<f64>;
pub type LabImage = imgio::LabImage<f64>;
pub type TransmissionMap = smokesim::TransmissionMap<f64>;
pub type Spectrum = spectral::Spectrum<f64>;
pub type Tensor = neuro::Tensor<f32>;
pub type TensorF64 = neuro::Tensor<f64>;
pub type SsimParams = quality::SsimParams<f64>;
pub type MsSsimParams = quality::MsSsimParams<f64>;
