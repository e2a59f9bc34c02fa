//! Holographic data-storage read-channel simulator.
//!
//! Bit pages are rendered as amplitude fields, recorded as inline holograms,
//! reconstructed by angular-spectrum back-propagation, degraded by a sensor
//! model, cut into 4-bit fragments and classified by a hand-written CNN, an MLP
//! or a matched-filter baseline.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the pipeline uses.

pub mod datapage;
pub mod nn;
pub mod optics;
pub mod pipeline;
pub mod scalar;

pub use scalar::{FftScalar, Scalar};

/// Double-precision complex field.
pub type Field = optics::ComplexField<f64>;
/// Double-precision intensity image.
pub type Image = optics::IntensityImage<f64>;
/// Double-precision sampling description.
pub type Sampling = optics::Sampling<f64>;
/// Double-precision angular-spectrum propagator.
pub type Propagator = optics::Propagator<f64>;
/// Double-precision tensor.
pub type Tensor = nn::Tensor<f64>;
/// Double-precision network.
pub type Network = nn::Network<f64>;
/// Double-precision fragment.
pub type Fragment = datapage::Fragment<f64>;
