//! Frequency-enhanced U-Net deblurring for packed RAW images.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`]: dense `f32`/`f64` tensors, convolution and friends, and a
//!   tape-based reverse-mode differentiator.
//! - [`spectral`]: orthonormal 2-D FFT, centering shift, real/imag packing.
//! - [`afpm`]: patch grids over centered spectra and position-conditioned
//!   modulation.
//! - [`arch`]: frequency blocks and the encoder/decoder network.
//! - [`raw`]: RAW normalization, Bayer packing, synthetic blur pairs.
//! - [`train`]: losses, Adam, cosine schedule, metrics, efficiency
//!   accounting, the training loop and tiled inference.
//! - [`config`]: `key = value` run configuration files.
//! - [`verify`]: self-check suites shared by the CLI and the tests.

pub mod afpm;
pub mod arch;
pub mod config;
pub mod error;
pub mod raw;
pub mod spectral;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
