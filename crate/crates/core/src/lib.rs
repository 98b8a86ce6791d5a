//! Restoration of single-band satellite images degraded by blur, decimation and
//! signal-dependent Gaussian noise.
//!
//! Two families of solvers share one forward model:
//!
//! * [`satdpir`]: half-quadratic splitting with a plug-in Gaussian denoiser and a
//!   two-phase data-fit step, for fast point estimates.
//! * [`vble`]: variational Bayes in the latent space of a compressive autoencoder
//!   (optionally joint with an image-space Gaussian), for posterior samples and
//!   per-pixel error bounds, calibrated with [`uncertainty`].

pub mod cae;
pub mod denoise;
pub mod error;
pub mod fft;
pub mod forward;
pub mod image;
pub mod io;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod satdpir;
pub mod synth;
pub mod uncertainty;
pub mod vble;

pub use error::{Error, Result};
pub use forward::ForwardModel;
pub use image::{ImageGrid, Kernel};
pub use rng::Rng;
