//! Plug-and-play compressed-sensing reconstruction over masked Fourier
//! operators.
//!
//! The crate is organised bottom-up:
//!
//! * [`image`], [`fourier`]: complex images and the unitary 2D DFT.
//! * [`mask`], [`forward`], [`phantom`]: sampling masks, the measurement
//!   operator, noise injection and synthetic test images.
//! * [`denoiser`], [`wavelet`], [`external`]: denoisers, divergence
//!   estimation and the client for out-of-process denoisers.
//! * [`linear`]: the closed-form linear stage shared by ADMM and VAMP.
//! * [`solvers`]: AMP, ADMM, ADMM-PR, DD-VAMP and DD-VAMP++.
//! * [`metrics`], [`experiments`]: NMSE/SSIM, batch runs and grid tuning.
//! * [`config`], [`cli`]: `key = value` files and the `pnprecon` command line.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod experiments;
pub mod external;
pub mod forward;
pub mod fourier;
pub mod image;
pub mod linear;
pub mod mask;
pub mod metrics;
pub mod phantom;
pub mod solvers;
pub mod wavelet;

pub use denoiser::{Denoiser, DenoiserHandle};
pub use error::{Error, Result};
pub use forward::{ForwardOperator, Problem};
pub use image::ComplexImage;
pub use mask::SamplingMask;
pub use solvers::{solve, Algorithm, Recon, SolverConfig, SolverTrace};
