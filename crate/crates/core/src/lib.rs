//! Spatial-temporal continuous scans, selective state-space kernels,
//! patch-level momentum-contrastive losses and a toy three-stage video
//! denoising harness, all small enough to verify against brute-force oracles.

pub mod bench;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod mamba3d;
pub mod moco;
pub mod numerics;
pub mod params;
pub mod scan;
pub mod selftest;
pub mod ssm;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use numerics::{Real, Rng, Tensor};
pub use params::ParamSet;
