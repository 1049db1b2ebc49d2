//! Dilated and encoder-decoder segmentation networks (sUNet, sDeepLab,
//! BowNet, wBowNet) for contour extraction from noisy grayscale frames.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, reverse-mode tape, Adam, gradient checks.
//! - [`arch`]: network topologies, parameter accounting, checkpoints.
//! - [`data`]: loading, augmentation, label enhancement, undersampling,
//!   splitting and a synthetic frame generator.
//! - [`contour`]: thresholding, largest object, skeletons, MSD and metrics.
//! - [`spline`]: B-spline fitting through annotation markers and rasterizing.
//! - [`harness`]: training loop, sweeps, repeated runs, cross tests, reports.

pub mod arch;
pub mod contour;
pub mod data;
mod error;
pub mod harness;
pub mod raster;
pub mod spline;
pub mod tensor;

pub use arch::{ArchConfig, ModelKind, NetGraph, Network, Variant};
pub use error::{Error, Result};
pub use raster::{BinaryMask, Plane};
pub use tensor::{Tape, Tensor, Var};
