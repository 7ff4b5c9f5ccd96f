//! Adverse-weather robustness tooling for LiDAR semantic segmentation.
//!
//! The crate covers the whole loop at desk scale:
//!
//! * [`pointcloud`]: columnar clouds, `.bin`/`.label` codecs, spherical geometry
//!   and a synthetic labeled-scene generator.
//! * [`distortion`]: the four weather distortions (point drop, occlusion,
//!   geometric perturbation, intensity distortion).
//! * [`augment`]: selective jittering (depth-selective, angle-selective, range).
//! * [`nn`]: a small dense network with backprop and clipped SGD.
//! * [`surrogate`]: a per-point segmentation model built on [`nn`].
//! * [`lpd`]: learnable point drop, a DQN that picks which region to erase.
//! * [`eval`]: confusion matrices, IoU and mIoU.
//! * [`ply`], [`config`], [`jobs`]: export, configuration and batch jobs used by the CLI.

pub mod augment;
pub mod config;
pub mod distortion;
pub mod error;
pub mod eval;
pub mod io;
pub mod jobs;
pub mod lpd;
pub mod nn;
pub mod ply;
pub mod pointcloud;
pub mod rng;
pub mod surrogate;

pub use error::{Error, Result};
pub use pointcloud::{LabelArray, PointCloud};
