//! Spatial-temporal feature-map registration and recurrent fusion for video
//! semantic segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: pinhole camera model and rigid transforms.
//! - [`warp`]: shift matrices, multi-resolution resizing and z-buffered
//!   forward scatter of feature maps between frames.
//! - [`nn`]: dense tensors, primitive kernels with analytic gradients, a small
//!   recording tape and finite-difference gradient checks.
//! - [`fusion`]: SSMA self-attention and ConvGRU fusion cells, and the
//!   registration-plus-fusion step used inside a recurrent decoder.
//! - [`pipeline`]: a toy encoder-decoder segmentation network in five
//!   variants, with training and evaluation.
//! - [`sequencing`], [`odometry`], [`synthscene`], [`metrics`]: frame
//!   samplers, pose handling and ICP refinement, a synthetic RGB-D scene
//!   generator and segmentation metrics.
//! - [`verify`]: the finite-difference gradient suite.
//! - [`io`], [`cli`]: file formats and the command-line driver.

pub mod cli;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod odometry;
pub mod pipeline;
pub mod raster;
pub mod sequencing;
pub mod synthscene;
pub mod verify;
pub mod warp;

pub use error::{Error, Result};
pub use geometry::{compose_camera_transform, CameraIntrinsics, Pixel, Point3, Pose};
pub use raster::{DepthImage, FeatureMap, LabelImage, RgbImage};
