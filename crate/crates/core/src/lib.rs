//! Depth-regularized Gaussian splatting for sparse-view reconstruction.
//!
//! The crate is organized bottom-up:
//!
//! - [`field`], [`camera`], [`projection`]: primitives, cameras and EWA projection.
//! - [`raster`]: front-to-back compositing of color, depth, hard depth and soft depth.
//! - [`autodiff`]: analytic vector-Jacobian products and a finite-difference checker.
//! - [`losses`]: patch grids, local/global depth normalization, SSIM and the training objective.
//! - [`color`]: spherical harmonics and the hash-grid neural color renderer.
//! - [`train`]: the optimization loop, densification and checkpoints.
//! - [`harness`]: synthetic datasets, dataset I/O, metrics and exporters.

pub mod autodiff;
pub mod camera;
pub mod color;
pub mod error;
pub mod field;
pub mod harness;
pub mod losses;
pub mod projection;
pub mod raster;
pub mod train;

pub use camera::Camera;
pub use error::{Error, Result};
pub use field::{init_random, Aabb, ColorMode, FreezeMask, GaussianField, GaussianPrimitive};
pub use autodiff::{vjp_render, Cotangent, ParamGrads};
pub use color::ColorModel;
pub use raster::{DepthMap, ImageBuffer, RenderKind};
