//! Mesh-conditioned Gaussian-surfel scene synthesis.
//!
//! Given a labeled, untextured triangle mesh and a camera path, the pipeline
//! generates sparse key views backwards along the path (warp and outpaint),
//! lifts every generated pixel onto the mesh as a flattened Gaussian surfel,
//! fills holes at intermediate views with appearance-guided inpainting, and
//! harmonizes appearance across views with a batched consistency alignment.
//!
//! Generators are pluggable. The crate ships a procedural oracle backend that
//! is multi-view consistent by construction and an analytic Gaussian-mixture
//! denoiser, which together make the whole pipeline verifiable end to end.

pub mod aginpaint;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod export;
pub mod gcalign;
pub mod genbackend;
pub mod imageio;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod scene;
pub mod splatter;
pub mod surfel;
pub mod warp;

pub use error::{Error, Result};

/// 3D vector in world or camera coordinates (meters).
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrix, used for rotations and covariances.
pub type Mat3 = nalgebra::Matrix3<f64>;
/// Linear RGB triple in `[0, 1]`.
pub type Rgb = [f64; 3];
