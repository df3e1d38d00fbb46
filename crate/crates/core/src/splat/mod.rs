//! Differentiable 3D Gaussian splatting.

pub mod camera;
pub mod oracle;
pub mod project;
pub mod random;
pub mod raster;
pub mod set;

pub use camera::Camera;
pub use oracle::oracle_rasterize;
pub use project::{project_backward, project_one, project_splats, Projected, ProjectedGrad};
pub use raster::{rasterize, rasterize_backward, rasterize_with, FeatureImage, RasterOptions, RasterTape};
pub use set::{Splat, SplatGrads, SplatSet};
