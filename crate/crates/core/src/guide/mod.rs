//! Guiding geometry: mean-shape SDF, surface extraction, smoothing and rendering.

pub mod grid;
pub mod laplacian;
pub mod mtet;
pub mod render;
pub mod sdf;

pub use grid::TetGrid;
pub use laplacian::{laplacian_backward, laplacian_loss, umbrella_residuals, Adjacency};
pub use mtet::{marching_tets, marching_tets_backward, marching_tets_serial, GuideMesh};
pub use render::{guide_splats, render_guide, render_guide_backward, GuideRender, GuideSplatStyle};
pub use sdf::{
    ellipsoid_sdf, eval_sdf_field, eval_sdf_field_backward, pretrain_ellipsoid, PretrainConfig, SdfNet, SdfTape,
};
