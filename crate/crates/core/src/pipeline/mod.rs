//! Two-stage training, guide-to-Gaussian migration, fitting and editing.

pub mod common;
pub mod config;
pub mod fit;
pub mod gaussian;
pub mod guide;
pub mod objective;

pub use common::{StepRecord, TrainReport, STAGE_GAUSSIAN, STAGE_GAUSSIAN_INIT, STAGE_GUIDE};
pub use config::{apply_override, apply_overrides, GridConfig, TrainConfig};
pub use fit::{edit_expression, fit_image, interpolate_codes, FitRow, FitSchedule, FittedHead, STAGE_FITTED};
pub use gaussian::{
    canonical_positions, ellipsoid_points, evaluate_gaussian, migrate, naive_init, render_gaussian_view, train_gaussian,
    GaussianHead, GaussianTrainer, GaussianView, TEMPLATE_RADII,
};
pub use guide::{
    evaluate_guide, mean_geometry, render_guide_view, train_guide, GuideGeometry, GuideModel, GuideTrainer, GuideView,
};
pub use objective::ViewTarget;
