//! Training objectives and evaluation metrics.

pub mod metrics;
pub mod perceptual;
pub mod terms;
pub mod total;

pub use metrics::{psnr, ssim, MetricsCsv};
pub use perceptual::PerceptualBank;
pub use terms::{
    area_downsample, displacement_reg, landmark_loss, lowres_rgb_loss, photometric_l1, silhouette_loss,
};
pub use total::{LossWeights, Stage, Term};
