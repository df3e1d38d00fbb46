//! Parametric deformation shared by both stages: identity injection,
//! displacement, color, Gaussian attributes, landmarks, pose and `Psi`.

pub mod model;
pub mod nets;
pub mod pose;
pub mod upsample;

pub use model::{
    gaussian_init, mean_nn_distance, morph_points, morph_points_backward, CodeBank, FrameGrads, GaussianFrame,
    GaussianModel, GaussianTape, Landmarks, MeanGaussians, MorphGrads, MorphInputGrads, MorphTape, MorphedPoints,
};
pub use nets::{AttributeMeans, AttributeNet, Attributes, Deformation, ModelDims, Networks};
pub use pose::{to_world, to_world_backward, transform_points, transform_points_backward, HeadPose};
pub use upsample::{upsample_nearest, UpsampleTape, Upsampler};
