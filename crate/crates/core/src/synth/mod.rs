//! Synthetic multi-view head corpus.

mod corpus;
mod scene;

pub use corpus::{
    generate_corpus, load_rgb, read_manifest, save_rgb, render_sample, CorpusConfig, Dataset, ExpressionRecord, IdentityRecord, Manifest,
    SampleRecord, Split, ViewSample, CAMERA_DISTANCE, FOCAL_PER_PIXEL, MANIFEST, RING_HALF_ANGLE,
};
pub use scene::{
    build_scene, ExpressionFactors, IdentityFactors, SceneFactors, SynthScene, ALBEDO_RANGE, BASE_RADII, BROW_RANGE,
    CORNER_RANGE, EAR_RANGE, JAW_LANDMARK, JAW_RANGE, LANDMARK_NAMES, NOSE_RANGE, NUM_LANDMARKS, SKULL_RANGE,
};
