use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat3;
use crate::morph::HeadPose;
use crate::splat::{oracle_rasterize, Camera};
use crate::synth::scene::{build_scene, ExpressionFactors, IdentityFactors, SceneFactors, LANDMARK_NAMES};

pub const MANIFEST: &str = "manifest.json";
pub const CAMERA_DISTANCE: f64 = 2.7;
/// Focal length in units of the image width.
pub const FOCAL_PER_PIXEL: f64 = 1.75;
/// Half-width of the camera ring in degrees.
pub const RING_HALF_ANGLE: f64 = 70.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_id: usize,
    pub n_exp: usize,
    pub n_views: usize,
    /// Extra identities rendered for fitting only.
    pub n_holdout: usize,
    pub resolution: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            n_id: 8,
            n_exp: 5,
            n_views: 12,
            n_holdout: 2,
            resolution: 64,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_id == 0 || self.n_exp == 0 || self.n_views == 0 {
            return Err(Error::Invalid("corpus needs at least one identity, expression and view".into()));
        }
        if self.resolution < 16 {
            return Err(Error::Invalid(format!("resolution {} below 16", self.resolution)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Holdout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub index: usize,
    pub split: Split,
    pub factors: IdentityFactors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionRecord {
    pub index: usize,
    pub factors: ExpressionFactors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub exp: usize,
    pub view: usize,
    pub split: Split,
    pub image: String,
    pub mask: String,
    pub pose: HeadPose,
    /// World-space landmarks, in [`LANDMARK_NAMES`] order.
    pub landmarks: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CorpusConfig,
    pub landmark_names: Vec<String>,
    pub identities: Vec<IdentityRecord>,
    pub expressions: Vec<ExpressionRecord>,
    /// One camera per view index, shared by every (identity, expression).
    pub cameras: Vec<Camera>,
    pub samples: Vec<SampleRecord>,
}

impl Manifest {
    pub fn factors(&self, id: usize, exp: usize) -> Result<SceneFactors> {
        let identity = self.identities.get(id).ok_or_else(|| Error::Invalid(format!("no identity {id}")))?;
        let expression = self.expressions.get(exp).ok_or_else(|| Error::Invalid(format!("no expression {exp}")))?;
        Ok(SceneFactors {
            identity: identity.factors,
            expression: expression.factors,
        })
    }

    pub fn n_train_ids(&self) -> usize {
        self.identities.iter().filter(|r| r.split == Split::Train).count()
    }
}

/// Independent stream per (purpose, index) so that changing one count does
/// not reshuffle the others.
fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 40) | index);
    rng
}

fn ring_camera(config: &CorpusConfig, view: usize) -> Camera {
    let mut rng = stream(config.seed, 3, view as u64);
    let t = if config.n_views == 1 { 0.5 } else { view as f64 / (config.n_views - 1) as f64 };
    let az = (-RING_HALF_ANGLE + 2.0 * RING_HALF_ANGLE * t).to_radians();
    let el = rng.random_range(-8.0f64..8.0).to_radians();
    let eye = [
        CAMERA_DISTANCE * el.cos() * az.sin(),
        CAMERA_DISTANCE * el.sin(),
        CAMERA_DISTANCE * el.cos() * az.cos(),
    ];
    let res = config.resolution;
    Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], FOCAL_PER_PIXEL * res as f64, res, res)
}

fn rotation(axis: [f64; 3], angle: f64) -> Mat3<f64> {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn random_pose(seed: u64, id: usize, exp: usize) -> HeadPose {
    let mut rng = stream(seed, 4, ((id as u64) << 20) | exp as u64);
    let axis = [0; 3].map(|_| rng.random_range(-1.0..1.0));
    let angle = rng.random_range(0.0..0.15);
    let translation = [0; 3].map(|_| rng.random_range(-0.04..0.04));
    HeadPose {
        rotation: rotation(axis, angle),
        translation,
    }
}

/// 8-bit RGB image and 0/255 mask of `factors` seen by `camera` under `pose`.
pub fn render_sample(factors: &SceneFactors, camera: &Camera, pose: &HeadPose) -> Result<(Vec<u8>, Vec<u8>)> {
    let scene = build_scene(factors)?.posed(pose);
    let img = oracle_rasterize(&scene.splats, camera)?;
    let rgb = img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mask = img.alpha.iter().map(|&a| if a > 0.5 { 255 } else { 0 }).collect();
    Ok((rgb, mask))
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path, source: serde_json::Error) -> Error {
    Error::Json {
        path: path.to_path_buf(),
        source,
    }
}

/// Renders the corpus into `out` and writes its manifest.
pub fn generate_corpus(config: &CorpusConfig, out: &Path) -> Result<Manifest> {
    config.validate()?;
    for sub in ["img", "mask"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let n_total = config.n_id + config.n_holdout;
    let identities: Vec<IdentityRecord> = (0..n_total)
        .map(|i| IdentityRecord {
            index: i,
            split: if i < config.n_id { Split::Train } else { Split::Holdout },
            factors: IdentityFactors::sample(&mut stream(config.seed, 1, i as u64)),
        })
        .collect();
    let expressions: Vec<ExpressionRecord> = (0..config.n_exp)
        .map(|e| ExpressionRecord {
            index: e,
            factors: ExpressionFactors::preset(e, &mut stream(config.seed, 2, e as u64)),
        })
        .collect();
    let cameras: Vec<Camera> = (0..config.n_views).map(|v| ring_camera(config, v)).collect();

    let mut manifest = Manifest {
        config: config.clone(),
        landmark_names: LANDMARK_NAMES.iter().map(|s| s.to_string()).collect(),
        identities,
        expressions,
        cameras,
        samples: Vec::new(),
    };
    for id in 0..n_total {
        for exp in 0..config.n_exp {
            let pose = random_pose(config.seed, id, exp);
            let factors = manifest.factors(id, exp)?;
            let lm = build_scene(&factors)?.posed(&pose).landmarks;
            for view in 0..config.n_views {
                let stem = format!("{id}_{exp}_{view}.png");
                manifest.samples.push(SampleRecord {
                    id,
                    exp,
                    view,
                    split: manifest.identities[id].split,
                    image: format!("img/{stem}"),
                    mask: format!("mask/{stem}"),
                    pose: pose.clone(),
                    landmarks: lm.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
                });
            }
        }
    }

    let res = config.resolution as u32;
    manifest.samples.par_iter().try_for_each(|s| -> Result<()> {
        let factors = manifest.factors(s.id, s.exp)?;
        let (rgb, mask) = render_sample(&factors, &manifest.cameras[s.view], &s.pose)?;
        let p = out.join(&s.image);
        image::save_buffer(&p, &rgb, res, res, image::ExtendedColorType::Rgb8).map_err(|e| image_err(&p, e))?;
        let p = out.join(&s.mask);
        image::save_buffer(&p, &mask, res, res, image::ExtendedColorType::L8).map_err(|e| image_err(&p, e))
    })?;

    let p = out.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| json_err(&p, e))?;
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

/// One view of one (identity, expression), loaded as floats in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct ViewSample {
    pub id: usize,
    pub exp: usize,
    pub view: usize,
    pub split: Split,
    /// Row-major RGB.
    pub image: Vec<f64>,
    pub mask: Vec<f64>,
    pub camera: Camera,
    pub pose: HeadPose,
    /// `K x 3` world landmarks.
    pub landmarks: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub samples: Vec<ViewSample>,
}

fn load_png(path: &Path, res: usize, channels: usize) -> Result<Vec<f64>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let raw = match channels {
        3 => img.to_rgb8().into_raw(),
        _ => img.to_luma8().into_raw(),
    };
    if raw.len() != res * res * channels {
        return Err(Error::format(
            path.display().to_string(),
            format!("expected a {res}x{res} image with {channels} channels"),
        ));
    }
    Ok(raw.into_iter().map(|v| v as f64 / 255.0).collect())
}

/// Square RGB PNG as `[0, 1]` values, row-major HWC.
pub fn load_rgb(path: &Path, res: usize) -> Result<Vec<f64>> {
    load_png(path, res, 3)
}

/// Writes row-major HWC RGB values in `[0, 1]` (clamped) as an 8-bit PNG.
pub fn save_rgb<T: crate::real::Real>(path: &Path, data: &[T], width: usize, height: usize) -> Result<()> {
    crate::error::ensure_len("rgb image", width * height * 3, data.len())?;
    let px: Vec<u8> = data.iter().map(|v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::save_buffer(path, &px, width as u32, height as u32, image::ExtendedColorType::Rgb8).map_err(|e| image_err(path, e))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let p = root.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| json_err(&p, e))
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = read_manifest(root)?;
        let res = manifest.config.resolution;
        let samples = manifest
            .samples
            .iter()
            .map(|s| {
                let camera = manifest
                    .cameras
                    .get(s.view)
                    .ok_or_else(|| Error::Invalid(format!("sample refers to missing camera {}", s.view)))?
                    .clone();
                Ok(ViewSample {
                    id: s.id,
                    exp: s.exp,
                    view: s.view,
                    split: s.split,
                    image: load_png(&root.join(&s.image), res, 3)?,
                    mask: load_png(&root.join(&s.mask), res, 1)?,
                    camera,
                    pose: s.pose.clone(),
                    landmarks: s.landmarks.iter().flatten().copied().collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
            samples,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ViewSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn resolution(&self) -> usize {
        self.manifest.config.resolution
    }

    /// Mean world landmarks over the training samples, mapped back to the
    /// canonical frame through each sample's pose.
    pub fn mean_canonical_landmarks(&self) -> Vec<f64> {
        let mut acc = vec![0.0; LANDMARK_NAMES.len() * 3];
        let mut n = 0.0;
        for s in self.split(Split::Train) {
            let inv = s.pose.inverse();
            for (k, p) in s.landmarks.chunks_exact(3).enumerate() {
                let c = inv.apply(&[p[0], p[1], p[2]]);
                for d in 0..3 {
                    acc[k * 3 + d] += c[d];
                }
            }
            n += 1.0;
        }
        if n > 0.0 {
            acc.iter_mut().for_each(|v| *v /= n);
        }
        acc
    }
}
