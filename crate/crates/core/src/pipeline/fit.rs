use serde::{Deserialize, Serialize};

use crate::diff::{Adam, Checkpoint, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::morph::{transform_points_backward, FrameGrads, HeadPose};
use crate::pipeline::common::*;
use crate::pipeline::config::TrainConfig;
use crate::pipeline::gaussian::{canonical_positions, render_gaussian_view, GaussianHead, GaussianView};
use crate::pipeline::objective::{image_backward, image_forward, ImageTermSet, ViewTarget};
use crate::splat::{rasterize, rasterize_backward, Camera};

pub const STAGE_FITTED: &str = "fitted";

/// Two-phase fitting schedule: codes first, then color network and
/// canonical positions with the codes fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSchedule {
    pub phase1_iters: usize,
    pub phase1_lr: f64,
    pub phase2_iters: usize,
    pub phase2_lr: f64,
}

impl Default for FitSchedule {
    fn default() -> Self {
        FitSchedule {
            phase1_iters: 200,
            phase1_lr: 1e-3,
            phase2_iters: 100,
            phase2_lr: 1e-4,
        }
    }
}

impl FitSchedule {
    pub fn total(&self) -> usize {
        self.phase1_iters + self.phase2_iters
    }

    /// Codes only, as used to read an expression off a target image.
    pub fn codes_only() -> Self {
        FitSchedule {
            phase2_iters: 0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub phase: usize,
    pub iteration: usize,
    pub loss: f64,
    pub psnr: f64,
}

/// A fitted subject: an overlay copy of the checkpoint parameters (with the
/// refined color network) plus the fitted codes and canonical positions.
#[derive(Clone, Debug)]
pub struct FittedHead {
    pub head: GaussianHead,
    pub store: ParamStore<f32>,
    pub z_id: Vec<f32>,
    pub z_exp: Vec<f32>,
    pub x_can: Vec<f32>,
    pub pose: HeadPose,
    pub camera: Camera,
    pub lr_factor: usize,
    /// Training config of the model the subject was fitted with.
    pub config: TrainConfig,
    pub history: Vec<FitRow>,
}

const FIT_TERMS: ImageTermSet<'static> = ImageTermSet {
    silhouette: false,
    lowres: true,
    perceptual: None,
};

fn mean_rows(v: &[f32], width: usize) -> Vec<f32> {
    let n = v.len() / width;
    let mut out = vec![0f32; width];
    for r in v.chunks_exact(width) {
        out.iter_mut().zip(r).for_each(|(o, x)| *o += x / n as f32);
    }
    out
}

/// Fits a trained Gaussian model to one image. The checkpoint is not touched.
pub fn fit_image(
    ckpt: &Checkpoint,
    image: &[f64],
    camera: &Camera,
    pose: &HeadPose,
    schedule: &FitSchedule,
) -> Result<FittedHead> {
    expect_stage(ckpt, &[STAGE_GAUSSIAN, STAGE_GAUSSIAN_INIT])?;
    let cfg = checkpoint_config(ckpt)?;
    let weights = cfg.weights;
    let mut store = ckpt.store.clone();
    let head = GaussianHead::from_checkpoint(ckpt)?;
    let target = ViewTarget::<f32>::from_parts(image, None, &[], camera, cfg.lr_factor)?;
    let dims = head.model.dims;

    let ids: Vec<ParamId> = store.ids().collect();
    ids.iter().for_each(|&id| store.set_trainable(id, false));
    let z_id0 = mean_rows(store.value(head.codes.id), dims.id_dim);
    let z_exp0 = mean_rows(store.value(head.codes.exp), dims.exp_dim);
    let zi = store.insert("fit.z_id", &[dims.id_dim], z_id0)?;
    let ze = store.insert("fit.z_exp", &[dims.exp_dim], z_exp0)?;
    let mut history = Vec::with_capacity(schedule.total());

    let mut adam = Adam::new(schedule.phase1_lr);
    for it in 0..schedule.phase1_iters {
        store.zero_grads();
        let (z_id, z_exp) = (store.value(zi).to_vec(), store.value(ze).to_vec());
        let (frame, gtape) = head
            .model
            .frame(&store, &z_id, &z_exp, pose)
            .map_err(|_| Error::FitDiverged { phase: 1, iteration: it })?;
        let (feat, rtape) = rasterize(&frame.splats, &target.camera_lr)?;
        let eval = image_forward(&head.model.psi, &store, &feat, &target, FIT_TERMS)?;
        let loss = fit_loss(&eval.terms, &weights);
        if !loss.is_finite() {
            return Err(Error::FitDiverged { phase: 1, iteration: it });
        }
        let (d_feat, _) = image_backward(&head.model.psi, &mut store, &feat, &eval, &target, FIT_TERMS, &weights, 1.0)?;
        let sg = rasterize_backward(&frame.splats, &rtape, &d_feat, None)?;
        let (dz_id, dz_exp) = head.model.frame_backward(
            &mut store,
            &gtape,
            &FrameGrads {
                splats: &sg,
                d_delta_id: None,
                d_delta_exp: None,
                d_landmarks: None,
            },
        )?;
        store.accumulate(zi, &dz_id)?;
        store.accumulate(ze, &dz_exp)?;
        adam.step(&mut store)?;
        history.push(FitRow {
            phase: 1,
            iteration: it,
            loss,
            psnr: eval.psnr,
        });
    }

    let (z_id, z_exp) = (store.value(zi).to_vec(), store.value(ze).to_vec());
    store.set_trainable(zi, false);
    store.set_trainable(ze, false);
    let x_can = canonical_positions(&head, &store, &z_id, &z_exp)?;
    let n = x_can.len() / 3;
    let xc = store.insert("fit.x_can", &[n, 3], x_can)?;
    store.set_trainable_prefix("f_col", true);
    let mut adam = Adam::new(schedule.phase2_lr);
    for it in 0..schedule.phase2_iters {
        store.zero_grads();
        let (mut frame, gtape) = head
            .model
            .frame(&store, &z_id, &z_exp, pose)
            .map_err(|_| Error::FitDiverged { phase: 2, iteration: it })?;
        frame.splats.pos = crate::morph::transform_points(pose, store.value(xc));
        let (feat, rtape) = rasterize(&frame.splats, &target.camera_lr)?;
        let eval = image_forward(&head.model.psi, &store, &feat, &target, FIT_TERMS)?;
        let loss = fit_loss(&eval.terms, &weights);
        if !loss.is_finite() {
            return Err(Error::FitDiverged { phase: 2, iteration: it });
        }
        let (d_feat, _) = image_backward(&head.model.psi, &mut store, &feat, &eval, &target, FIT_TERMS, &weights, 1.0)?;
        let mut sg = rasterize_backward(&frame.splats, &rtape, &d_feat, None)?;
        let d_x = transform_points_backward(pose, &sg.pos);
        store.accumulate(xc, &d_x)?;
        sg.pos.iter_mut().for_each(|g| *g = 0.0);
        head.model.frame_backward(
            &mut store,
            &gtape,
            &FrameGrads {
                splats: &sg,
                d_delta_id: None,
                d_delta_exp: None,
                d_landmarks: None,
            },
        )?;
        adam.step(&mut store)?;
        history.push(FitRow {
            phase: 2,
            iteration: it,
            loss,
            psnr: eval.psnr,
        });
    }
    let x_can = store.value(xc).to_vec();
    Ok(FittedHead {
        head,
        store,
        z_id,
        z_exp,
        x_can,
        pose: *pose,
        camera: camera.clone(),
        lr_factor: cfg.lr_factor,
        config: cfg,
        history,
    })
}

fn fit_loss(terms: &[(crate::losses::Term, f64)], w: &LossWeights) -> f64 {
    terms.iter().map(|&(t, v)| w.weight(t) * v).sum()
}

impl FittedHead {
    /// Renders the subject with expression `z_exp` (its own when `None`). The
    /// fitted positions are shifted by the change the expression makes to the
    /// canonical positions, so the source expression reproduces the fit exactly.
    pub fn render(&self, z_exp: Option<&[f32]>, camera: &Camera, pose: &HeadPose) -> Result<GaussianView<f32>> {
        let target = z_exp.unwrap_or(&self.z_exp);
        let x = if target == self.z_exp.as_slice() {
            self.x_can.clone()
        } else {
            let from = canonical_positions(&self.head, &self.store, &self.z_id, &self.z_exp)?;
            let to = canonical_positions(&self.head, &self.store, &self.z_id, target)?;
            self.x_can
                .iter()
                .zip(from.iter().zip(&to))
                .map(|(&x, (&a, &b))| x + (b - a))
                .collect()
        };
        render_gaussian_view(&self.head, &self.store, &self.z_id, target, pose, &camera.downscaled(self.lr_factor), Some(&x))
    }

    /// The fitted view itself.
    pub fn reconstruction(&self) -> Result<GaussianView<f32>> {
        self.render(None, &self.camera, &self.pose)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.store.clone())
            .with_meta("stage", STAGE_FITTED)
            .with_meta("dims", json(&self.head.model.dims))
            .with_meta("pose", json(&self.pose))
            .with_meta("camera", json(&self.camera))
            .with_meta("lr_factor", self.lr_factor.to_string())
            .with_meta("config", self.config.to_json())
            .with_meta("history", json(&self.history))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        expect_stage(ckpt, &[STAGE_FITTED])?;
        let dims = from_json(ckpt, "dims")?;
        let pose = from_json(ckpt, "pose")?;
        let camera = from_json(ckpt, "camera")?;
        let history = from_json(ckpt, "history")?;
        let lr_factor = ckpt
            .meta("lr_factor")?
            .parse()
            .map_err(|e| Error::format("fitted lr_factor", format!("{e}")))?;
        let config = checkpoint_config(ckpt)?;
        let store = ckpt.store.clone();
        let head = GaussianHead::bind(&store, dims)?;
        let z_id = store.value(store.id("fit.z_id")?).to_vec();
        let z_exp = store.value(store.id("fit.z_exp")?).to_vec();
        let x_can = store.value(store.id("fit.x_can")?).to_vec();
        Ok(FittedHead {
            head,
            store,
            z_id,
            z_exp,
            x_can,
            pose,
            camera,
            lr_factor,
            config,
            history,
        })
    }

    /// The subject's model (refined color network included) as a plain
    /// Gaussian checkpoint, without the fitted overlay entries.
    pub fn model_checkpoint(&self) -> Result<Checkpoint> {
        let mut store = ParamStore::new();
        for (_, p) in self.store.iter() {
            if !p.name.starts_with("fit.") {
                store.copy_entry_from(&self.store, &p.name)?;
            }
        }
        Ok(Checkpoint::new(store)
            .with_meta("stage", STAGE_GAUSSIAN)
            .with_meta("config", self.config.to_json())
            .with_meta("dims", json(&self.head.model.dims)))
    }
}

fn json<S: Serialize>(v: &S) -> String {
    serde_json::to_string(v).expect("serializable")
}

fn from_json<D: serde::de::DeserializeOwned>(ckpt: &Checkpoint, key: &str) -> Result<D> {
    serde_json::from_str(ckpt.meta(key)?).map_err(|e| Error::format("fitted checkpoint", format!("{key}: {e}")))
}

/// Renders `source` under the expression code `z_exp`.
pub fn edit_expression(source: &FittedHead, z_exp: &[f32], camera: &Camera, pose: &HeadPose) -> Result<GaussianView<f32>> {
    if z_exp.len() != source.z_exp.len() {
        return Err(Error::shape("target expression code", source.z_exp.len(), z_exp.len()));
    }
    source.render(Some(z_exp), camera, pose)
}

/// Per-dimension linear interpolation, `t` in `[0, 1]`.
pub fn interpolate_codes(a: &[f32], b: &[f32], t: f32) -> Result<Vec<f32>> {
    if a.len() != b.len() {
        return Err(Error::shape("interpolated codes", a.len(), b.len()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Invalid(format!("interpolation weight {t} outside [0, 1]")));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| x + t * (y - x)).collect())
}
