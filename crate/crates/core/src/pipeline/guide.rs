use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{Adam, Checkpoint, ParamStore};
use crate::error::{Error, Result};
use crate::guide::{
    eval_sdf_field, eval_sdf_field_backward, laplacian_backward, laplacian_loss, marching_tets, marching_tets_backward,
    pretrain_ellipsoid, render_guide, render_guide_backward, Adjacency, GuideMesh, GuideSplatStyle, PretrainConfig,
    SdfNet, SdfTape, TetGrid,
};
use crate::losses::{MetricsCsv, Stage, Term};
use crate::morph::{morph_points, morph_points_backward, CodeBank, HeadPose, Landmarks, ModelDims, MorphGrads, Networks, Upsampler};
use crate::pipeline::common::*;
use crate::pipeline::config::{GridConfig, TrainConfig};
use crate::pipeline::objective::{image_backward, image_forward, landmark_term, reg_term, ImageTermSet, ViewTarget};
use crate::real::Real;
use crate::splat::{Camera, FeatureImage};
use crate::synth::Dataset;

const GUIDE_TERMS: ImageTermSet<'static> = ImageTermSet {
    silhouette: true,
    lowres: true,
    perceptual: None,
};

#[derive(Clone, Debug)]
pub struct GuideModel {
    pub dims: ModelDims,
    pub sdf: SdfNet,
    pub nets: Networks,
    pub psi: Upsampler,
    pub codes: CodeBank,
    pub landmarks: Landmarks,
}

impl GuideModel {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        dims: ModelDims,
        n_id: usize,
        n_exp: usize,
        p0: &[T],
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        Ok(GuideModel {
            dims,
            sdf: SdfNet::register(store, dims.channels, rng)?,
            nets: Networks::register(store, dims, rng)?,
            psi: Upsampler::register(store, dims.channels)?,
            codes: CodeBank::register(store, dims, n_id, n_exp, rng)?,
            landmarks: Landmarks::register(store, p0, dims.channels)?,
        })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, dims: ModelDims) -> Result<Self> {
        Ok(GuideModel {
            dims,
            sdf: SdfNet::bind(store, dims.channels)?,
            nets: Networks::bind(store, dims)?,
            psi: Upsampler::bind(store, dims.channels)?,
            codes: CodeBank::bind(store, dims)?,
            landmarks: Landmarks::bind(store)?,
        })
    }
}

/// The lattice with the current `f_mean` values and the mesh extracted from it.
pub struct GuideGeometry<T> {
    pub grid: TetGrid<T>,
    pub mesh: GuideMesh<T>,
    pub style: GuideSplatStyle,
}

pub fn new_grid<T: Real>(cfg: &GridConfig, channels: usize) -> Result<TetGrid<T>> {
    TetGrid::new(cfg.res, -cfg.bound, cfg.bound, channels)
}

fn extract<T: Real>(grid: TetGrid<T>) -> Result<GuideGeometry<T>> {
    let mesh = marching_tets(&grid);
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let style = GuideSplatStyle::for_mesh(&mesh);
    Ok(GuideGeometry { grid, mesh, style })
}

/// Evaluates `f_mean` on the whole lattice and extracts the mean mesh.
pub fn mean_geometry<T: Real>(model: &GuideModel, store: &ParamStore<T>, cfg: &GridConfig) -> Result<GuideGeometry<T>> {
    let mut grid = new_grid(cfg, model.dims.channels)?;
    eval_sdf_field(&model.sdf, store, &mut grid, None)?;
    extract(grid)
}

/// Rendered output of one guide view.
pub struct GuideView<T> {
    pub feat: FeatureImage<T>,
    pub hr: FeatureImage<T>,
    pub landmarks: Vec<T>,
    pub delta_id: Vec<T>,
    pub delta_exp: Vec<T>,
}

/// Forward render of the guide model for explicit codes.
#[allow(clippy::too_many_arguments)]
pub fn render_guide_view<T: Real>(
    model: &GuideModel,
    store: &ParamStore<T>,
    geo: &GuideGeometry<T>,
    z_id: &[T],
    z_exp: &[T],
    pose: &HeadPose,
    camera_lr: &Camera,
) -> Result<GuideView<T>> {
    let ch = model.dims.channels;
    let (pts, _) = morph_points(&model.nets, store, &geo.mesh.vertices, &geo.mesh.features, z_id, z_exp, pose, true)?;
    let render = render_guide(&pts.x_world, &pts.color, ch, geo.style, camera_lr)?;
    let (hr, _) = model.psi.forward(store, &render.image)?;
    let (landmarks, _) = model.landmarks.transform(&model.nets, store, z_id, z_exp, pose)?;
    Ok(GuideView {
        feat: render.image,
        hr,
        landmarks,
        delta_id: pts.delta_id,
        delta_exp: pts.delta_exp,
    })
}

struct ViewGrads {
    terms: Vec<(Term, f64)>,
    psnr: f64,
}

/// One view: forward, then gradients scaled by `scale` into the store and into
/// the mesh buffers.
#[allow(clippy::too_many_arguments)]
fn guide_view_step(
    model: &GuideModel,
    store: &mut ParamStore<f32>,
    geo: &GuideGeometry<f32>,
    id: usize,
    exp: usize,
    pose: &HeadPose,
    target: &ViewTarget<f32>,
    cfg: &TrainConfig,
    scale: f64,
    d_vertices: &mut [f32],
    d_features: &mut [f32],
) -> Result<ViewGrads> {
    let ch = model.dims.channels;
    let z_id = model.codes.id_code(store, id)?;
    let z_exp = model.codes.exp_code(store, exp)?;
    let (pts, mtape) = morph_points(&model.nets, store, &geo.mesh.vertices, &geo.mesh.features, &z_id, &z_exp, pose, true)?;
    let render = render_guide(&pts.x_world, &pts.color, ch, geo.style, &target.camera_lr)?;
    let eval = image_forward(&model.psi, store, &render.image, target, GUIDE_TERMS)?;
    let (lm, lm_tape) = model.landmarks.transform(&model.nets, store, &z_id, &z_exp, pose)?;
    let (l_lmk, d_lm) = landmark_term(&lm, &target.landmarks, &cfg.weights, scale)?;
    let (l_reg, g_id, g_exp) = reg_term(&pts.delta_id, &pts.delta_exp, &cfg.weights, scale)?;

    let (d_feat, d_alpha) = image_backward(&model.psi, store, &render.image, &eval, target, GUIDE_TERMS, &cfg.weights, scale)?;
    let (d_pos, d_color) = render_guide_backward(&render, &d_feat, d_alpha.as_deref())?;
    let g = morph_points_backward(
        &model.nets,
        store,
        &mtape,
        &MorphGrads {
            d_x_world: &d_pos,
            d_color: Some(&d_color),
            d_delta_id: Some(&g_id),
            d_delta_exp: Some(&g_exp),
            d_h: None,
        },
    )?;
    let (lz_id, lz_exp) = model.landmarks.transform_backward(&model.nets, store, &lm_tape, &d_lm)?;
    let dz_id: Vec<f32> = g.d_z_id.iter().zip(&lz_id).map(|(a, b)| a + b).collect();
    let dz_exp: Vec<f32> = g.d_z_exp.iter().zip(&lz_exp).map(|(a, b)| a + b).collect();
    model.codes.accumulate(store, id, &dz_id, exp, &dz_exp)?;
    d_vertices.iter_mut().zip(&g.d_x0).for_each(|(a, b)| *a += b);
    d_features.iter_mut().zip(&g.d_gamma).for_each(|(a, b)| *a += b);

    let mut terms = eval.terms;
    terms.push((Term::Lmk, l_lmk));
    terms.push((Term::Reg, l_reg));
    Ok(ViewGrads { terms, psnr: eval.psnr })
}

/// Guide-stage optimizer state.
pub struct GuideTrainer<'a> {
    pub cfg: TrainConfig,
    pub model: GuideModel,
    pub store: ParamStore<f32>,
    data: &'a Dataset,
    pool: Vec<usize>,
    targets: std::collections::BTreeMap<usize, ViewTarget<f32>>,
    adam: Adam<f32>,
    rng: ChaCha8Rng,
    grid: TetGrid<f32>,
    step: usize,
}

impl<'a> GuideTrainer<'a> {
    /// Fresh model: random networks, `f_mean` pretrained to an ellipsoid and
    /// `P0` at the mean canonical landmarks of the dataset.
    pub fn new(cfg: &TrainConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let p0: Vec<f32> = data.mean_canonical_landmarks().iter().map(|&v| v as f32).collect();
        let model = GuideModel::register(
            &mut store,
            cfg.dims,
            data.manifest.n_train_ids(),
            data.manifest.config.n_exp,
            &p0,
            &mut rng,
        )?;
        let pre = PretrainConfig {
            steps: cfg.pretrain_steps,
            batch: cfg.pretrain_batch,
            ..PretrainConfig::default()
        };
        pretrain_ellipsoid(&model.sdf, &mut store, (-cfg.grid.bound, cfg.grid.bound), &pre, &mut rng)?;
        store.zero_grads();
        let mut adam = Adam::new(cfg.lr_net);
        configure_rates(&mut adam, &store, cfg);
        let pool = train_indices(data);
        if pool.is_empty() {
            return Err(Error::Invalid("dataset has no training samples".into()));
        }
        let targets = build_targets(data, &pool, cfg.lr_factor)?;
        let grid = new_grid(&cfg.grid, cfg.dims.channels)?;
        Ok(GuideTrainer {
            cfg: cfg.clone(),
            model,
            store,
            data,
            pool,
            targets,
            adam,
            rng,
            grid,
            step: 0,
        })
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let cfg = &self.cfg;
        let step = self.step;
        self.store.zero_grads();
        if step % cfg.grid.refresh_every == 0 {
            eval_sdf_field(&self.model.sdf, &self.store, &mut self.grid, None)?;
        }
        let band = self.grid.band(cfg.grid.band);
        let mut grid = std::mem::replace(&mut self.grid, TetGrid::new(2, 0.0, 1.0, cfg.dims.channels)?);
        let tape: SdfTape<f32> = eval_sdf_field(&self.model.sdf, &self.store, &mut grid, Some(&band))?;
        let geo = match extract(grid) {
            Ok(g) => g,
            Err(e) => {
                return Err(match e {
                    Error::EmptyMesh => Error::Diverged {
                        stage: Stage::Guide.name().into(),
                        step,
                        loss: f64::NAN,
                    },
                    other => other,
                })
            }
        };

        let batch = sample_batch(&mut self.rng, &self.pool, cfg.batch);
        let scale = 1.0 / batch.len() as f64;
        let mut d_v = vec![0f32; geo.mesh.vertices.len()];
        let mut d_f = vec![0f32; geo.mesh.features.len()];
        let mut terms = Vec::with_capacity(batch.len());
        let mut psnr = 0.0;
        for &i in &batch {
            let s = &self.data.samples[i];
            let vg = guide_view_step(
                &self.model,
                &mut self.store,
                &geo,
                s.id,
                s.exp,
                &s.pose,
                &self.targets[&i],
                cfg,
                scale,
                &mut d_v,
                &mut d_f,
            )?;
            terms.push(vg.terms);
            psnr += vg.psnr * scale;
        }
        let mut terms = mean_terms(&terms);

        let adj = Adjacency::from_faces(geo.mesh.len(), &geo.mesh.faces)?;
        let lap = laplacian_loss(&geo.mesh.vertices, &adj)?;
        let d_lap = laplacian_backward(&geo.mesh.vertices, &adj, cfg.weights.lap as f32)?;
        d_v.iter_mut().zip(&d_lap).for_each(|(a, b)| *a += b);
        terms.push((Term::Lap, lap as f64));

        let (d_sdf, d_lat) = marching_tets_backward(&geo.grid, &geo.mesh, &d_v, &d_f)?;
        eval_sdf_field_backward(&self.model.sdf, &mut self.store, &tape, &d_sdf, &d_lat)?;
        let rec = finish_record(step, Stage::Guide, &cfg.weights, terms, psnr)?;
        self.adam.step(&mut self.store)?;
        self.grid = geo.grid;
        self.step += 1;
        Ok(rec)
    }

    /// Mean PSNR over every `eval_stride`-th training view.
    pub fn evaluate(&self) -> Result<f64> {
        evaluate_guide(&self.model, &self.store, self.data, &self.cfg)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        checkpoint_for(self.store.clone(), STAGE_GUIDE, &self.cfg, self.data)
    }
}

pub fn evaluate_guide(model: &GuideModel, store: &ParamStore<f32>, data: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let geo = mean_geometry(model, store, &cfg.grid)?;
    let pool = train_indices(data);
    let picked: Vec<usize> = pool.iter().copied().step_by(cfg.eval_stride).collect();
    let mut sum = 0.0;
    for &i in &picked {
        let s = &data.samples[i];
        let target = ViewTarget::<f32>::new(s, cfg.lr_factor)?;
        let z_id = model.codes.id_code(store, s.id)?;
        let z_exp = model.codes.exp_code(store, s.exp)?;
        let v = render_guide_view(model, store, &geo, &z_id, &z_exp, &s.pose, &target.camera_lr)?;
        sum += crate::losses::psnr(&v.hr.data, &target.hr.data)?;
    }
    Ok(sum / picked.len().max(1) as f64)
}

/// Stage 1. Logs every `log_every` steps (and the last) when `log` is given.
pub fn train_guide(cfg: &TrainConfig, data: &Dataset, mut log: Option<&mut MetricsCsv>) -> Result<(Checkpoint, TrainReport)> {
    if cfg.stage != Stage::Guide {
        return Err(Error::Invalid("train_guide needs a guide-stage config".into()));
    }
    with_threads(cfg.deterministic, || {
        let mut t = GuideTrainer::new(cfg, data)?;
        let mut report = TrainReport::default();
        for s in 0..cfg.steps {
            let rec = t.step()?;
            if let Some(csv) = log.as_deref_mut() {
                if s % cfg.log_every == 0 || s + 1 == cfg.steps {
                    log_record(csv, &rec)?;
                }
            }
            report.history.push(rec);
        }
        report.final_psnr = t.evaluate()?;
        if let Some(csv) = log.as_deref_mut() {
            csv.row(cfg.steps, "eval", "psnr", report.final_psnr)?;
            csv.flush()?;
        }
        Ok((t.checkpoint(), report))
    })?
}
