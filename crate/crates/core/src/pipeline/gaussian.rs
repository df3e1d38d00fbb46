use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{Adam, Checkpoint, ParamStore};
use crate::error::{Error, Result};
use crate::losses::{MetricsCsv, PerceptualBank, Stage, Term};
use crate::morph::{transform_points, CodeBank, FrameGrads, GaussianModel, HeadPose, ModelDims};
use crate::pipeline::common::*;
use crate::pipeline::config::TrainConfig;
use crate::pipeline::guide::{mean_geometry, GuideModel};
use crate::pipeline::objective::{image_backward, image_forward, landmark_term, reg_term, ImageTermSet, ViewTarget};
use crate::real::Real;
use crate::splat::{rasterize, rasterize_backward, Camera, FeatureImage};
use crate::synth::Dataset;

/// Gaussian-stage model plus its code bank.
#[derive(Clone, Debug)]
pub struct GaussianHead {
    pub model: GaussianModel,
    pub codes: CodeBank,
}

impl GaussianHead {
    pub fn bind<T: Real>(store: &ParamStore<T>, dims: ModelDims) -> Result<Self> {
        Ok(GaussianHead {
            model: GaussianModel::bind(store, dims)?,
            codes: CodeBank::bind(store, dims)?,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Self::bind(&ckpt.store, checkpoint_dims(ckpt)?)
    }
}

fn init_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x6761_7573_7369_616e)
}

fn gaussian_config(guide_cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        seed: guide_cfg.seed,
        dims: guide_cfg.dims,
        grid: guide_cfg.grid.clone(),
        lr_factor: guide_cfg.lr_factor,
        deterministic: guide_cfg.deterministic,
        weights: guide_cfg.weights,
        ..TrainConfig::gaussian()
    }
}

fn copy_meta(from: &Checkpoint, mut to: Checkpoint) -> Result<Checkpoint> {
    for k in ["dims", "n_id", "n_exp", "resolution"] {
        to = to.with_meta(k, from.meta(k)?);
    }
    Ok(to)
}

/// Guide checkpoint to Gaussian initialization: `X0` and `Gamma0` from the
/// mean mesh, every shared network, code and landmark entry copied by name,
/// `f_att` fresh.
pub fn migrate(guide: &Checkpoint) -> Result<Checkpoint> {
    expect_stage(guide, &[STAGE_GUIDE])?;
    let cfg = checkpoint_config(guide)?;
    let dims = checkpoint_dims(guide)?;
    let gmodel = GuideModel::bind(&guide.store, dims)?;
    let geo = mean_geometry(&gmodel, &guide.store, &cfg.grid)?;
    let p0 = guide.store.value(gmodel.landmarks.p0).to_vec();

    let mut rng = init_seed(cfg.seed);
    let mut store = ParamStore::<f32>::new();
    GaussianModel::register(&mut store, dims, &geo.mesh.vertices, &geo.mesh.features, &p0, &mut rng)?;
    CodeBank::register(&mut store, dims, gmodel.codes.n_id, gmodel.codes.n_exp, &mut rng)?;
    let shared: Vec<String> = store
        .iter()
        .map(|(_, p)| p.name.clone())
        .filter(|n| guide.store.contains(n))
        .collect();
    for name in &shared {
        let src = guide.store.id(name)?;
        let dst = store.id(name)?;
        if store.shape(dst) != guide.store.shape(src) {
            return Err(Error::shape(name.clone(), format!("{:?}", store.shape(dst)), format!("{:?}", guide.store.shape(src))));
        }
        store.set(dst, guide.store.value(src))?;
    }
    let gcfg = gaussian_config(&cfg);
    let out = Checkpoint::new(store)
        .with_meta("stage", STAGE_GAUSSIAN_INIT)
        .with_meta("config", serde_json::to_string(&gcfg).expect("config serializes"))
        .with_meta("init", "migrated");
    copy_meta(guide, out)
}

/// `n` points spread evenly over an ellipsoid.
pub fn ellipsoid_points(n: usize, radii: [f64; 3]) -> Vec<f64> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .flat_map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            [r * th.cos() * radii[0], y * radii[1], r * th.sin() * radii[2]]
        })
        .collect()
}

/// Radii of the template ellipsoid used by [`naive_init`].
pub const TEMPLATE_RADII: [f64; 3] = [0.42, 0.52, 0.46];

/// Ablation baseline: `n` points on a template ellipsoid, zero features,
/// random networks and codes.
pub fn naive_init(cfg: &TrainConfig, data: &Dataset, n: usize) -> Result<Checkpoint> {
    cfg.validate()?;
    let dims = cfg.dims;
    let mut rng = init_seed(cfg.seed);
    let x0: Vec<f32> = ellipsoid_points(n, TEMPLATE_RADII).iter().map(|&v| v as f32).collect();
    let gamma = vec![0f32; n * dims.channels];
    let p0: Vec<f32> = data.mean_canonical_landmarks().iter().map(|&v| v as f32).collect();
    let mut store = ParamStore::<f32>::new();
    GaussianModel::register(&mut store, dims, &x0, &gamma, &p0, &mut rng)?;
    CodeBank::register(&mut store, dims, data.manifest.n_train_ids(), data.manifest.config.n_exp, &mut rng)?;
    let gcfg = TrainConfig {
        stage: Stage::Gaussian,
        ..cfg.clone()
    };
    Ok(checkpoint_for(store, STAGE_GAUSSIAN_INIT, &gcfg, data).with_meta("init", "naive"))
}

pub struct GaussianView<T> {
    pub feat: FeatureImage<T>,
    pub hr: FeatureImage<T>,
    pub landmarks: Vec<T>,
    pub delta_id: Vec<T>,
    pub delta_exp: Vec<T>,
    /// Canonical positions actually rendered.
    pub x_can: Vec<T>,
}

/// Canonical positions `X0 + delta_id + delta_exp` for a code pair.
pub fn canonical_positions<T: Real>(head: &GaussianHead, store: &ParamStore<T>, z_id: &[T], z_exp: &[T]) -> Result<Vec<T>> {
    let (frame, _) = head.model.frame(store, z_id, z_exp, &HeadPose::identity())?;
    let x0 = store.value(head.model.mean.x0);
    Ok(x0
        .iter()
        .zip(&frame.delta_id)
        .zip(&frame.delta_exp)
        .map(|((&a, &b), &c)| a + b + c)
        .collect())
}

/// Renders a code pair; `x_can` replaces the deformed canonical positions.
pub fn render_gaussian_view<T: Real>(
    head: &GaussianHead,
    store: &ParamStore<T>,
    z_id: &[T],
    z_exp: &[T],
    pose: &HeadPose,
    camera_lr: &Camera,
    x_can: Option<&[T]>,
) -> Result<GaussianView<T>> {
    let (mut frame, _) = head.model.frame(store, z_id, z_exp, pose)?;
    let x_can = match x_can {
        Some(x) => {
            frame.splats.pos = transform_points(pose, x);
            x.to_vec()
        }
        None => {
            let x0 = store.value(head.model.mean.x0);
            x0.iter()
                .zip(&frame.delta_id)
                .zip(&frame.delta_exp)
                .map(|((&a, &b), &c)| a + b + c)
                .collect()
        }
    };
    let (feat, _) = rasterize(&frame.splats, camera_lr)?;
    let (hr, _) = head.model.psi.forward(store, &feat)?;
    Ok(GaussianView {
        feat,
        hr,
        landmarks: frame.landmarks,
        delta_id: frame.delta_id,
        delta_exp: frame.delta_exp,
        x_can,
    })
}

pub struct GaussianTrainer<'a> {
    pub cfg: TrainConfig,
    pub head: GaussianHead,
    pub store: ParamStore<f32>,
    data: &'a Dataset,
    pool: Vec<usize>,
    targets: BTreeMap<usize, ViewTarget<f32>>,
    bank: PerceptualBank,
    adam: Adam<f32>,
    rng: ChaCha8Rng,
    step: usize,
    meta: BTreeMap<String, String>,
}

impl<'a> GaussianTrainer<'a> {
    pub fn new(cfg: &TrainConfig, data: &'a Dataset, init: &Checkpoint) -> Result<Self> {
        cfg.validate()?;
        expect_stage(init, &[STAGE_GAUSSIAN_INIT, STAGE_GAUSSIAN])?;
        let dims = checkpoint_dims(init)?;
        if dims != cfg.dims {
            return Err(Error::Invalid(format!("config dims {:?} differ from checkpoint dims {dims:?}", cfg.dims)));
        }
        let store = init.store.clone();
        let head = GaussianHead::bind(&store, dims)?;
        if head.codes.n_id != data.manifest.n_train_ids() || head.codes.n_exp != data.manifest.config.n_exp {
            return Err(Error::Invalid("checkpoint code bank does not match the dataset".into()));
        }
        let mut adam = Adam::new(cfg.lr_net);
        configure_rates(&mut adam, &store, cfg);
        let pool = train_indices(data);
        if pool.is_empty() {
            return Err(Error::Invalid("dataset has no training samples".into()));
        }
        let targets = build_targets(data, &pool, cfg.lr_factor)?;
        Ok(GaussianTrainer {
            cfg: cfg.clone(),
            head,
            store,
            data,
            pool,
            targets,
            bank: PerceptualBank::default(),
            adam,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            step: 0,
            meta: init.meta.clone(),
        })
    }

    pub fn point_count(&self) -> usize {
        self.store.shape(self.head.model.mean.x0)[0]
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let cfg = &self.cfg;
        let set = ImageTermSet {
            silhouette: false,
            lowres: true,
            perceptual: Some(&self.bank),
        };
        self.store.zero_grads();
        let batch = sample_batch(&mut self.rng, &self.pool, cfg.batch);
        let scale = 1.0 / batch.len() as f64;
        let mut terms = Vec::with_capacity(batch.len());
        let mut psnr = 0.0;
        let (model, codes) = (&self.head.model, &self.head.codes);
        for &i in &batch {
            let s = &self.data.samples[i];
            let target = &self.targets[&i];
            let z_id = codes.id_code(&self.store, s.id)?;
            let z_exp = codes.exp_code(&self.store, s.exp)?;
            let (frame, gtape) = model.frame(&self.store, &z_id, &z_exp, &s.pose)?;
            let (feat, rtape) = rasterize(&frame.splats, &target.camera_lr)?;
            let eval = image_forward(&model.psi, &self.store, &feat, target, set)?;
            let (l_lmk, d_lm) = landmark_term(&frame.landmarks, &target.landmarks, &cfg.weights, scale)?;
            let (l_reg, g_id, g_exp) = reg_term(&frame.delta_id, &frame.delta_exp, &cfg.weights, scale)?;
            let (d_feat, _) = image_backward(&model.psi, &mut self.store, &feat, &eval, target, set, &cfg.weights, scale)?;
            let sg = rasterize_backward(&frame.splats, &rtape, &d_feat, None)?;
            let (dz_id, dz_exp) = model.frame_backward(
                &mut self.store,
                &gtape,
                &FrameGrads {
                    splats: &sg,
                    d_delta_id: Some(&g_id),
                    d_delta_exp: Some(&g_exp),
                    d_landmarks: Some(&d_lm),
                },
            )?;
            codes.accumulate(&mut self.store, s.id, &dz_id, s.exp, &dz_exp)?;
            let mut t = eval.terms;
            t.push((Term::Lmk, l_lmk));
            t.push((Term::Reg, l_reg));
            terms.push(t);
            psnr += eval.psnr * scale;
        }
        let rec = finish_record(self.step, Stage::Gaussian, &cfg.weights, mean_terms(&terms), psnr)?;
        self.adam.step(&mut self.store)?;
        self.step += 1;
        Ok(rec)
    }

    pub fn evaluate(&self) -> Result<f64> {
        evaluate_gaussian(&self.head, &self.store, self.data, &self.cfg)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = checkpoint_for(self.store.clone(), STAGE_GAUSSIAN, &self.cfg, self.data);
        if let Some(init) = self.meta.get("init") {
            c = c.with_meta("init", init.clone());
        }
        c
    }
}

pub fn evaluate_gaussian(head: &GaussianHead, store: &ParamStore<f32>, data: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let picked: Vec<usize> = train_indices(data).into_iter().step_by(cfg.eval_stride).collect();
    let mut sum = 0.0;
    for &i in &picked {
        let s = &data.samples[i];
        let target = ViewTarget::<f32>::new(s, cfg.lr_factor)?;
        let z_id = head.codes.id_code(store, s.id)?;
        let z_exp = head.codes.exp_code(store, s.exp)?;
        let v = render_gaussian_view(head, store, &z_id, &z_exp, &s.pose, &target.camera_lr, None)?;
        sum += crate::losses::psnr(&v.hr.data, &target.hr.data)?;
    }
    Ok(sum / picked.len().max(1) as f64)
}

/// Stage 2 from a migrated (or naive) initialization.
pub fn train_gaussian(
    cfg: &TrainConfig,
    data: &Dataset,
    init: &Checkpoint,
    mut log: Option<&mut MetricsCsv>,
) -> Result<(Checkpoint, TrainReport)> {
    if cfg.stage != Stage::Gaussian {
        return Err(Error::Invalid("train_gaussian needs a gaussian-stage config".into()));
    }
    with_threads(cfg.deterministic, || {
        let mut t = GaussianTrainer::new(cfg, data, init)?;
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
