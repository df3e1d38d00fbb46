use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use headsplat::losses::{psnr, ssim, MetricsCsv, Stage};
use headsplat::morph::HeadPose;
use headsplat::pipeline::common::{checkpoint_config, checkpoint_dims};
use headsplat::pipeline::*;
use headsplat::splat::{Camera, FeatureImage};
use headsplat::synth::{generate_corpus, load_rgb, CorpusConfig, Dataset, Split, MANIFEST};

use crate::io::*;
use crate::usage;

/// Name of the echoed invocation written next to every command's output.
pub const RUN_FILE: &str = "run.json";

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate the synthetic multi-view corpus.
    GenData(GenDataArgs),
    /// Train the guide or the Gaussian stage.
    Train(TrainArgs),
    /// Turn a trained guide checkpoint into a Gaussian initialization.
    Migrate(MigrateArgs),
    /// Render identity/expression code pairs.
    Render(RenderArgs),
    /// Fit a trained model to one image.
    Fit(FitArgs),
    /// Re-render a fitted subject under another expression.
    Edit(EditArgs),
    /// PSNR/SSIM table over a corpus split.
    Eval(EvalArgs),
    /// Re-run a command from its echoed `run.json`.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub ids: usize,
    #[arg(long, default_value_t = 5)]
    pub exps: usize,
    #[arg(long, default_value_t = 12)]
    pub views: usize,
    /// Extra identities generated for fitting only, after the `--ids` training ones.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    #[arg(long, default_value_t = 64)]
    pub res: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageArg {
    Guide,
    Gaussian,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::Guide => Stage::Guide,
            StageArg::Gaussian => Stage::Gaussian,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub stage: StageArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Gaussian stage: checkpoint written by `migrate`.
    #[arg(long, conflicts_with = "naive")]
    pub init: Option<PathBuf>,
    /// Gaussian stage: start from this many points on a template ellipsoid instead.
    #[arg(long)]
    pub naive: Option<usize>,
    /// Base config (e.g. an echoed `config.json`); the stage defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dotted-key override, e.g. `weights.lap=50` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Single-threaded, bit-reproducible run.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MigrateArgs {
    #[arg(long)]
    pub guide: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RenderArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Identity code rows of the trained bank (comma separated).
    #[arg(long, value_delimiter = ',', conflicts_with = "id_code_file")]
    pub id_index: Vec<usize>,
    /// JSON array holding an identity code.
    #[arg(long)]
    pub id_code_file: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', conflicts_with = "exp_code_file")]
    pub exp_index: Vec<usize>,
    #[arg(long)]
    pub exp_code_file: Option<PathBuf>,
    #[arg(long)]
    pub camera_file: PathBuf,
    /// Head pose JSON; identity when absent.
    #[arg(long)]
    pub pose_file: Option<PathBuf>,
    /// Output directory, one PNG per code pair.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub camera_file: PathBuf,
    #[arg(long)]
    pub pose_file: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Schedule override, e.g. `phase1_iters=50` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EditArgs {
    /// Output of `fit`.
    #[arg(long)]
    pub fitted: PathBuf,
    /// Read the target expression off this image (codes-only fit).
    #[arg(long, required_unless_present = "exp_code_file", conflicts_with = "exp_code_file")]
    pub target_image: Option<PathBuf>,
    #[arg(long, requires = "target_image")]
    pub target_camera_file: Option<PathBuf>,
    #[arg(long, requires = "target_image")]
    pub target_pose_file: Option<PathBuf>,
    #[arg(long)]
    pub exp_code_file: Option<PathBuf>,
    /// Output camera; the fitted view when absent.
    #[arg(long)]
    pub camera_file: Option<PathBuf>,
    #[arg(long)]
    pub pose_file: Option<PathBuf>,
    /// Frames interpolating from the source to the target expression.
    #[arg(long, default_value_t = 1)]
    pub frames: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Holdout,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "self_check")]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Score the ground truth against itself.
    #[arg(long)]
    pub self_check: bool,
    /// Evaluate every n-th sample of the split.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    /// Codes-only fitting iterations for held-out identities.
    #[arg(long, default_value_t = 200)]
    pub fit_iters: usize,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    pub file: PathBuf,
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a, cmd),
        Command::Train(a) => train(a, cmd),
        Command::Migrate(a) => migrate_cmd(a, cmd),
        Command::Render(a) => render(a, cmd),
        Command::Fit(a) => fit(a, cmd),
        Command::Edit(a) => edit(a, cmd),
        Command::Eval(a) => eval(a, cmd),
        Command::Replay(a) => {
            let inner: Command = read_json(&a.file)?;
            run(&inner)
        }
    }
}

fn echo(dir: &Path, cmd: &Command) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join(RUN_FILE), cmd)
}

fn read_pose(path: Option<&PathBuf>) -> Result<HeadPose> {
    path.map_or(Ok(HeadPose::identity()), |p| read_json(p))
}

fn gen_data(a: &GenDataArgs, cmd: &Command) -> Result<()> {
    let cfg = CorpusConfig {
        seed: a.seed,
        n_id: a.ids,
        n_exp: a.exps,
        n_views: a.views,
        n_holdout: a.holdout,
        resolution: a.res,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let manifest = generate_corpus(&cfg, &a.out)?;
    create_dir(&a.out.join("cameras"))?;
    for (v, cam) in manifest.cameras.iter().enumerate() {
        write_json(&a.out.join("cameras").join(format!("{v}.json")), cam)?;
    }
    create_dir(&a.out.join("poses"))?;
    for s in manifest.samples.iter().filter(|s| s.view == 0) {
        write_json(&a.out.join("poses").join(format!("{}_{}.json", s.id, s.exp)), &s.pose)?;
    }
    echo(&a.out, cmd)?;
    println!("{}", a.out.join(MANIFEST).display());
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let stage = Stage::from(a.stage);
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_json(&text)?
        }
        None => TrainConfig::for_stage(stage),
    };
    if cfg.stage != stage {
        return Err(usage(format!("config stage `{}` does not match --stage {}", cfg.stage.name(), stage.name())));
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg = apply_overrides(&cfg, &a.set).map_err(|e| usage(e.to_string()))?;
    cfg.deterministic |= a.deterministic;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn train(a: &TrainArgs, cmd: &Command) -> Result<()> {
    let cfg = train_config(a)?;
    match (a.stage, &a.init, a.naive) {
        (StageArg::Gaussian, None, None) => {
            return Err(usage("--stage gaussian needs --init <checkpoint from migrate> or --naive <points>"))
        }
        (StageArg::Guide, Some(_), _) | (StageArg::Guide, _, Some(_)) => {
            return Err(usage("--init and --naive only apply to --stage gaussian"))
        }
        _ => {}
    }
    echo(&a.out, cmd)?;
    std::fs::write(a.out.join("config.json"), cfg.to_json() + "\n")?;
    let data = Dataset::load(&a.data)?;
    let mut csv = MetricsCsv::create(&a.out.join("train.csv"))?;
    let (ckpt, report) = match a.stage {
        StageArg::Guide => train_guide(&cfg, &data, Some(&mut csv))?,
        StageArg::Gaussian => {
            let init = match (&a.init, a.naive) {
                (Some(p), _) => load_checkpoint(p)?,
                (None, Some(n)) => naive_init(&cfg, &data, n)?,
                (None, None) => unreachable!("checked above"),
            };
            train_gaussian(&cfg, &data, &init, Some(&mut csv))?
        }
    };
    ckpt.save(&a.out.join("checkpoint"))?;
    println!("steps {} final psnr {:.3}", report.history.len(), report.final_psnr);
    Ok(())
}

fn migrate_cmd(a: &MigrateArgs, cmd: &Command) -> Result<()> {
    let init = migrate(&load_checkpoint(&a.guide)?)?;
    echo(&a.out, cmd)?;
    init.save(&a.out.join("checkpoint"))?;
    let n = init.store.shape(init.store.id("mean.x0")?)[0];
    println!("points {n}");
    Ok(())
}

type Codes = Vec<(String, Vec<f32>)>;

fn pick_codes(indices: &[usize], file: Option<&PathBuf>, what: &str, bank: impl Fn(usize) -> Result<Vec<f32>>) -> Result<Codes> {
    match file {
        Some(p) => Ok(vec![(format!("{what}code"), read_code(p)?)]),
        None if indices.is_empty() => Err(usage(format!("give --{what}-index or --{what}-code-file"))),
        None => indices.iter().map(|&i| Ok((format!("{what}{i}"), bank(i)?))).collect(),
    }
}

fn render(a: &RenderArgs, cmd: &Command) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let stage = ckpt.stage()?.to_string();
    let cfg = checkpoint_config(&ckpt)?;
    let dims = checkpoint_dims(&ckpt)?;
    let camera: Camera = read_json(&a.camera_file)?;
    let pose = read_pose(a.pose_file.as_ref())?;
    let camera_lr = camera.downscaled(cfg.lr_factor);
    let st = &ckpt.store;

    let draw: Box<dyn Fn(&[f32], &[f32]) -> Result<FeatureImage<f32>>> = match stage.as_str() {
        STAGE_GUIDE => {
            let model = GuideModel::bind(st, dims)?;
            let geo = mean_geometry(&model, st, &cfg.grid)?;
            Box::new(move |zi, ze| Ok(render_guide_view(&model, st, &geo, zi, ze, &pose, &camera_lr)?.hr))
        }
        STAGE_GAUSSIAN | STAGE_GAUSSIAN_INIT => {
            let head = GaussianHead::bind(st, dims)?;
            Box::new(move |zi, ze| Ok(render_gaussian_view(&head, st, zi, ze, &pose, &camera_lr, None)?.hr))
        }
        other => return Err(usage(format!("cannot render a `{other}` checkpoint here (use `edit` for fitted subjects)"))),
    };
    let bank = headsplat::morph::CodeBank::bind(st, dims)?;
    let ids = pick_codes(&a.id_index, a.id_code_file.as_ref(), "id", |i| Ok(bank.id_code(st, i)?))?;
    let exps = pick_codes(&a.exp_index, a.exp_code_file.as_ref(), "exp", |i| Ok(bank.exp_code(st, i)?))?;

    echo(&a.out, cmd)?;
    for (il, zi) in &ids {
        for (el, ze) in &exps {
            let path = a.out.join(format!("{il}_{el}.png"));
            save_image(&path, &draw(zi, ze)?)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn to_f64(img: &FeatureImage<f32>) -> Vec<f64> {
    img.data.iter().map(|&v| v as f64).collect()
}

fn square_image(path: &Path, camera: &Camera) -> Result<Vec<f64>> {
    if camera.width != camera.height {
        return Err(usage(format!("camera must be square, got {}x{}", camera.width, camera.height)));
    }
    Ok(load_rgb(path, camera.width)?)
}

fn fit(a: &FitArgs, cmd: &Command) -> Result<()> {
    let schedule = apply_overrides(&FitSchedule::default(), &a.set).map_err(|e| usage(e.to_string()))?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let camera: Camera = read_json(&a.camera_file)?;
    let pose = read_pose(a.pose_file.as_ref())?;
    let image = square_image(&a.image, &camera)?;
    echo(&a.out, cmd)?;
    let fitted = fit_image(&ckpt, &image, &camera, &pose, &schedule)?;

    let path = a.out.join("fit.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?);
    writeln!(f, "phase,iteration,loss,psnr")?;
    for r in &fitted.history {
        writeln!(f, "{},{},{},{}", r.phase, r.iteration, r.loss, r.psnr)?;
    }
    f.flush()?;
    fitted.to_checkpoint().save(&a.out.join("fitted"))?;
    write_json(&a.out.join("z_id.json"), &fitted.z_id)?;
    write_json(&a.out.join("z_exp.json"), &fitted.z_exp)?;
    let rec = fitted.reconstruction()?;
    save_image(&a.out.join("reconstruction.png"), &rec.hr)?;
    println!("iterations {} psnr {:.3}", fitted.history.len(), psnr(&to_f64(&rec.hr), &image)?);
    Ok(())
}

fn edit(a: &EditArgs, cmd: &Command) -> Result<()> {
    if a.frames == 0 {
        return Err(usage("--frames must be at least 1"));
    }
    let source = FittedHead::from_checkpoint(&load_checkpoint(&a.fitted)?)?;
    let camera = match &a.camera_file {
        Some(p) => read_json(p)?,
        None => source.camera.clone(),
    };
    let pose = match &a.pose_file {
        Some(p) => read_json(p)?,
        None => source.pose,
    };
    let target = match (&a.exp_code_file, &a.target_image) {
        (Some(p), _) => read_code(p)?,
        (None, Some(img)) => {
            let tcam = match &a.target_camera_file {
                Some(p) => read_json(p)?,
                None => source.camera.clone(),
            };
            let tpose = match &a.target_pose_file {
                Some(p) => read_json(p)?,
                None => source.pose,
            };
            let image = square_image(img, &tcam)?;
            fit_image(&source.model_checkpoint()?, &image, &tcam, &tpose, &FitSchedule::codes_only())?.z_exp
        }
        (None, None) => return Err(usage("give --target-image or --exp-code-file")),
    };
    echo(&a.out, cmd)?;
    write_json(&a.out.join("z_exp.json"), &target)?;
    for k in 0..a.frames {
        let t = if a.frames == 1 { 1.0 } else { k as f32 / (a.frames - 1) as f32 };
        let z = interpolate_codes(&source.z_exp, &target, t)?;
        let v = edit_expression(&source, &z, &camera, &pose)?;
        let path = a.out.join(format!("edit_{k:03}.png"));
        save_image(&path, &v.hr)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn eval(a: &EvalArgs, cmd: &Command) -> Result<()> {
    if a.stride == 0 {
        return Err(usage("--stride must be at least 1"));
    }
    let data = Dataset::load(&a.data)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Holdout => Split::Holdout,
    };
    let res = data.resolution();
    let ckpt = match (&a.ckpt, a.self_check) {
        (Some(p), false) => Some(load_checkpoint(p)?),
        _ => None,
    };
    let predict: Box<dyn Fn(&headsplat::synth::ViewSample) -> Result<Vec<f64>>> = match &ckpt {
        None => Box::new(|s| Ok(s.image.clone())),
        Some(ck) => {
            let cfg = checkpoint_config(ck)?;
            let dims = checkpoint_dims(ck)?;
            let st = &ck.store;
            match (ck.stage()?, split) {
                (STAGE_GUIDE, Split::Train) => {
                    let model = GuideModel::bind(st, dims)?;
                    let geo = mean_geometry(&model, st, &cfg.grid)?;
                    Box::new(move |s| {
                        let (zi, ze) = (model.codes.id_code(st, s.id)?, model.codes.exp_code(st, s.exp)?);
                        let v = render_guide_view(&model, st, &geo, &zi, &ze, &s.pose, &s.camera.downscaled(cfg.lr_factor))?;
                        Ok(to_f64(&v.hr))
                    })
                }
                (STAGE_GAUSSIAN, Split::Train) => {
                    let head = GaussianHead::bind(st, dims)?;
                    Box::new(move |s| {
                        let (zi, ze) = (head.codes.id_code(st, s.id)?, head.codes.exp_code(st, s.exp)?);
                        let v = render_gaussian_view(&head, st, &zi, &ze, &s.pose, &s.camera.downscaled(cfg.lr_factor), None)?;
                        Ok(to_f64(&v.hr))
                    })
                }
                (STAGE_GAUSSIAN, Split::Holdout) => {
                    let schedule = FitSchedule { phase1_iters: a.fit_iters, ..FitSchedule::codes_only() };
                    Box::new(move |s| Ok(to_f64(&fit_image(ck, &s.image, &s.camera, &s.pose, &schedule)?.reconstruction()?.hr)))
                }
                (stage, _) => return Err(usage(format!("cannot evaluate a `{stage}` checkpoint on the {:?} split", a.split))),
            }
        }
    };

    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            let mut echo_path = p.clone().into_os_string();
            echo_path.push(".run.json");
            write_json(Path::new(&echo_path), cmd)?;
            Box::new(std::io::BufWriter::new(
                std::fs::File::create(p).with_context(|| format!("writing {}", p.display()))?,
            ))
        }
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "sample,psnr,ssim")?;
    let (mut sum_p, mut sum_s, mut n) = (0.0, 0.0, 0usize);
    for s in data.split(split).into_iter().step_by(a.stride) {
        let pred = predict(s)?;
        let (p, q) = (psnr(&pred, &s.image)?, ssim(&pred, &s.image, res, res, 3)?);
        writeln!(out, "{}_{}_{},{p},{q}", s.id, s.exp, s.view)?;
        sum_p += p;
        sum_s += q;
        n += 1;
    }
    out.flush()?;
    if a.out.is_some() {
        println!("samples {n} mean psnr {:.3} mean ssim {:.4}", sum_p / n.max(1) as f64, sum_s / n.max(1) as f64);
    }
    Ok(())
}
