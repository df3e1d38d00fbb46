//! Acceptance suite. Each test prints one `ACCEPTANCE <n> PASS|FAIL` line to
//! stderr (uncaptured) and fails when its criterion is not met.
//!
//! The training budgets are sized for a single CPU core: criteria 4 to 9 share
//! one pipeline run on the default corpus (about half an hour).

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use headsplat::diff::{finite_diff_check, finite_diff_check_mixed, Checkpoint, GradCheck, GradCheckReport, ParamStore};
use headsplat::guide::{marching_tets, marching_tets_backward, eval_sdf_field, eval_sdf_field_backward, SdfNet, TetGrid};
use headsplat::losses::*;
use headsplat::morph::{FrameGrads, GaussianModel, HeadPose, ModelDims};
use headsplat::pipeline::*;
use headsplat::splat::random::{random_scene, test_camera};
use headsplat::splat::{oracle_rasterize, rasterize, rasterize_backward, Camera, FeatureImage, SplatSet};
use headsplat::synth::*;
use headsplat::{Real, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GUIDE_STEPS: usize = 1500;
const GAUSSIAN_STEPS: usize = 1000;
const ABLATION_STEPS: usize = 300;
const ABLATION_SEEDS: [u64; 3] = [11, 12, 13];
const GRAD_SEEDS: u64 = 20;

const LOSS_DROP: f64 = 5.0;
const STAGE_GAIN_DB: f64 = 2.0;
const ABLATION_GAIN_DB: f64 = 1.0;
const FIT_PSNR_DB: f64 = 25.0;
const CODE_COSINE: f64 = 0.9;
const RUNTIME_LIMIT: Duration = Duration::from_secs(60 * 60);

fn report(n: usize, ok: bool, what: &str, detail: &str) {
    let line = format!("ACCEPTANCE {n} {} {what}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    // straight to the handle so the line survives output capture
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

fn lit<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

fn dot<T: Real>(a: &[T], b: &[f64]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * T::lit(y)).sum()
}

// ---------------------------------------------------------------- criterion 1

/// A differentiable family: builds its store for a seed, and evaluates loss
/// plus gradients for the same seed.
trait Family {
    const NAME: &'static str;
    fn store<T: Real>(seed: u64) -> ParamStore<T>;
    fn loss<T: Real>(s: &mut ParamStore<T>, seed: u64) -> Result<T>;
    fn check64() -> GradCheck {
        GradCheck::f64_default()
    }
}

fn splat_fields<T: Real>(s: &ParamStore<T>, channels: usize) -> Result<SplatSet<T>> {
    let get = |n: &str| -> Result<Vec<T>> { Ok(s.value(s.id(n)?).to_vec()) };
    Ok(SplatSet {
        channels,
        pos: get("pos")?,
        color: get("color")?,
        log_scale: get("log_scale")?,
        rot: get("rot")?,
        opacity: get("opacity")?,
    })
}

struct Raster;
impl Family for Raster {
    const NAME: &'static str = "rasterizer";
    fn store<T: Real>(seed: u64) -> ParamStore<T> {
        let sc = random_scene::<T, _>(&mut rng(seed), 10, 3);
        let mut st = ParamStore::new();
        let n = sc.len();
        st.insert("pos", &[n, 3], sc.pos).unwrap();
        st.insert("color", &[n, 3], sc.color).unwrap();
        st.insert("log_scale", &[n, 3], sc.log_scale).unwrap();
        st.insert("rot", &[n, 4], sc.rot).unwrap();
        st.insert("opacity", &[n], sc.opacity).unwrap();
        st
    }
    fn loss<T: Real>(s: &mut ParamStore<T>, seed: u64) -> Result<T> {
        let cam = test_camera(16);
        let mut r = rng(seed + 1000);
        let (w, wa) = (rand_vec(&mut r, 16 * 16 * 3, -1.0, 1.0), rand_vec(&mut r, 16 * 16, -1.0, 1.0));
        let sp = splat_fields(s, 3)?;
        let (img, tape) = rasterize(&sp, &cam)?;
        let loss = dot(&img.data, &w) + dot(&img.alpha, &wa);
        let g = rasterize_backward(&sp, &tape, &lit::<T>(&w), Some(&lit::<T>(&wa)))?;
        for (n, d) in [("pos", &g.pos), ("color", &g.color), ("log_scale", &g.log_scale), ("rot", &g.rot), ("opacity", &g.opacity)] {
            let id = s.id(n)?;
            s.accumulate(id, d)?;
        }
        Ok(loss)
    }
}

const DIMS: ModelDims = ModelDims { channels: 4, id_dim: 5, exp_dim: 3 };

/// Every head of the Gaussian model (f_inj, f_id, f_exp, f_col, f_att,
/// landmarks), the upsampler on top of the render, and the SDF field network.
struct Heads;
impl Family for Heads {
    const NAME: &'static str = "network heads";
    // sharp splats make the plain central difference truncation-limited;
    // the wider stencil doubles the cost, so fewer entries per block
    fn check64() -> GradCheck {
        GradCheck::f64_default().with_h(1e-4).five_point().with_max_entries(32)
    }
    fn store<T: Real>(seed: u64) -> ParamStore<T> {
        let mut r = rng(seed);
        let mut st = ParamStore::new();
        let x0 = lit::<T>(&rand_vec(&mut r, 8 * 3, -0.45, 0.45));
        let gamma = lit::<T>(&rand_vec(&mut r, 8 * 4, -1.0, 1.0));
        let p0 = lit::<T>(&rand_vec(&mut r, 4 * 3, -0.5, 0.5));
        GaussianModel::register(&mut st, DIMS, &x0, &gamma, &p0, &mut r).unwrap();
        SdfNet::register(&mut st, 3, &mut r).unwrap();
        // zero-initialized heads get small random values so every path carries gradient
        let ids: Vec<_> = st.ids().collect();
        for id in ids {
            let name = st.name(id).to_string();
            if ["f_id", "f_exp", "f_att", "psi", "landmarks.gamma"].iter().any(|p| name.starts_with(p)) {
                st.value_mut(id).iter_mut().for_each(|v| *v += T::lit(r.random_range(-0.2..0.2)));
            }
        }
        st.insert("z_id", &[5], lit(&rand_vec(&mut r, 5, -0.5, 0.5))).unwrap();
        st.insert("z_exp", &[3], lit(&rand_vec(&mut r, 3, -0.5, 0.5))).unwrap();
        st
    }
    fn loss<T: Real>(s: &mut ParamStore<T>, seed: u64) -> Result<T> {
        let model = GaussianModel::bind(s, DIMS)?;
        let sdf = SdfNet::bind(s, 3)?;
        let (zid, zexp) = (s.id("z_id")?, s.id("z_exp")?);
        let mut r = rng(seed + 1000);
        let pose = HeadPose::new(headsplat::linalg::rotation_xyz(0.1, 0.2, -0.1), [0.0, 0.05, 0.1])?;
        let cam = Camera::look_at([0.3, -0.2, -2.5], [0.0; 3], [0.0, -1.0, 0.0], 18.0, 12, 12);
        let w_hr = rand_vec(&mut r, 24 * 24 * 3, -1.0, 1.0);
        let w_lm = rand_vec(&mut r, 12, -1.0, 1.0);
        let w_reg = rand_vec(&mut r, 24, -1.0, 1.0);
        let (zi, ze) = (s.value(zid).to_vec(), s.value(zexp).to_vec());
        let (frame, tape) = model.frame(s, &zi, &ze, &pose)?;
        let (feat, rt) = rasterize(&frame.splats, &cam)?;
        let (hr, ptape) = model.psi.forward(s, &feat)?;
        let mut loss = dot(&hr.data, &w_hr)
            + dot(&frame.landmarks, &w_lm)
            + dot(&frame.delta_id, &w_reg)
            + dot(&frame.delta_exp, &w_reg);
        let d_feat = model.psi.backward(s, &ptape, &lit::<T>(&w_hr))?;
        let sg = rasterize_backward(&frame.splats, &rt, &d_feat, None)?;
        let w_reg_t = lit::<T>(&w_reg);
        let (dzi, dze) = model.frame_backward(
            s,
            &tape,
            &FrameGrads { splats: &sg, d_delta_id: Some(&w_reg_t), d_delta_exp: Some(&w_reg_t), d_landmarks: Some(&lit::<T>(&w_lm)) },
        )?;
        s.accumulate(zid, &dzi)?;
        s.accumulate(zexp, &dze)?;

        let mut grid = TetGrid::<T>::new(3, -0.9, 1.1, 3)?; // off the origin, where zero biases sit on a ReLU kink
        let stape = eval_sdf_field(&sdf, s, &mut grid, None)?;
        let (ws, wf) = (rand_vec(&mut r, grid.len(), -1.0, 1.0), rand_vec(&mut r, grid.len() * 3, -1.0, 1.0));
        loss += dot(&grid.sdf, &ws) + dot(&grid.features, &wf);
        eval_sdf_field_backward(&sdf, s, &stape, &lit::<T>(&ws), &lit::<T>(&wf))?;
        Ok(loss)
    }
}

/// Every loss term on one shared prediction vector.
struct Losses;
const LOSS_RES: usize = 12;
impl Family for Losses {
    const NAME: &'static str = "losses";
    // the perceptual L1 has kinks wherever a feature matches its target
    fn check64() -> GradCheck {
        GradCheck::f64_default()
    }
    fn store<T: Real>(seed: u64) -> ParamStore<T> {
        let mut r = rng(seed);
        let mut st = ParamStore::new();
        let n = LOSS_RES * LOSS_RES;
        let gt = rand_vec(&mut rng(seed + 1000), n * 3, 0.0, 1.0);
        // predictions kept 0.05 away from the targets, clear of the L1 kink
        let pred: Vec<f64> = gt.iter().map(|&g| g + if r.random::<bool>() { 0.05 } else { -0.05 } + r.random_range(-0.02..0.02)).collect();
        st.insert("rgb", &[n, 3], lit(&pred)).unwrap();
        st.insert("mask", &[n], lit(&rand_vec(&mut r, n, 0.05, 0.95))).unwrap();
        st.insert("lmk", &[12, 3], lit(&rand_vec(&mut r, 36, -0.5, 0.5))).unwrap();
        st.insert("d_id", &[10, 3], lit(&rand_vec(&mut r, 30, -0.1, 0.1))).unwrap();
        st.insert("d_exp", &[10, 3], lit(&rand_vec(&mut r, 30, -0.1, 0.1))).unwrap();
        st
    }
    fn loss<T: Real>(s: &mut ParamStore<T>, seed: u64) -> Result<T> {
        let n = LOSS_RES * LOSS_RES;
        let mut r = rng(seed + 1000);
        let gt = lit::<T>(&rand_vec(&mut r, n * 3, 0.0, 1.0));
        let gt_mask: Vec<T> = (0..n).map(|_| T::lit(r.random_range(0.0..1.0f64).round())).collect();
        let gt_lmk = lit::<T>(&rand_vec(&mut r, 36, -0.5, 0.5));
        let ids = ["rgb", "mask", "lmk", "d_id", "d_exp"].map(|k| s.id(k).unwrap());
        let v = |i: usize| s.value(ids[i]).to_vec();
        let (rgb, mask, lmk, did, dexp) = (v(0), v(1), v(2), v(3), v(4));

        let (l1, g1) = photometric_l1(&rgb, &gt)?;
        let (sil, gs) = silhouette_loss(&mask, &gt_mask)?;
        let mut feat = FeatureImage::zeros(LOSS_RES, LOSS_RES, 3);
        feat.data = rgb.clone();
        let mut hi = FeatureImage::zeros(LOSS_RES * 2, LOSS_RES * 2, 3);
        hi.data = (0..hi.data.len()).map(|i| gt[(i / 3 / (LOSS_RES * 2) / 2 * LOSS_RES + i / 3 % (LOSS_RES * 2) / 2) * 3 + i % 3]).collect();
        let (lr, glr) = lowres_rgb_loss(&feat, &area_downsample(&hi, 2)?)?;
        let (lm, glm) = landmark_loss(&lmk, &gt_lmk)?;
        let (reg, gri, gre) = displacement_reg(&did, &dexp)?;
        let bank = PerceptualBank::new(seed);
        // target unrelated to the prediction keeps feature pairs away from equality
        let far: Vec<T> = gt.iter().rev().copied().collect();
        let (vgg, gv) = bank.loss(&rgb, &far, LOSS_RES, LOSS_RES)?;

        let rgb_grad: Vec<T> = (0..rgb.len()).map(|i| g1[i] + glr[i] + gv[i]).collect();
        s.accumulate(ids[0], &rgb_grad)?;
        s.accumulate(ids[1], &gs)?;
        s.accumulate(ids[2], &glm)?;
        s.accumulate(ids[3], &gri)?;
        s.accumulate(ids[4], &gre)?;
        Ok(l1 + sil + lr + lm + reg + vgg)
    }
}

/// Marching-tets vertex positions and features w.r.t. lattice SDF values.
struct Extraction;
impl Family for Extraction {
    const NAME: &'static str = "marching tets";
    fn store<T: Real>(seed: u64) -> ParamStore<T> {
        let g = blob_grid::<T>(seed);
        let mut st = ParamStore::new();
        st.insert("sdf", &[g.len()], g.sdf.clone()).unwrap();
        st.insert("feat", &[g.len(), 2], g.features.clone()).unwrap();
        st
    }
    fn loss<T: Real>(s: &mut ParamStore<T>, seed: u64) -> Result<T> {
        let mut g = blob_grid::<T>(seed);
        g.sdf.copy_from_slice(s.value(s.id("sdf")?));
        g.features.copy_from_slice(s.value(s.id("feat")?));
        let m = marching_tets(&g);
        let mut r = rng(seed + 1000);
        // weights indexed by edge so they follow the vertex, not its slot
        let wv: Vec<f64> = m.edges.iter().flat_map(|e| {
            let mut q = rng(seed ^ ((e[0] as u64) << 20) ^ e[1] as u64);
            [q.random_range(-1.0..1.0), q.random_range(-1.0..1.0), q.random_range(-1.0..1.0)]
        }).collect();
        let wf = rand_vec(&mut r, m.features.len(), -1.0, 1.0);
        let loss = dot(&m.vertices, &wv) + dot(&m.features, &wf);
        let (ds, df) = marching_tets_backward(&g, &m, &lit::<T>(&wv), &lit::<T>(&wf))?;
        let (a, b) = (s.id("sdf")?, s.id("feat")?);
        s.accumulate(a, &ds)?;
        s.accumulate(b, &df)?;
        Ok(loss)
    }
}

/// Randomly placed sphere on a coarse lattice, nudged so no value sits on zero.
fn blob_grid<T: Real>(seed: u64) -> TetGrid<T> {
    let mut r = rng(seed);
    let c = [r.random_range(-0.1..0.1), r.random_range(-0.1..0.1), r.random_range(-0.1..0.1)];
    let rad = r.random_range(0.45..0.6);
    let mut g = TetGrid::<T>::new(7, -1.0, 1.0, 2).unwrap();
    g.fill_sdf(|p: [T; 3]| {
        let d: f64 = (0..3).map(|k| (p[k].to_f64_lossy() - c[k]).powi(2)).sum::<f64>().sqrt() - rad;
        T::lit(if d.abs() < 0.02 { d + 0.04f64.copysign(d) } else { d })
    });
    for v in 0..g.len() {
        let p = g.position(v);
        g.features[v * 2] = p[0] + p[1];
        g.features[v * 2 + 1] = p[2] * p[2];
    }
    g
}

fn check_family<F: Family>() -> (bool, String) {
    let t = Instant::now();
    let (mut worst64, mut worst32, mut failures) = (0.0f64, 0.0f64, Vec::new());
    for seed in 0..GRAD_SEEDS {
        let mut s64 = F::store::<f64>(seed);
        let r64: GradCheckReport = finite_diff_check(&mut s64, &F::check64(), |s| F::loss(s, seed)).unwrap();
        let mut s32 = F::store::<f32>(seed);
        let r32 = finite_diff_check_mixed(&mut s32, &GradCheck::f32_default(), |s| F::loss(s, seed), |s: &mut ParamStore<f64>| F::loss(s, seed))
            .unwrap();
        worst64 = worst64.max(r64.max_rel_err());
        worst32 = worst32.max(r32.max_rel_err());
        if !r64.passed() {
            failures.push(format!("seed {seed} f64\n{r64}"));
        }
        if !r32.passed() {
            failures.push(format!("seed {seed} f32\n{r32}"));
        }
    }
    let detail = format!("{} x{GRAD_SEEDS}: max rel err f64 {worst64:.1e} f32 {worst32:.1e} ({:.0}s)", F::NAME, t.elapsed().as_secs_f64());
    if !failures.is_empty() {
        eprintln!("{}", failures.join("\n"));
    }
    (failures.is_empty(), detail)
}

#[test]
fn criterion_1_gradient_suite() {
    let t = Instant::now();
    let results = [check_family::<Raster>(), check_family::<Heads>(), check_family::<Losses>(), check_family::<Extraction>()];
    let fast = t.elapsed() < Duration::from_secs(300);
    let ok = fast && results.iter().all(|r| r.0);
    let detail = results.iter().map(|r| r.1.as_str()).collect::<Vec<_>>().join("; ");
    report(1, ok, "gradient suite", &format!("{detail}; {:.0}s (limit 300s)", t.elapsed().as_secs_f64()));
    assert!(ok);
}

// ---------------------------------------------------------------- criterion 2

fn permuted<T: Real>(s: &SplatSet<T>, order: &[usize]) -> SplatSet<T> {
    let c = s.channels;
    let pick = |v: &[T], w: usize| order.iter().flat_map(|&i| v[i * w..i * w + w].to_vec()).collect::<Vec<T>>();
    SplatSet {
        channels: c,
        pos: pick(&s.pos, 3),
        color: pick(&s.color, c),
        log_scale: pick(&s.log_scale, 3),
        rot: pick(&s.rot, 4),
        opacity: pick(&s.opacity, 1),
    }
}

#[test]
fn criterion_2_oracle_equivalence() {
    let cam = test_camera(32);
    let (mut worst, mut worst_perm) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let mut r = rng(seed);
        let n = r.random_range(1..=128);
        let s = random_scene::<f32, _>(&mut r, n, 3);
        let (tiled, _) = rasterize(&s, &cam).unwrap();
        worst = worst.max(tiled.max_abs_diff(&oracle_rasterize(&s, &cam).unwrap()));
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut r);
        let (p, _) = rasterize(&permuted(&s, &order), &cam).unwrap();
        worst_perm = worst_perm.max(p.max_abs_diff(&tiled));
    }
    let ok = worst <= 1e-5 && worst_perm <= 1e-6;
    report(2, ok, "oracle equivalence", &format!("100 scenes <=128 splats at 32px: max |tiled - oracle| {worst:.1e} (<=1e-5), permutation {worst_perm:.1e} (<=1e-6)"));
    assert!(ok);
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_isosurface() {
    let r = 0.55;
    let mut g = TetGrid::<f64>::new(24, -1.0, 1.0, 1).unwrap();
    g.fill_sdf(|p: [f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - r);
    let m = marching_tets(&g);
    let radial = m.vertices.chunks_exact(3).map(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - r).abs()).fold(0.0, f64::max);
    let half = g.spacing() / 2.0;
    let chi = m.euler_characteristic();

    let (a, b) = ([0.3, -0.5, 0.8], 0.07);
    let mut lin = TetGrid::<f64>::new(9, -1.0, 1.0, 1).unwrap();
    lin.fill_sdf(|p: [f64; 3]| a[0] * p[0] + a[1] * p[1] + a[2] * p[2] + b);
    let lm = marching_tets(&lin);
    let plane = lm.vertices.chunks_exact(3).map(|v| (a[0] * v[0] + a[1] * v[1] + a[2] * v[2] + b).abs()).fold(0.0, f64::max);

    let ok = radial <= half && chi == 2 && plane <= 1e-6 && !lm.is_empty();
    report(3, ok, "isosurface", &format!("sphere max radial err {radial:.4} (<= half spacing {half:.4}), euler {chi} (2); linear field max residual {plane:.1e} (<=1e-6)"));
    assert!(ok);
}

// ---------------------------------------------------------------- shared pipeline run

struct Pipeline {
    _dir: tempfile::TempDir,
    data: Dataset,
    guide: Checkpoint,
    guide_report: TrainReport,
    gaussian: Checkpoint,
    gaussian_report: TrainReport,
    elapsed: Duration,
}

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let t = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        generate_corpus(&CorpusConfig::default(), dir.path()).unwrap();
        let data = Dataset::load(dir.path()).unwrap();
        let (guide, guide_report) = train_guide(&TrainConfig { steps: GUIDE_STEPS, ..TrainConfig::guide() }, &data, None).unwrap();
        let init = migrate(&guide).unwrap();
        let (gaussian, gaussian_report) =
            train_gaussian(&TrainConfig { steps: GAUSSIAN_STEPS, ..TrainConfig::gaussian() }, &data, &init, None).unwrap();
        Pipeline { _dir: dir, data, guide, guide_report, gaussian, gaussian_report, elapsed: t.elapsed() }
    })
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_end_to_end_convergence() {
    let p = pipeline();
    let h = &p.guide_report;
    let early = h.mean_total(100, 110);
    let late = h.mean_total(GUIDE_STEPS - 10, GUIDE_STEPS);
    let drop = early / late;
    let gain = p.gaussian_report.final_psnr - h.final_psnr;
    let ok = drop >= LOSS_DROP && gain >= STAGE_GAIN_DB && p.elapsed < RUNTIME_LIMIT;
    report(
        4,
        ok,
        "end-to-end convergence",
        &format!(
            "stage-1 loss {early:.4} (steps 100-109) -> {late:.4} (last 10 of {GUIDE_STEPS}), drop {drop:.2}x (>= {LOSS_DROP}x); \
             PSNR guide {:.2} -> gaussian {:.2} after {GAUSSIAN_STEPS} steps, gain {gain:.2} dB (>= {STAGE_GAIN_DB}); runtime {:.1} min (< 60)",
            h.final_psnr,
            p.gaussian_report.final_psnr,
            p.elapsed.as_secs_f64() / 60.0
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_5_initialization_ablation() {
    let p = pipeline();
    let migrated = migrate(&p.guide).unwrap();
    let n = migrated.store.shape(migrated.store.id("mean.x0").unwrap())[0];
    let mut rows = Vec::new();
    let mut wins = 0;
    for seed in ABLATION_SEEDS {
        let cfg = TrainConfig { steps: ABLATION_STEPS, seed, ..TrainConfig::gaussian() };
        let (_, a) = train_gaussian(&cfg, &p.data, &migrated, None).unwrap();
        let naive = naive_init(&cfg, &p.data, n).unwrap();
        let (_, b) = train_gaussian(&cfg, &p.data, &naive, None).unwrap();
        let gain = a.final_psnr - b.final_psnr;
        wins += usize::from(gain >= ABLATION_GAIN_DB);
        rows.push(format!("seed {seed}: migrated {:.2} vs naive {:.2} ({gain:+.2} dB)", a.final_psnr, b.final_psnr));
    }
    let ok = wins == ABLATION_SEEDS.len();
    report(5, ok, "initialization ablation", &format!("{ABLATION_STEPS} steps, {n} points each; {}; {wins}/3 seeds >= +{ABLATION_GAIN_DB} dB", rows.join("; ")));
    assert!(ok);
}

// ---------------------------------------------------------------- criteria 6 and 9 share fits

fn frontal_view(data: &Dataset) -> usize {
    data.manifest.config.n_views / 2
}

fn sample(data: &Dataset, id: usize, exp: usize, view: usize) -> &ViewSample {
    data.samples.iter().find(|s| (s.id, s.exp, s.view) == (id, exp, view)).expect("sample exists")
}

struct Fits {
    holdout: FittedHead,
    holdout_psnr: f64,
    train: FittedHead,
}

fn fits() -> &'static Fits {
    static F: OnceLock<Fits> = OnceLock::new();
    F.get_or_init(|| {
        let p = pipeline();
        let v = frontal_view(&p.data);
        let held = p.data.manifest.identities.iter().position(|r| r.split == Split::Holdout).unwrap();
        let s = sample(&p.data, held, 0, v);
        let holdout = fit_image(&p.gaussian, &s.image, &s.camera, &s.pose, &FitSchedule::default()).unwrap();
        let rec = holdout.reconstruction().unwrap();
        let hr: Vec<f64> = rec.hr.data.iter().map(|&x| x as f64).collect();
        let holdout_psnr = psnr(&hr, &s.image).unwrap();
        let t = sample(&p.data, 0, 0, v);
        let train = fit_image(&p.gaussian, &t.image, &t.camera, &t.pose, &FitSchedule::default()).unwrap();
        Fits { holdout, holdout_psnr, train }
    })
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let n = |v: &[f32]| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    d / (n(a) * n(b))
}

#[test]
fn criterion_6_fitting_protocol() {
    let p = pipeline();
    let f = fits();
    let sched = FitSchedule::default();
    let schedule_ok = (sched.phase1_iters, sched.phase1_lr, sched.phase2_iters, sched.phase2_lr) == (200, 1e-3, 100, 1e-4);
    let phases = |h: &[FitRow]| (h.iter().filter(|r| r.phase == 1).count(), h.iter().filter(|r| r.phase == 2).count());
    let rows_ok = phases(&f.holdout.history) == (200, 100) && phases(&f.train.history) == (200, 100);
    let head = GaussianHead::from_checkpoint(&p.gaussian).unwrap();
    let stored = head.codes.id_code(&p.gaussian.store, 0).unwrap();
    let cos = cosine(&f.train.z_id, &stored);
    let ok = schedule_ok && rows_ok && f.holdout_psnr >= FIT_PSNR_DB && cos > CODE_COSINE;
    report(
        6,
        ok,
        "fitting protocol",
        &format!(
            "schedule 200@1e-3 + 100@1e-4 {}; iteration rows {:?}/{:?}; held-out input-view PSNR {:.2} (>= {FIT_PSNR_DB}); \
             training-sample z_id cosine {cos:.3} (> {CODE_COSINE})",
            if schedule_ok { "ok" } else { "WRONG" },
            phases(&f.holdout.history),
            phases(&f.train.history),
            f.holdout_psnr
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_disentanglement_dataflow() {
    let p = pipeline();
    let head = GaussianHead::from_checkpoint(&p.gaussian).unwrap();
    let st = &p.gaussian.store;
    let code = |id: usize, exp: usize| (head.codes.id_code(st, id).unwrap(), head.codes.exp_code(st, exp).unwrap());
    let pose = HeadPose::identity();
    let frame = |c: &(Vec<f32>, Vec<f32>)| head.model.frame(st, &c.0, &c.1, &pose).unwrap().0;
    let (ab, ac, db) = (code(0, 1), code(0, 2), code(3, 1));
    let (f_ab, f_ac) = (frame(&ab), frame(&ac));
    let delta_id_same = f_ab.delta_id == f_ac.delta_id;
    // the expression branch of (id_a, exp_b) and (id_d, exp_b) is fed the same code row
    let exp_input_same = ab.1 == db.1 && ab.0 != db.0;
    let color_moves = f_ab.splats.color != f_ac.splats.color;
    let att_moves = f_ab.splats.log_scale != f_ac.splats.log_scale
        && f_ab.splats.rot != f_ac.splats.rot
        && f_ab.splats.opacity != f_ac.splats.opacity;
    let ok = delta_id_same && exp_input_same && color_moves && att_moves;
    report(
        7,
        ok,
        "disentanglement dataflow",
        &format!("delta_id bit-identical under z_exp swap: {delta_id_same}; shared z_exp into f_exp: {exp_input_same}; color depends on z_exp: {color_moves}; scale/rotation/opacity depend on z_exp: {att_moves}"),
    );
    assert!(ok);
}

// ---------------------------------------------------------------- criterion 8

fn bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_headsplat")).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    let p = |s: &str| d.join(s).to_str().unwrap().to_string();
    run(&["gen-data", "--ids", "3", "--exps", "2", "--views", "3", "--res", "32", "--out", &p("data")]);
    let small = ["--set", "grid.res=16", "--set", "pretrain_steps=50", "--steps", "8", "--seed", "5", "--deterministic"];
    let (data, init) = (p("data"), p("init"));
    let mut same = true;
    let mut files = 0;
    for run_dir in ["a", "b"] {
        let mut g = vec!["train", "--stage", "guide", "--data", &data];
        let out = p(&format!("guide_{run_dir}"));
        g.extend(["--out", &out]);
        g.extend(small);
        run(&g);
    }
    run(&["migrate", "--guide", &p("guide_a"), "--out", &init]);
    for run_dir in ["a", "b"] {
        let out = p(&format!("gauss_{run_dir}"));
        let mut g = vec!["train", "--stage", "gaussian", "--data", &data, "--init", &init, "--out", &out];
        g.extend(small);
        run(&g);
    }
    for stage in ["guide", "gauss"] {
        for f in ["checkpoint/params.bin", "checkpoint/manifest.txt", "train.csv"] {
            same &= bytes(&d.join(format!("{stage}_a")).join(f)) == bytes(&d.join(format!("{stage}_b")).join(f));
            files += 1;
        }
    }
    report(8, same, "determinism", &format!("two `train --deterministic` runs per stage: {files} checkpoint/CSV files bit-identical: {same}"));
    assert!(same);
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_9_expression_editing() {
    let p = pipeline();
    let f = fits();
    let source = &f.train;
    let head = GaussianHead::from_checkpoint(&p.gaussian).unwrap();
    let jaw_exp = (0..p.data.manifest.expressions.len())
        .max_by(|&a, &b| {
            let j = |e: usize| p.data.manifest.expressions[e].factors.jaw_open;
            j(a).total_cmp(&j(b))
        })
        .unwrap();
    let jaw_code = head.codes.exp_code(&p.gaussian.store, jaw_exp).unwrap();
    let before = source.reconstruction().unwrap();
    let after = edit_expression(source, &jaw_code, &source.camera, &source.pose).unwrap();
    let k = JAW_LANDMARK;
    let moved: Vec<f64> = (0..3).map(|c| (after.landmarks[k * 3 + c] - before.landmarks[k * 3 + c]) as f64).collect();

    // ground truth: the same identity's jaw landmark, neutral vs jaw-open, in the source pose
    let scene = |e: usize| build_scene(&p.data.manifest.factors(0, e).unwrap()).unwrap().landmarks;
    let (n0, n1) = (scene(0), scene(jaw_exp));
    let gt_canon: Vec<f64> = (0..3).map(|c| n1[k * 3 + c] - n0[k * 3 + c]).collect();
    let r = source.pose.rotation;
    let gt: Vec<f64> = (0..3).map(|i| (0..3).map(|j| r[i][j] * gt_canon[j]).sum()).collect();
    let agree: f64 = moved.iter().zip(&gt).map(|(a, b)| a * b).sum();
    let delta_id_same = before.delta_id == after.delta_id;
    let ok = agree > 0.0 && delta_id_same;
    report(
        9,
        ok,
        "expression editing",
        &format!(
            "jaw landmark moved ({:+.4}, {:+.4}, {:+.4}) vs ground truth ({:+.4}, {:+.4}, {:+.4}) for expression {jaw_exp}: dot {agree:+.2e} (> 0); delta_id bit-identical: {delta_id_same}",
            moved[0], moved[1], moved[2], gt[0], gt[1], gt[2]
        ),
    );
    assert!(ok);
}
