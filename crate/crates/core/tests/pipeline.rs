use std::sync::OnceLock;

use headsplat::diff::{Checkpoint, ParamStore};
use headsplat::losses::{LossWeights, MetricsCsv, Stage, Term};
use headsplat::pipeline::common::finish_record;
use headsplat::pipeline::*;
use headsplat::synth::*;
use headsplat::Error;

struct Fixture {
    _dir: tempfile::TempDir,
    data: Dataset,
    guide: Checkpoint,
    gaussian: Checkpoint,
}

fn tiny_guide_config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 2,
        grid: GridConfig { res: 16, ..GridConfig::default() },
        pretrain_steps: 60,
        pretrain_batch: 128,
        eval_stride: 3,
        ..TrainConfig::guide()
    }
}

fn tiny_gaussian_config(steps: usize) -> TrainConfig {
    TrainConfig { stage: Stage::Gaussian, ..tiny_guide_config(steps) }
}

/// Two training identities, one held out, trained briefly through both stages.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig { seed: 3, n_id: 2, n_exp: 2, n_views: 3, n_holdout: 1, resolution: 32 };
        generate_corpus(&cfg, dir.path()).unwrap();
        let data = Dataset::load(dir.path()).unwrap();
        let (guide, _) = train_guide(&tiny_guide_config(30), &data, None).unwrap();
        let init = migrate(&guide).unwrap();
        let (gaussian, _) = train_gaussian(&tiny_gaussian_config(10), &data, &init, None).unwrap();
        Fixture { _dir: dir, data, guide, gaussian }
    })
}

fn same_store(a: &ParamStore<f32>, b: &ParamStore<f32>) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((_, p), (_, q))| {
            p.name == q.name && p.value.iter().map(|v| v.to_bits()).eq(q.value.iter().map(|v| v.to_bits()))
        })
}

#[test]
fn default_weights_and_schedules() {
    let g = TrainConfig::guide();
    assert_eq!((g.weights.sil, g.weights.lr, g.weights.lmk, g.weights.reg, g.weights.lap), (0.1, 0.1, 0.1, 0.001, 100.0));
    let s = TrainConfig::gaussian();
    assert_eq!((s.weights.vgg, s.weights.lr, s.weights.lmk, s.weights.reg), (0.1, 0.1, 0.1, 0.001));
    assert_eq!((g.steps, s.steps, g.batch), (3000, 5000, 4));
    assert_eq!((g.lr_net, g.lr_code, g.lr_mean), (1e-3, 1e-3, 5e-4));
    let f = FitSchedule::default();
    assert_eq!((f.phase1_iters, f.phase1_lr, f.phase2_iters, f.phase2_lr, f.total()), (200, 1e-3, 100, 1e-4, 300));
}

#[test]
fn dotted_overrides() {
    let c = apply_overrides(&TrainConfig::guide(), &["weights.lap=50".into(), "steps = 7".into(), "stage=gaussian".into()]).unwrap();
    assert_eq!((c.weights.lap, c.steps, c.stage), (50.0, 7, Stage::Gaussian));
    assert!(apply_override(&c, "weights.nope", "1").is_err());
    assert!(apply_override(&c, "steps", "-3").is_err());
    assert!(apply_overrides(&c, &["steps".into()]).is_err());
    assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
    let w = apply_override(&LossWeights::default(), "vgg", "0.5").unwrap();
    assert_eq!(w.vgg, 0.5);
}

#[test]
fn divergence_guard_reports_the_step() {
    let err = finish_record(17, Stage::Guide, &LossWeights::default(), vec![(Term::Hr, f64::NAN)], 0.0).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 17, .. }), "{err}");
}

#[test]
fn zero_step_guide_is_its_initialization() {
    let f = fixture();
    let cfg = tiny_guide_config(0);
    let (ckpt, report) = train_guide(&cfg, &f.data, None).unwrap();
    assert!(report.history.is_empty());
    let init = GuideTrainer::new(&cfg, &f.data).unwrap();
    assert!(same_store(&ckpt.store, &init.store));
    assert_eq!(ckpt.stage().unwrap(), STAGE_GUIDE);
}

#[test]
fn guide_training_is_deterministic_and_logs_its_terms() {
    let f = fixture();
    let cfg = TrainConfig { deterministic: true, log_every: 1, ..tiny_guide_config(3) };
    let dir = tempfile::tempdir().unwrap();
    let mut csv = MetricsCsv::create(&dir.path().join("a.csv")).unwrap();
    let (a, ra) = train_guide(&cfg, &f.data, Some(&mut csv)).unwrap();
    drop(csv);
    let (b, rb) = train_guide(&cfg, &f.data, None).unwrap();
    assert!(same_store(&a.store, &b.store));
    assert_eq!(ra, rb);
    let log = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    for t in ["hr", "sil", "lr", "lmk", "reg", "lap", "total"] {
        assert!(log.contains(&format!(",train,{t},")), "missing {t}");
    }
    assert!(!log.contains(",vgg,"));
}

#[test]
fn migration_copies_shared_entries_and_seeds_points_from_the_mean_mesh() {
    let f = fixture();
    let init = migrate(&f.guide).unwrap();
    assert_eq!(init.stage().unwrap(), STAGE_GAUSSIAN_INIT);
    let cfg = headsplat::pipeline::common::checkpoint_config(&f.guide).unwrap();
    let gm = GuideModel::bind(&f.guide.store, cfg.dims).unwrap();
    let geo = mean_geometry(&gm, &f.guide.store, &cfg.grid).unwrap();
    let x0 = init.store.value(init.store.id("mean.x0").unwrap());
    assert_eq!(x0.len(), geo.mesh.vertices.len());
    assert_eq!(x0, &geo.mesh.vertices[..]);
    assert_eq!(init.store.value(init.store.id("mean.gamma").unwrap()), &geo.mesh.features[..]);
    let mut copied = 0;
    for (_, p) in init.store.iter() {
        if let Ok(src) = f.guide.store.id(&p.name) {
            assert_eq!(f.guide.store.value(src), &p.value[..], "{}", p.name);
            copied += 1;
        }
    }
    assert!(copied > 10);
    assert!(init.store.iter().any(|(_, p)| p.name.starts_with("f_att")));
    assert!(!init.store.iter().any(|(_, p)| p.name.starts_with("f_mean")));

    let again = migrate(&f.guide).unwrap();
    assert!(same_store(&init.store, &again.store));
    assert!(migrate(&init).is_err());
}

#[test]
fn copied_networks_answer_probes_identically() {
    let f = fixture();
    let init = migrate(&f.guide).unwrap();
    let dims = headsplat::morph::ModelDims::default();
    let a = headsplat::morph::Networks::bind(&f.guide.store, dims).unwrap();
    let b = headsplat::morph::Networks::bind(&init.store, dims).unwrap();
    let gamma: Vec<f32> = (0..5 * dims.channels).map(|i| (i as f32 * 0.37).sin()).collect();
    let z: Vec<f32> = (0..dims.id_dim).map(|i| (i as f32 * 0.11).cos() * 0.1).collect();
    let (ha, _) = a.inject_identity(&f.guide.store, &gamma, &z).unwrap();
    let (hb, _) = b.inject_identity(&init.store, &gamma, &z).unwrap();
    assert_eq!(ha, hb);
}

#[test]
fn undertrained_guide_cannot_migrate() {
    let f = fixture();
    let mut bad = f.guide.clone();
    // push the SDF positive everywhere
    let (_, bias) = GuideModel::bind(&bad.store, Default::default()).unwrap().sdf.mlp.last_layer();
    bad.store.value_mut(bias)[0] = 100.0;
    assert!(matches!(migrate(&bad), Err(Error::EmptyMesh)));
}

#[test]
fn migrated_render_is_close_to_the_guide_render() {
    let f = fixture();
    let cfg = tiny_guide_config(0);
    let init = migrate(&f.guide).unwrap();
    let guide_psnr = evaluate_guide(&GuideModel::bind(&f.guide.store, cfg.dims).unwrap(), &f.guide.store, &f.data, &cfg).unwrap();
    let head = GaussianHead::from_checkpoint(&init).unwrap();
    let gauss_psnr = evaluate_gaussian(&head, &init.store, &f.data, &cfg).unwrap();
    assert!((guide_psnr - gauss_psnr).abs() <= 3.0, "guide {guide_psnr:.2} vs migrated {gauss_psnr:.2}");
}

#[test]
fn gaussian_training_keeps_its_point_count_and_term_set() {
    let f = fixture();
    let init = migrate(&f.guide).unwrap();
    let cfg = TrainConfig { log_every: 1, ..tiny_gaussian_config(3) };
    let mut t = GaussianTrainer::new(&cfg, &f.data, &init).unwrap();
    let n = t.point_count();
    for _ in 0..3 {
        let rec = t.step().unwrap();
        let want = Stage::Gaussian.terms();
        assert_eq!(rec.terms.len(), want.len());
        assert!(want.iter().all(|t| rec.terms.iter().any(|p| p.0 == *t)));
        assert_eq!(t.point_count(), n);
    }
    let (zero, _) = train_gaussian(&tiny_gaussian_config(0), &f.data, &init, None).unwrap();
    assert!(same_store(&zero.store, &init.store));
    assert!(train_gaussian(&tiny_guide_config(1), &f.data, &init, None).is_err());
    assert!(GaussianTrainer::new(&cfg, &f.data, &f.guide).is_err());
}

#[test]
fn naive_init_matches_the_requested_size() {
    let f = fixture();
    let c = naive_init(&tiny_gaussian_config(0), &f.data, 500).unwrap();
    let x0 = c.store.value(c.store.id("mean.x0").unwrap());
    assert_eq!(x0.len(), 1500);
    assert!(c.store.value(c.store.id("mean.gamma").unwrap()).iter().all(|&v| v == 0.0));
    assert_eq!(c.meta("init").unwrap(), "naive");
    let (_, rep) = train_gaussian(&tiny_gaussian_config(2), &f.data, &c, None).unwrap();
    assert_eq!(rep.history.len(), 2);
}

#[test]
fn fitting_runs_the_two_phase_schedule_without_touching_the_model() {
    let f = fixture();
    let before = f.gaussian.store.clone();
    let s = f.data.samples.iter().find(|s| s.split == Split::Holdout).unwrap();
    let sched = FitSchedule { phase1_iters: 6, phase2_iters: 4, ..FitSchedule::default() };
    let fitted = fit_image(&f.gaussian, &s.image, &s.camera, &s.pose, &sched).unwrap();
    assert!(same_store(&before, &f.gaussian.store));
    assert_eq!(fitted.history.len(), 10);
    assert!(fitted.history[..6].iter().all(|r| r.phase == 1));
    assert!(fitted.history[6..].iter().all(|r| r.phase == 2));
    assert!(fitted.history.iter().all(|r| r.loss.is_finite()));

    // phase 2 moves only f_col and the canonical overlay
    let head = GaussianHead::from_checkpoint(&f.gaussian).unwrap();
    let x_can = canonical_positions(&head, &before, &fitted.z_id, &fitted.z_exp).unwrap();
    assert_ne!(x_can, fitted.x_can);
    for (_, p) in before.iter() {
        let q = fitted.store.value(fitted.store.id(&p.name).unwrap());
        if p.name.starts_with("f_col") {
            assert_ne!(&p.value[..], q, "{}", p.name);
        } else {
            assert_eq!(&p.value[..], q, "{}", p.name);
        }
    }

    let dir = tempfile::tempdir().unwrap();
    fitted.to_checkpoint().save(dir.path()).unwrap();
    let back = FittedHead::from_checkpoint(&Checkpoint::load(dir.path()).unwrap()).unwrap();
    assert_eq!((back.z_id.clone(), back.z_exp.clone(), back.x_can.clone()), (fitted.z_id.clone(), fitted.z_exp.clone(), fitted.x_can.clone()));
    assert_eq!(back.history, fitted.history);
}

#[test]
fn editing_with_the_source_code_reproduces_the_reconstruction() {
    let f = fixture();
    let s = &f.data.samples[0];
    let sched = FitSchedule { phase1_iters: 3, phase2_iters: 2, ..FitSchedule::default() };
    let fitted = fit_image(&f.gaussian, &s.image, &s.camera, &s.pose, &sched).unwrap();
    let rec = fitted.reconstruction().unwrap();
    let same = edit_expression(&fitted, &fitted.z_exp.clone(), &s.camera, &s.pose).unwrap();
    assert_eq!(rec.hr.data, same.hr.data);

    let head = GaussianHead::from_checkpoint(&f.gaussian).unwrap();
    let other = head.codes.exp_code(&f.gaussian.store, 1).unwrap();
    let edited = edit_expression(&fitted, &other, &s.camera, &s.pose).unwrap();
    assert_eq!(rec.delta_id, edited.delta_id);
    assert!(edit_expression(&fitted, &other[..3], &s.camera, &s.pose).is_err());
}

#[test]
fn identity_offsets_ignore_the_expression_code() {
    let f = fixture();
    let head = GaussianHead::from_checkpoint(&f.gaussian).unwrap();
    let st = &f.gaussian.store;
    let s = &f.data.samples[0];
    let cam = s.camera.downscaled(2);
    let z_a = head.codes.id_code(st, 0).unwrap();
    let (e_b, e_c) = (head.codes.exp_code(st, 0).unwrap(), head.codes.exp_code(st, 1).unwrap());
    let v_b = render_gaussian_view(&head, st, &z_a, &e_b, &s.pose, &cam, None).unwrap();
    let v_c = render_gaussian_view(&head, st, &z_a, &e_c, &s.pose, &cam, None).unwrap();
    assert_eq!(v_b.delta_id, v_c.delta_id);
    assert_ne!(v_b.delta_exp, v_c.delta_exp);
    assert_ne!(v_b.feat.data, v_c.feat.data);
}

#[test]
fn code_interpolation() {
    let a = [0.0f32, 1.0, -2.0];
    let b = [1.0f32, 3.0, 2.0];
    assert_eq!(interpolate_codes(&a, &b, 0.0).unwrap(), a);
    assert_eq!(interpolate_codes(&a, &b, 1.0).unwrap(), b);
    assert_eq!(interpolate_codes(&a, &b, 0.5).unwrap(), vec![0.5, 2.0, 0.0]);
    assert!(interpolate_codes(&a, &b, 1.5).is_err());
    assert!(interpolate_codes(&a, &b[..2], 0.5).is_err());
}

#[test]
fn fitted_model_checkpoint_drops_the_overlay() {
    let f = fixture();
    let s = &f.data.samples[1];
    let sched = FitSchedule { phase1_iters: 2, phase2_iters: 2, ..FitSchedule::default() };
    let fitted = fit_image(&f.gaussian, &s.image, &s.camera, &s.pose, &sched).unwrap();
    let base = fitted.model_checkpoint().unwrap();
    assert_eq!(base.stage().unwrap(), STAGE_GAUSSIAN);
    assert!(!base.store.iter().any(|(_, p)| p.name.starts_with("fit.")));
    assert_eq!(base.store.len() + 3, fitted.store.len());
    let target = fit_image(&base, &s.image, &s.camera, &s.pose, &FitSchedule { phase1_iters: 2, phase2_iters: 0, ..sched }).unwrap();
    assert_eq!(target.history.len(), 2);
}
