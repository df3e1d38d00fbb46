#![allow(dead_code)]

use headsplat::diff::{finite_diff_check, finite_diff_check_mixed, GradCheck, GradCheckReport, ParamStore};
use headsplat::splat::{rasterize, rasterize_backward, Camera, SplatSet};
use headsplat::{Real, Result};

/// Loads a splat set into a store so the generic checker can perturb it.
pub fn splat_store<T: Real>(s: &SplatSet<T>) -> ParamStore<T> {
    let mut store = ParamStore::new();
    let n = s.len();
    store.insert("pos", &[n, 3], s.pos.clone()).unwrap();
    store.insert("color", &[n, s.channels], s.color.clone()).unwrap();
    store.insert("log_scale", &[n, 3], s.log_scale.clone()).unwrap();
    store.insert("rot", &[n, 4], s.rot.clone()).unwrap();
    store.insert("opacity", &[n], s.opacity.clone()).unwrap();
    store
}

pub fn splats_from_store<T: Real>(store: &ParamStore<T>, channels: usize) -> SplatSet<T> {
    let get = |name: &str| store.value(store.id(name).unwrap()).to_vec();
    SplatSet {
        channels,
        pos: get("pos"),
        color: get("color"),
        log_scale: get("log_scale"),
        rot: get("rot"),
        opacity: get("opacity"),
    }
}

fn render_loss<T: Real>(
    s: &mut ParamStore<T>,
    channels: usize,
    camera: &Camera,
    weights: &[T],
    alpha_weights: &[T],
) -> Result<T> {
    let splats = splats_from_store(s, channels);
    let (img, _) = rasterize(&splats, camera)?;
    Ok(img.data.iter().zip(weights).map(|(&a, &w)| a * w).sum::<T>()
        + img.alpha.iter().zip(alpha_weights).map(|(&a, &w)| a * w).sum::<T>())
}

/// `f32` analytic gradients against `f64` central differences.
pub fn check_render_gradients_f32(
    scene: &SplatSet<f32>,
    camera: &Camera,
    weights: &[f64],
    alpha_weights: &[f64],
    cfg: &GradCheck,
) -> Result<GradCheckReport> {
    let mut store = splat_store(scene);
    let channels = scene.channels;
    let w32: Vec<f32> = weights.iter().map(|&v| v as f32).collect();
    let wa32: Vec<f32> = alpha_weights.iter().map(|&v| v as f32).collect();
    finite_diff_check_mixed(
        &mut store,
        cfg,
        |s| render_loss_and_grad(s, channels, camera, &w32, &wa32),
        |s: &mut ParamStore<f64>| render_loss(s, channels, camera, weights, alpha_weights),
    )
}

/// Finite-difference check of a weighted sum of the rendered image and alpha map.
pub fn check_render_gradients<T: Real>(
    scene: &SplatSet<T>,
    camera: &Camera,
    weights: &[T],
    alpha_weights: &[T],
    cfg: &GradCheck,
) -> Result<GradCheckReport> {
    let mut store = splat_store(scene);
    let channels = scene.channels;
    finite_diff_check(&mut store, cfg, |s| render_loss_and_grad(s, channels, camera, weights, alpha_weights))
}

fn render_loss_and_grad<T: Real>(
    s: &mut ParamStore<T>,
    channels: usize,
    camera: &Camera,
    weights: &[T],
    alpha_weights: &[T],
) -> Result<T> {
    {
        let splats = splats_from_store(s, channels);
        let (img, tape) = rasterize(&splats, camera)?;
        let loss = img.data.iter().zip(weights).map(|(&a, &w)| a * w).sum::<T>()
            + img.alpha.iter().zip(alpha_weights).map(|(&a, &w)| a * w).sum::<T>();
        let g = rasterize_backward(&splats, &tape, weights, Some(alpha_weights))?;
        for (name, grad) in [
            ("pos", &g.pos),
            ("color", &g.color),
            ("log_scale", &g.log_scale),
            ("rot", &g.rot),
            ("opacity", &g.opacity),
        ] {
            let id = s.id(name)?;
            for (a, b) in s.grad_mut(id).iter_mut().zip(grad) {
                *a += *b;
            }
        }
        Ok(loss)
    }
}
