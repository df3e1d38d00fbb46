//! Brute-force reference renderer: every pixel visits every splat in one
//! global depth order, with no tiles and no culling.

use crate::error::Result;
use crate::real::Real;
use crate::splat::camera::Camera;
use crate::splat::project::project_splats;
use crate::splat::raster::{depth_order, footprint, FeatureImage, MIN_TRANSMITTANCE};
use crate::splat::set::SplatSet;

pub fn oracle_rasterize<T: Real>(splats: &SplatSet<T>, camera: &Camera) -> Result<FeatureImage<T>> {
    camera.validate()?;
    splats.validate()?;
    let projected = project_splats(splats, camera);
    let mut order: Vec<u32> = (0..splats.len() as u32).filter(|&i| projected[i as usize].valid).collect();
    depth_order(&projected, &mut order);

    let ch = splats.channels;
    let mut image = FeatureImage::zeros(camera.width, camera.height, ch);
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let (px, py) = (T::lit(col as f64) + half, T::lit(row as f64) + half);
            let pix = row * camera.width + col;
            let mut trans = T::one();
            for &sid in &order {
                let p = &projected[sid as usize];
                let (dx, dy) = (px - p.mean[0], py - p.mean[1]);
                let q = p.conic[0] * dx * dx + two * p.conic[1] * dx * dy + p.conic[2] * dy * dy;
                let (g, _) = footprint(q);
                if g == T::zero() {
                    continue;
                }
                let a = p.opacity * g;
                let w = a * trans;
                for c in 0..ch {
                    image.data[pix * ch + c] += splats.color[sid as usize * ch + c] * w;
                }
                trans *= T::one() - a;
                if trans < T::lit(MIN_TRANSMITTANCE) {
                    break;
                }
            }
            image.alpha[pix] = T::one() - trans;
        }
    }
    Ok(image)
}
