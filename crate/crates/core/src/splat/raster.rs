//! Tile-based front-to-back compositing and its reverse pass.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::splat::camera::Camera;
use crate::splat::project::{project_backward_with, project_with, CameraT, ProjectedGrad, Projected};
use crate::splat::set::{SplatGrads, SplatSet};

pub const TILE: usize = 16;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Footprints are truncated at this squared Mahalanobis radius (3σ).
pub const CUTOFF_Q: f64 = 9.0;

/// Channel-last feature image with its accumulated-opacity map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureImage<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
    pub alpha: Vec<T>,
}

impl<T: Real> FeatureImage<T> {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        FeatureImage {
            width,
            height,
            channels,
            data: vec![T::zero(); width * height * channels],
            alpha: vec![T::zero(); width * height],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    /// First `n` channels as a packed `height x width x n` buffer.
    pub fn leading_channels(&self, n: usize) -> Vec<T> {
        self.data
            .chunks_exact(self.channels)
            .flat_map(|px| px[..n].iter().copied())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &FeatureImage<T>) -> f64 {
        let d = self
            .data
            .iter()
            .zip(&other.data)
            .chain(self.alpha.iter().zip(&other.alpha))
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max);
        if self.data.len() != other.data.len() {
            f64::INFINITY
        } else {
            d
        }
    }
}

/// Footprint weight before opacity and its derivative in `q`: a Gaussian
/// `exp(-q/2)` minus its second-order Taylor polynomial at the cutoff,
/// renormalized to 1 at the center. It is exactly zero at and beyond `q = 9`
/// and twice continuously differentiable there, so tile culling is exact and
/// finite differences see no kink at the footprint border.
#[inline(always)]
pub fn footprint<T: Real>(q: T) -> (T, T) {
    let cut = T::lit(CUTOFF_Q);
    if q >= cut {
        return (T::zero(), T::zero());
    }
    let half = T::lit(0.5);
    let e_cut = T::lit((-0.5 * CUTOFF_Q).exp());
    let norm = T::lit(1.0 / (1.0 - (-0.5 * CUTOFF_Q).exp() * (1.0 + 0.5 * CUTOFF_Q + 0.125 * CUTOFF_Q * CUTOFF_Q)));
    let e = (-half * q).exp();
    let d = q - cut;
    let value = (e - e_cut * (T::one() - half * d + T::lit(0.125) * d * d)) * norm;
    let slope = (-half * e - e_cut * (-half + T::lit(0.25) * d)) * norm;
    (value, slope)
}

#[inline(always)]
fn quad_form<T: Real>(conic: &[T; 3], dx: T, dy: T) -> T {
    conic[0] * dx * dx + T::lit(2.0) * conic[1] * dx * dy + conic[2] * dy * dy
}

#[derive(Clone, Copy, Debug)]
pub struct RasterOptions {
    /// Skip splats whose 3σ box misses a tile. Disabling it only costs time.
    pub culling: bool,
    /// Render tiles on the rayon pool; output is identical either way.
    pub parallel: bool,
}

impl Default for RasterOptions {
    fn default() -> Self {
        RasterOptions {
            culling: true,
            parallel: false,
        }
    }
}

/// Everything the reverse pass needs; immutable once built.
pub struct RasterTape<T> {
    camera: Camera,
    projected: Vec<Projected<T>>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    /// Number of tile-list entries visited per pixel.
    visited: Vec<u32>,
    fingerprint: u64,
    len: usize,
}

impl<T: Real> RasterTape<T> {
    pub fn projected(&self) -> &[Projected<T>] {
        &self.projected
    }
}

/// Sort key: camera depth, ties broken by splat index.
pub(crate) fn depth_order<T: Real>(projected: &[Projected<T>], ids: &mut [u32]) {
    ids.sort_by(|&a, &b| {
        let (da, db) = (projected[a as usize].depth, projected[b as usize].depth);
        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
}

fn tile_lists<T: Real>(projected: &[Projected<T>], width: usize, height: usize, culling: bool) -> (Vec<Vec<u32>>, usize) {
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, p) in projected.iter().enumerate() {
        if !p.valid {
            continue;
        }
        let (tx0, tx1, ty0, ty1) = if culling {
            // One pixel of slack around the exact 3σ box.
            let (u, v) = (p.mean[0].to_f64_lossy(), p.mean[1].to_f64_lossy());
            let (ex, ey) = (p.extent[0].to_f64_lossy() + 1.0, p.extent[1].to_f64_lossy() + 1.0);
            let x0 = (u - ex - 0.5).floor();
            let x1 = (u + ex - 0.5).ceil();
            let y0 = (v - ey - 0.5).floor();
            let y1 = (v + ey - 0.5).ceil();
            if x1 < 0.0 || y1 < 0.0 || x0 > (width - 1) as f64 || y0 > (height - 1) as f64 || !(x0.is_finite() && y0.is_finite()) {
                continue;
            }
            let clamp_x = |x: f64| (x.max(0.0) as usize).min(width - 1) / TILE;
            let clamp_y = |y: f64| (y.max(0.0) as usize).min(height - 1) / TILE;
            (clamp_x(x0), clamp_x(x1), clamp_y(y0), clamp_y(y1))
        } else {
            (0, tiles_x - 1, 0, tiles_y - 1)
        };
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    for list in &mut tiles {
        depth_order(projected, list);
    }
    (tiles, tiles_x)
}

struct TileOutput<T> {
    data: Vec<T>,
    alpha: Vec<T>,
    visited: Vec<u32>,
}

fn render_tile<T: Real>(
    splats: &SplatSet<T>,
    projected: &[Projected<T>],
    list: &[u32],
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
) -> TileOutput<T> {
    let ch = splats.channels;
    let (w, h) = ((x0 + TILE).min(width) - x0, (y0 + TILE).min(height) - y0);
    let mut out = TileOutput {
        data: vec![T::zero(); w * h * ch],
        alpha: vec![T::zero(); w * h],
        visited: vec![0; w * h],
    };
    let t_min = T::lit(MIN_TRANSMITTANCE);
    let half = T::lit(0.5);
    for ly in 0..h {
        for lx in 0..w {
            let px = T::lit((x0 + lx) as f64) + half;
            let py = T::lit((y0 + ly) as f64) + half;
            let o = ly * w + lx;
            let acc = &mut out.data[o * ch..(o + 1) * ch];
            let mut trans = T::one();
            let mut visited = 0u32;
            for &sid in list {
                visited += 1;
                let p = &projected[sid as usize];
                let (dx, dy) = (px - p.mean[0], py - p.mean[1]);
                let (g, _) = footprint(quad_form(&p.conic, dx, dy));
                if g == T::zero() {
                    continue;
                }
                let a = p.opacity * g;
                let wgt = a * trans;
                let color = &splats.color[sid as usize * ch..(sid as usize + 1) * ch];
                for (o, &c) in acc.iter_mut().zip(color) {
                    *o += c * wgt;
                }
                trans *= T::one() - a;
                if trans < t_min {
                    break;
                }
            }
            out.alpha[o] = T::one() - trans;
            out.visited[o] = visited;
        }
    }
    out
}

pub fn rasterize<T: Real>(splats: &SplatSet<T>, camera: &Camera) -> Result<(FeatureImage<T>, RasterTape<T>)> {
    rasterize_with(splats, camera, RasterOptions::default())
}

pub fn rasterize_with<T: Real>(
    splats: &SplatSet<T>,
    camera: &Camera,
    opts: RasterOptions,
) -> Result<(FeatureImage<T>, RasterTape<T>)> {
    camera.validate()?;
    splats.validate()?;
    let cam = CameraT::new(camera);
    let projected: Vec<Projected<T>> = (0..splats.len()).map(|i| project_with(splats, i, &cam)).collect();
    let (width, height) = (camera.width, camera.height);
    let (tiles, tiles_x) = tile_lists(&projected, width, height, opts.culling);
    let render = |t: usize| {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        render_tile(splats, &projected, &tiles[t], tx * TILE, ty * TILE, width, height)
    };
    let outputs: Vec<TileOutput<T>> = if opts.parallel {
        (0..tiles.len()).into_par_iter().map(render).collect()
    } else {
        (0..tiles.len()).map(render).collect()
    };
    let ch = splats.channels;
    let mut image = FeatureImage::zeros(width, height, ch);
    let mut visited = vec![0u32; width * height];
    for (t, out) in outputs.iter().enumerate() {
        let (x0, y0) = ((t % tiles_x) * TILE, (t / tiles_x) * TILE);
        let w = (x0 + TILE).min(width) - x0;
        for (k, &a) in out.alpha.iter().enumerate() {
            let (lx, ly) = (k % w, k / w);
            let gi = (y0 + ly) * width + x0 + lx;
            image.alpha[gi] = a;
            visited[gi] = out.visited[k];
            image.data[gi * ch..(gi + 1) * ch].copy_from_slice(&out.data[k * ch..(k + 1) * ch]);
        }
    }
    let tape = RasterTape {
        camera: camera.clone(),
        projected,
        tiles,
        tiles_x,
        visited,
        fingerprint: splats.fingerprint(),
        len: splats.len(),
    };
    Ok((image, tape))
}

struct Hit<T> {
    sid: u32,
    alpha: T,
    trans: T,
    dx: T,
    dy: T,
    weight: T,
    slope: T,
}

/// Reverse pass. `d_image` is `height x width x channels`; `d_alpha`, when
/// given, is the gradient on the opacity map. Returns gradients for every
/// splat field.
pub fn rasterize_backward<T: Real>(
    splats: &SplatSet<T>,
    tape: &RasterTape<T>,
    d_image: &[T],
    d_alpha: Option<&[T]>,
) -> Result<SplatGrads<T>> {
    if splats.len() != tape.len || splats.fingerprint() != tape.fingerprint {
        return Err(Error::StaleTape("splat set".into()));
    }
    let (width, height, ch) = (tape.camera.width, tape.camera.height, splats.channels);
    if d_image.len() != width * height * ch {
        return Err(Error::shape("image gradient", width * height * ch, d_image.len()));
    }
    if let Some(da) = d_alpha {
        if da.len() != width * height {
            return Err(Error::shape("alpha gradient", width * height, da.len()));
        }
    }
    let n = splats.len();
    let mut screen: Vec<ProjectedGrad<T>> = vec![ProjectedGrad::default(); n];
    let mut grads = SplatGrads::zeros(n, ch);
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut hits: Vec<Hit<T>> = Vec::new();
    let mut suffix = vec![T::zero(); ch];

    for row in 0..height {
        for col in 0..width {
            let pix = row * width + col;
            let g_out = &d_image[pix * ch..(pix + 1) * ch];
            let g_alpha = d_alpha.map_or(T::zero(), |d| d[pix]);
            if g_alpha == T::zero() && g_out.iter().all(|&g| g == T::zero()) {
                continue;
            }
            let tile = (row / TILE) * tape.tiles_x + col / TILE;
            let list = &tape.tiles[tile][..tape.visited[pix] as usize];
            let px = T::lit(col as f64) + half;
            let py = T::lit(row as f64) + half;
            hits.clear();
            let mut trans = T::one();
            for &sid in list {
                let p = &tape.projected[sid as usize];
                let (dx, dy) = (px - p.mean[0], py - p.mean[1]);
                let (g, slope) = footprint(quad_form(&p.conic, dx, dy));
                if g == T::zero() {
                    continue;
                }
                let a = p.opacity * g;
                hits.push(Hit {
                    sid,
                    alpha: a,
                    trans,
                    dx,
                    dy,
                    weight: g,
                    slope,
                });
                trans *= T::one() - a;
            }
            // Back to front: suffix = Σ_{j>i} c_j α_j Π_{i<k<j} (1 - α_k)
            suffix.iter_mut().for_each(|s| *s = T::zero());
            let mut suffix_alpha = T::zero();
            for hit in hits.iter().rev() {
                let sid = hit.sid as usize;
                let color = &splats.color[sid * ch..(sid + 1) * ch];
                let w = hit.alpha * hit.trans;
                let mut d_a = T::zero();
                for c in 0..ch {
                    grads.color[sid * ch + c] += g_out[c] * w;
                    d_a += g_out[c] * (color[c] - suffix[c]);
                    suffix[c] = color[c] * hit.alpha + (T::one() - hit.alpha) * suffix[c];
                }
                d_a += g_alpha * (T::one() - suffix_alpha);
                suffix_alpha = hit.alpha + (T::one() - hit.alpha) * suffix_alpha;
                let d_a = d_a * hit.trans;

                let p = &tape.projected[sid];
                let sg = &mut screen[sid];
                sg.opacity += d_a * hit.weight;
                let d_q = d_a * p.opacity * hit.slope;
                let (dx, dy) = (hit.dx, hit.dy);
                sg.conic[0] += d_q * dx * dx;
                sg.conic[1] += d_q * two * dx * dy;
                sg.conic[2] += d_q * dy * dy;
                sg.mean[0] -= d_q * two * (p.conic[0] * dx + p.conic[1] * dy);
                sg.mean[1] -= d_q * two * (p.conic[1] * dx + p.conic[2] * dy);
            }
        }
    }
    let cam = CameraT::new(&tape.camera);
    for (i, sg) in screen.iter().enumerate() {
        if tape.projected[i].valid {
            project_backward_with(splats, i, &cam, sg, &mut grads);
        }
    }
    Ok(grads)
}
