use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::nets::{AttributeMeans, AttributeNet, AttributeTape, DeformTape, ModelDims, Networks};
use super::pose::{to_world, to_world_backward, transform_points, transform_points_backward, HeadPose};
use super::upsample::Upsampler;
use crate::diff::{MlpTape, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::splat::{SplatGrads, SplatSet};

pub const CODE_INIT_STD: f64 = 0.01;

/// Per-identity and per-expression latent codes, one row each.
#[derive(Clone, Copy, Debug)]
pub struct CodeBank {
    pub id: ParamId,
    pub exp: ParamId,
    pub n_id: usize,
    pub n_exp: usize,
    pub dims: ModelDims,
}

impl CodeBank {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        dims: ModelDims,
        n_id: usize,
        n_exp: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let id = store.insert("codes.id", &[n_id, dims.id_dim], gaussian_init(n_id * dims.id_dim, rng))?;
        let exp = store.insert("codes.exp", &[n_exp, dims.exp_dim], gaussian_init(n_exp * dims.exp_dim, rng))?;
        Ok(CodeBank { id, exp, n_id, n_exp, dims })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, dims: ModelDims) -> Result<Self> {
        let id = store.id("codes.id")?;
        let exp = store.id("codes.exp")?;
        let (si, se) = (store.shape(id).to_vec(), store.shape(exp).to_vec());
        if si.len() != 2 || si[1] != dims.id_dim {
            return Err(Error::shape("codes.id", format!("[n, {}]", dims.id_dim), format!("{si:?}")));
        }
        if se.len() != 2 || se[1] != dims.exp_dim {
            return Err(Error::shape("codes.exp", format!("[n, {}]", dims.exp_dim), format!("{se:?}")));
        }
        Ok(CodeBank {
            id,
            exp,
            n_id: si[0],
            n_exp: se[0],
            dims,
        })
    }

    pub fn id_code<T: Real>(&self, store: &ParamStore<T>, i: usize) -> Result<Vec<T>> {
        row(store, self.id, i, self.n_id, self.dims.id_dim, "identity")
    }

    pub fn exp_code<T: Real>(&self, store: &ParamStore<T>, i: usize) -> Result<Vec<T>> {
        row(store, self.exp, i, self.n_exp, self.dims.exp_dim, "expression")
    }

    pub fn accumulate<T: Real>(&self, store: &mut ParamStore<T>, id_row: usize, d_id: &[T], exp_row: usize, d_exp: &[T]) -> Result<()> {
        store.accumulate_at(self.id, id_row * self.dims.id_dim, d_id)?;
        store.accumulate_at(self.exp, exp_row * self.dims.exp_dim, d_exp)
    }
}

fn row<T: Real>(store: &ParamStore<T>, id: ParamId, i: usize, n: usize, w: usize, what: &str) -> Result<Vec<T>> {
    if i >= n {
        return Err(Error::Invalid(format!("{what} code index {i} out of range ({n} codes)")));
    }
    Ok(store.value(id)[i * w..(i + 1) * w].to_vec())
}

pub fn gaussian_init<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    let normal = Normal::new(0.0, CODE_INIT_STD).expect("valid std");
    (0..n).map(|_| T::lit(normal.sample(rng))).collect()
}

/// Output of the shared point path: inject, deform, color, pose.
pub struct MorphedPoints<T> {
    pub x_world: Vec<T>,
    pub x_can: Vec<T>,
    pub color: Vec<T>,
    pub h: Vec<T>,
    pub delta_id: Vec<T>,
    pub delta_exp: Vec<T>,
}

pub struct MorphTape<T> {
    inj: MlpTape<T>,
    deform: DeformTape<T>,
    col: Option<MlpTape<T>>,
    pose: HeadPose,
}

/// Gradients flowing into the shared point path.
pub struct MorphGrads<'a, T> {
    pub d_x_world: &'a [T],
    pub d_color: Option<&'a [T]>,
    pub d_delta_id: Option<&'a [T]>,
    pub d_delta_exp: Option<&'a [T]>,
    pub d_h: Option<&'a [T]>,
}

pub struct MorphInputGrads<T> {
    pub d_x0: Vec<T>,
    pub d_gamma: Vec<T>,
    pub d_z_id: Vec<T>,
    pub d_z_exp: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
pub fn morph_points<T: Real>(
    nets: &Networks,
    store: &ParamStore<T>,
    x0: &[T],
    gamma: &[T],
    z_id: &[T],
    z_exp: &[T],
    pose: &HeadPose,
    with_color: bool,
) -> Result<(MorphedPoints<T>, MorphTape<T>)> {
    let (h, inj) = nets.inject_identity(store, gamma, z_id)?;
    let (def, deform) = nets.deform_canonical(store, x0, &h, z_exp)?;
    let (color, col) = if with_color {
        let (c, t) = nets.compute_color(store, &h, z_exp)?;
        (c, Some(t))
    } else {
        (Vec::new(), None)
    };
    let x_world = transform_points(pose, &def.x_can);
    Ok((
        MorphedPoints {
            x_world,
            x_can: def.x_can,
            color,
            h,
            delta_id: def.delta_id,
            delta_exp: def.delta_exp,
        },
        MorphTape {
            inj,
            deform,
            col,
            pose: *pose,
        },
    ))
}

pub fn morph_points_backward<T: Real>(
    nets: &Networks,
    store: &mut ParamStore<T>,
    tape: &MorphTape<T>,
    g: &MorphGrads<'_, T>,
) -> Result<MorphInputGrads<T>> {
    let d_x_can = transform_points_backward(&tape.pose, g.d_x_world);
    let add = |extra: Option<&[T]>| -> Vec<T> {
        match extra {
            Some(e) => d_x_can.iter().zip(e).map(|(&a, &b)| a + b).collect(),
            None => d_x_can.clone(),
        }
    };
    let (d_did, d_dexp) = (add(g.d_delta_id), add(g.d_delta_exp));
    let (mut d_h, mut d_z_exp) = nets.deform_canonical_backward(store, &tape.deform, &d_did, &d_dexp)?;
    if let (Some(col), Some(dc)) = (&tape.col, g.d_color) {
        let (dh_c, dz_c) = nets.compute_color_backward(store, col, dc)?;
        d_h.iter_mut().zip(&dh_c).for_each(|(a, &b)| *a += b);
        d_z_exp.iter_mut().zip(&dz_c).for_each(|(a, &b)| *a += b);
    }
    if let Some(extra) = g.d_h {
        d_h.iter_mut().zip(extra).for_each(|(a, &b)| *a += b);
    }
    let (d_gamma, d_z_id) = nets.inject_identity_backward(store, &tape.inj, &d_h)?;
    Ok(MorphInputGrads {
        d_x0: d_x_can,
        d_gamma,
        d_z_id,
        d_z_exp,
    })
}

/// Canonical landmarks `P0` with their own learnable features.
#[derive(Clone, Copy, Debug)]
pub struct Landmarks {
    pub p0: ParamId,
    pub gamma: ParamId,
    pub count: usize,
}

impl Landmarks {
    pub fn register<T: Real>(store: &mut ParamStore<T>, p0: &[T], channels: usize) -> Result<Self> {
        let k = p0.len() / 3;
        if p0.len() != k * 3 {
            return Err(Error::shape("canonical landmarks", k * 3, p0.len()));
        }
        Ok(Landmarks {
            p0: store.insert("landmarks.p0", &[k, 3], p0.to_vec())?,
            gamma: store.insert_zeros("landmarks.gamma", &[k, channels])?,
            count: k,
        })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>) -> Result<Self> {
        let p0 = store.id("landmarks.p0")?;
        Ok(Landmarks {
            p0,
            gamma: store.id("landmarks.gamma")?,
            count: store.shape(p0)[0],
        })
    }

    /// World landmarks `pose(P0 + f_id(H_P) + f_exp(H_P, z_exp))`.
    pub fn transform<T: Real>(
        &self,
        nets: &Networks,
        store: &ParamStore<T>,
        z_id: &[T],
        z_exp: &[T],
        pose: &HeadPose,
    ) -> Result<(Vec<T>, MorphTape<T>)> {
        let (out, tape) = morph_points(nets, store, store.value(self.p0), store.value(self.gamma), z_id, z_exp, pose, false)?;
        Ok((out.x_world, tape))
    }

    /// Accumulates into `P0` and `Gamma_P`; returns `(d_z_id, d_z_exp)`.
    pub fn transform_backward<T: Real>(
        &self,
        nets: &Networks,
        store: &mut ParamStore<T>,
        tape: &MorphTape<T>,
        d_p: &[T],
    ) -> Result<(Vec<T>, Vec<T>)> {
        let g = morph_points_backward(
            nets,
            store,
            tape,
            &MorphGrads {
                d_x_world: d_p,
                d_color: None,
                d_delta_id: None,
                d_delta_exp: None,
                d_h: None,
            },
        )?;
        store.accumulate(self.p0, &g.d_x0)?;
        store.accumulate(self.gamma, &g.d_gamma)?;
        Ok((g.d_z_id, g.d_z_exp))
    }
}

/// The per-point mean model of the Gaussian stage.
#[derive(Clone, Copy, Debug)]
pub struct MeanGaussians {
    pub x0: ParamId,
    pub gamma: ParamId,
    pub s0: ParamId,
    pub q0: ParamId,
    pub a0: ParamId,
    pub count: usize,
}

impl MeanGaussians {
    /// `S0` is the log of the mean nearest-neighbour distance, `Q0` identity,
    /// `A0` zero (opacity one half).
    pub fn register<T: Real>(store: &mut ParamStore<T>, x0: &[T], gamma: &[T], channels: usize) -> Result<Self> {
        let n = x0.len() / 3;
        if x0.len() != n * 3 || gamma.len() != n * channels {
            return Err(Error::shape("mean gaussian features", n * channels, gamma.len()));
        }
        if n == 0 {
            return Err(Error::EmptyMesh);
        }
        let s = mean_nn_distance(x0).max(1e-4).ln();
        Ok(MeanGaussians {
            x0: store.insert("mean.x0", &[n, 3], x0.to_vec())?,
            gamma: store.insert("mean.gamma", &[n, channels], gamma.to_vec())?,
            s0: store.insert("mean.s0", &[3], vec![T::lit(s); 3])?,
            q0: store.insert("mean.q0", &[4], vec![T::one(), T::zero(), T::zero(), T::zero()])?,
            a0: store.insert_zeros("mean.a0", &[1])?,
            count: n,
        })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>) -> Result<Self> {
        let x0 = store.id("mean.x0")?;
        Ok(MeanGaussians {
            x0,
            gamma: store.id("mean.gamma")?,
            s0: store.id("mean.s0")?,
            q0: store.id("mean.q0")?,
            a0: store.id("mean.a0")?,
            count: store.shape(x0)[0],
        })
    }

    pub fn means<T: Real>(&self, store: &ParamStore<T>) -> AttributeMeans<T> {
        let (s, q, a) = (store.value(self.s0), store.value(self.q0), store.value(self.a0));
        AttributeMeans {
            log_scale: [s[0], s[1], s[2]],
            rot: [q[0], q[1], q[2], q[3]],
            opacity: a[0],
        }
    }
}

/// Mean distance from each point to its nearest other point (grid hashed).
pub fn mean_nn_distance<T: Real>(x: &[T]) -> f64 {
    let pts: Vec<[f64; 3]> = x.chunks_exact(3).map(|p| [0, 1, 2].map(|i| p[i].to_f64_lossy())).collect();
    let n = pts.len();
    if n < 2 {
        return 0.0;
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for p in &pts {
        for i in 0..3 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let extent = (0..3).map(|i| hi[i] - lo[i]).fold(0.0f64, f64::max).max(1e-9);
    let cell = extent / (n as f64).cbrt().max(1.0);
    let key = |p: &[f64; 3]| [0, 1, 2].map(|i| ((p[i] - lo[i]) / cell).floor() as i64);
    let mut grid: std::collections::HashMap<[i64; 3], Vec<usize>> = std::collections::HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let mut total = 0.0;
    for (i, p) in pts.iter().enumerate() {
        let k = key(p);
        let mut best = f64::INFINITY;
        let mut ring = 1i64;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if let Some(ids) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            for &j in ids {
                                if j != i {
                                    let d = (0..3).map(|a| (pts[j][a] - p[a]).powi(2)).sum::<f64>();
                                    best = best.min(d);
                                }
                            }
                        }
                    }
                }
            }
            // any point outside the searched cube is at least ring * cell away
            if best.sqrt() <= ring as f64 * cell || ring > 64 {
                break;
            }
            ring += 1;
        }
        total += best.sqrt();
    }
    total / n as f64
}

/// Everything the Gaussian stage learns, bound to one parameter store.
#[derive(Clone, Debug)]
pub struct GaussianModel {
    pub dims: ModelDims,
    pub nets: Networks,
    pub att: AttributeNet,
    pub psi: Upsampler,
    pub mean: MeanGaussians,
    pub landmarks: Landmarks,
}

pub struct GaussianFrame<T> {
    pub splats: SplatSet<T>,
    pub delta_id: Vec<T>,
    pub delta_exp: Vec<T>,
    pub landmarks: Vec<T>,
}

pub struct GaussianTape<T> {
    points: MorphTape<T>,
    att: AttributeTape<T>,
    q_can: Vec<T>,
    landmarks: MorphTape<T>,
    pose: HeadPose,
}

pub struct FrameGrads<'a, T> {
    pub splats: &'a SplatGrads<T>,
    pub d_delta_id: Option<&'a [T]>,
    pub d_delta_exp: Option<&'a [T]>,
    pub d_landmarks: Option<&'a [T]>,
}

impl GaussianModel {
    /// Fresh model around the given mean points, features and landmarks.
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        dims: ModelDims,
        x0: &[T],
        gamma: &[T],
        p0: &[T],
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GaussianModel {
            dims,
            nets: Networks::register(store, dims, rng)?,
            att: AttributeNet::register(store, dims, rng)?,
            psi: Upsampler::register(store, dims.channels)?,
            mean: MeanGaussians::register(store, x0, gamma, dims.channels)?,
            landmarks: Landmarks::register(store, p0, dims.channels)?,
        })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, dims: ModelDims) -> Result<Self> {
        Ok(GaussianModel {
            dims,
            nets: Networks::bind(store, dims)?,
            att: AttributeNet::bind(store, dims)?,
            psi: Upsampler::bind(store, dims.channels)?,
            mean: MeanGaussians::bind(store)?,
            landmarks: Landmarks::bind(store)?,
        })
    }

    /// Gaussians and landmarks in world space for one code pair and pose.
    pub fn frame<T: Real>(
        &self,
        store: &ParamStore<T>,
        z_id: &[T],
        z_exp: &[T],
        pose: &HeadPose,
    ) -> Result<(GaussianFrame<T>, GaussianTape<T>)> {
        let m = &self.mean;
        let (pts, points) = morph_points(
            &self.nets,
            store,
            store.value(m.x0),
            store.value(m.gamma),
            z_id,
            z_exp,
            pose,
            true,
        )?;
        let (attrs, att) = self.att.compute_attributes(store, &pts.h, z_exp, &m.means(store))?;
        let (_, rot) = to_world(pose, &[], &attrs.rot);
        let (landmarks, lm_tape) = self.landmarks.transform(&self.nets, store, z_id, z_exp, pose)?;
        let splats = SplatSet {
            channels: self.dims.channels,
            pos: pts.x_world,
            color: pts.color,
            log_scale: attrs.log_scale,
            rot,
            opacity: attrs.opacity,
        };
        if let Err(e) = splats.validate() {
            return Err(Error::NonFinite(format!("gaussian frame: {e}")));
        }
        Ok((
            GaussianFrame {
                splats,
                delta_id: pts.delta_id,
                delta_exp: pts.delta_exp,
                landmarks,
            },
            GaussianTape {
                points,
                att,
                q_can: attrs.rot,
                landmarks: lm_tape,
                pose: *pose,
            },
        ))
    }

    /// Accumulates every parameter gradient; returns `(d_z_id, d_z_exp)`.
    pub fn frame_backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        tape: &GaussianTape<T>,
        g: &FrameGrads<'_, T>,
    ) -> Result<(Vec<T>, Vec<T>)> {
        let (_, d_q_can) = to_world_backward(&tape.pose, &[], &g.splats.rot);
        debug_assert_eq!(d_q_can.len(), tape.q_can.len());
        let (d_h_att, dz_att, d_means) =
            self.att
                .compute_attributes_backward(store, &tape.att, &g.splats.log_scale, &d_q_can, &g.splats.opacity)?;
        store.accumulate(self.mean.s0, &d_means.log_scale)?;
        store.accumulate(self.mean.q0, &d_means.rot)?;
        store.accumulate(self.mean.a0, &[d_means.opacity])?;
        let pg = morph_points_backward(
            &self.nets,
            store,
            &tape.points,
            &MorphGrads {
                d_x_world: &g.splats.pos,
                d_color: Some(&g.splats.color),
                d_delta_id: g.d_delta_id,
                d_delta_exp: g.d_delta_exp,
                d_h: Some(&d_h_att),
            },
        )?;
        store.accumulate(self.mean.x0, &pg.d_x0)?;
        store.accumulate(self.mean.gamma, &pg.d_gamma)?;
        let mut d_z_id = pg.d_z_id;
        let mut d_z_exp = pg.d_z_exp;
        d_z_exp.iter_mut().zip(&dz_att).for_each(|(a, &b)| *a += b);
        if let Some(dp) = g.d_landmarks {
            let (a, b) = self.landmarks.transform_backward(&self.nets, store, &tape.landmarks, dp)?;
            d_z_id.iter_mut().zip(&a).for_each(|(x, &y)| *x += y);
            d_z_exp.iter_mut().zip(&b).for_each(|(x, &y)| *x += y);
        }
        Ok((d_z_id, d_z_exp))
    }
}
