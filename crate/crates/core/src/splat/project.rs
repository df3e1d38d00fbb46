use crate::linalg::{cast_mat, quat_normalize, quat_normalize_backward, quat_to_mat, quat_to_mat_backward, Mat3};
use crate::real::{sigmoid, Real};
use crate::splat::camera::Camera;
use crate::splat::set::{SplatGrads, SplatSet};

/// Splats closer than this (camera-space z) are not rendered.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to the diagonal of every screen covariance, in px².
pub const COV_FLOOR: f64 = 0.3;

/// Screen-space footprint of one splat.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Projected<T> {
    pub mean: [T; 2],
    /// Screen covariance `(a, b, c)` = `[[a, b], [b, c]]`, floor included.
    pub cov: [T; 3],
    /// Inverse covariance `(A, B, C)`; the footprint exponent is
    /// `A dx² + 2 B dx dy + C dy²`.
    pub conic: [T; 3],
    pub depth: T,
    pub opacity: T,
    /// Half extents of the 3σ ellipse along x and y, in pixels.
    pub extent: [T; 2],
    pub valid: bool,
}

struct Chain<T> {
    /// Unit quaternion and its matrix.
    q_unit: [T; 4],
    rot: Mat3<T>,
    scale: [T; 3],
    /// Camera-space position.
    t: [T; 3],
    /// `J W`, 2x3.
    tw: [[T; 3]; 2],
    /// World covariance.
    sigma: Mat3<T>,
}

fn chain<T: Real>(splats: &SplatSet<T>, i: usize, w: &Mat3<T>, tcam: &[T; 3], fx: T, fy: T) -> Chain<T> {
    let s = splats.get(i);
    let q_unit = quat_normalize(&[s.rot[0], s.rot[1], s.rot[2], s.rot[3]]);
    let rot = quat_to_mat(&q_unit);
    let scale = s.scale();
    let mut t = [tcam[0], tcam[1], tcam[2]];
    for r in 0..3 {
        t[r] += w[r][0] * s.pos[0] + w[r][1] * s.pos[1] + w[r][2] * s.pos[2];
    }
    let (tx, ty, tz) = (t[0], t[1], t[2]);
    let j = [[fx / tz, T::zero(), -fx * tx / (tz * tz)], [T::zero(), fy / tz, -fy * ty / (tz * tz)]];
    let mut tw = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            tw[r][c] = j[r][0] * w[0][c] + j[r][1] * w[1][c] + j[r][2] * w[2][c];
        }
    }
    // Σ = R diag(s²) Rᵀ
    let mut sigma = [[T::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let mut acc = T::zero();
            for k in 0..3 {
                acc += rot[r][k] * scale[k] * scale[k] * rot[c][k];
            }
            sigma[r][c] = acc;
        }
    }
    Chain {
        q_unit,
        rot,
        scale,
        t,
        tw,
        sigma,
    }
}

pub(crate) struct CameraT<T> {
    pub w: Mat3<T>,
    pub t: [T; 3],
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> CameraT<T> {
    pub fn new(camera: &Camera) -> Self {
        CameraT {
            w: cast_mat(&camera.rotation),
            t: [
                T::lit(camera.translation[0]),
                T::lit(camera.translation[1]),
                T::lit(camera.translation[2]),
            ],
            fx: T::lit(camera.fx),
            fy: T::lit(camera.fy),
            cx: T::lit(camera.cx),
            cy: T::lit(camera.cy),
        }
    }
}

/// Projects one splat. Invalid (behind the near plane) splats come back with
/// `valid == false` and are never composited.
pub fn project_one<T: Real>(splats: &SplatSet<T>, i: usize, camera: &Camera) -> Projected<T> {
    project_with(splats, i, &CameraT::new(camera))
}

pub(crate) fn project_with<T: Real>(splats: &SplatSet<T>, i: usize, cam: &CameraT<T>) -> Projected<T> {
    let c = chain(splats, i, &cam.w, &cam.t, cam.fx, cam.fy);
    let depth = c.t[2];
    if !(depth >= T::lit(NEAR_PLANE)) {
        return Projected {
            depth,
            ..Default::default()
        };
    }
    let floor = T::lit(COV_FLOOR);
    let mut cov2 = [[T::zero(); 2]; 2];
    for r in 0..2 {
        for col in 0..2 {
            let mut acc = T::zero();
            for a in 0..3 {
                for b in 0..3 {
                    acc += c.tw[r][a] * c.sigma[a][b] * c.tw[col][b];
                }
            }
            cov2[r][col] = acc;
        }
    }
    let (a, b, cc) = (cov2[0][0] + floor, (cov2[0][1] + cov2[1][0]) * T::lit(0.5), cov2[1][1] + floor);
    let det = a * cc - b * b;
    let conic = [cc / det, -b / det, a / det];
    let three = T::lit(3.0);
    Projected {
        mean: [cam.fx * c.t[0] / depth + cam.cx, cam.fy * c.t[1] / depth + cam.cy],
        cov: [a, b, cc],
        conic,
        depth,
        opacity: sigmoid(splats.opacity[i]),
        extent: [three * a.sqrt(), three * cc.sqrt()],
        valid: true,
    }
}

pub fn project_splats<T: Real>(splats: &SplatSet<T>, camera: &Camera) -> Vec<Projected<T>> {
    let cam = CameraT::new(camera);
    (0..splats.len()).map(|i| project_with(splats, i, &cam)).collect()
}

/// Gradients of a loss with respect to one splat's screen-space quantities.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProjectedGrad<T> {
    pub mean: [T; 2],
    /// With respect to the conic scalars `(A, B, C)` as used in
    /// `A dx² + 2 B dx dy + C dy²`.
    pub conic: [T; 3],
    /// With respect to the covariance scalars `(a, b, c)`; added to the
    /// contribution flowing back from `conic`.
    pub cov: [T; 3],
    pub opacity: T,
}

/// Pulls screen-space gradients back to splat `i`'s parameters, accumulating
/// into `grads`.
pub fn project_backward<T: Real>(
    splats: &SplatSet<T>,
    i: usize,
    camera: &Camera,
    g: &ProjectedGrad<T>,
    grads: &mut SplatGrads<T>,
) {
    project_backward_with(splats, i, &CameraT::new(camera), g, grads)
}

pub(crate) fn project_backward_with<T: Real>(
    splats: &SplatSet<T>,
    i: usize,
    cam: &CameraT<T>,
    g: &ProjectedGrad<T>,
    grads: &mut SplatGrads<T>,
) {
    let p = project_with(splats, i, cam);
    if !p.valid {
        return;
    }
    let c = chain(splats, i, &cam.w, &cam.t, cam.fx, cam.fy);
    let half = T::lit(0.5);
    let two = T::lit(2.0);

    // conic = cov⁻¹  =>  dcov = -K dK K   (symmetric matrix form)
    let k = [[p.conic[0], p.conic[1]], [p.conic[1], p.conic[2]]];
    let gk = [[g.conic[0], g.conic[1] * half], [g.conic[1] * half, g.conic[2]]];
    let mut g_cov = [[T::zero(); 2]; 2];
    for r in 0..2 {
        for col in 0..2 {
            let mut acc = T::zero();
            for a in 0..2 {
                for b in 0..2 {
                    acc += k[r][a] * gk[a][b] * k[b][col];
                }
            }
            g_cov[r][col] = -acc;
        }
    }
    g_cov[0][0] += g.cov[0];
    g_cov[0][1] += g.cov[1] * half;
    g_cov[1][0] += g.cov[1] * half;
    g_cov[1][1] += g.cov[2];

    // cov = TW Σ TWᵀ
    let tw = c.tw;
    let mut g_sigma = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = T::zero();
            for r in 0..2 {
                for col in 0..2 {
                    acc += tw[r][a] * g_cov[r][col] * tw[col][b];
                }
            }
            g_sigma[a][b] = acc;
        }
    }
    // dL/dTW = 2 Gcov TW Σ
    let mut tw_sigma = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for col in 0..3 {
            tw_sigma[r][col] = (0..3).map(|a| tw[r][a] * c.sigma[a][col]).sum();
        }
    }
    let mut g_tw = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for col in 0..3 {
            g_tw[r][col] = two * (g_cov[r][0] * tw_sigma[0][col] + g_cov[r][1] * tw_sigma[1][col]);
        }
    }
    // TW = J W  =>  dJ = dTW Wᵀ
    let w = cam.w;
    let mut g_j = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for col in 0..3 {
            g_j[r][col] = (0..3).map(|a| g_tw[r][a] * w[col][a]).sum();
        }
    }
    let (tx, ty, tz) = (c.t[0], c.t[1], c.t[2]);
    let (fx, fy) = (cam.fx, cam.fy);
    let tz2 = tz * tz;
    let tz3 = tz2 * tz;
    let mut g_t = [T::zero(); 3];
    // J00 = fx/tz, J02 = -fx tx/tz², J11 = fy/tz, J12 = -fy ty/tz²
    g_t[2] += g_j[0][0] * (-fx / tz2);
    g_t[0] += g_j[0][2] * (-fx / tz2);
    g_t[2] += g_j[0][2] * (two * fx * tx / tz3);
    g_t[2] += g_j[1][1] * (-fy / tz2);
    g_t[1] += g_j[1][2] * (-fy / tz2);
    g_t[2] += g_j[1][2] * (two * fy * ty / tz3);
    // mean = (fx tx/tz + cx, fy ty/tz + cy)
    g_t[0] += g.mean[0] * fx / tz;
    g_t[2] += g.mean[0] * (-fx * tx / tz2);
    g_t[1] += g.mean[1] * fy / tz;
    g_t[2] += g.mean[1] * (-fy * ty / tz2);
    // t = W x + t0
    for a in 0..3 {
        grads.pos[i * 3 + a] += w[0][a] * g_t[0] + w[1][a] * g_t[1] + w[2][a] * g_t[2];
    }

    // Σ = M Mᵀ, M = R diag(s)  =>  dM = 2 GΣ M
    let m = {
        let mut m = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for col in 0..3 {
                m[r][col] = c.rot[r][col] * c.scale[col];
            }
        }
        m
    };
    let mut g_m = [[T::zero(); 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            g_m[r][col] = two * (0..3).map(|a| g_sigma[r][a] * m[a][col]).sum::<T>();
        }
    }
    let mut g_rot = [[T::zero(); 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            g_rot[r][col] = g_m[r][col] * c.scale[col];
        }
    }
    for col in 0..3 {
        let g_s: T = (0..3).map(|r| g_m[r][col] * c.rot[r][col]).sum();
        grads.log_scale[i * 3 + col] += g_s * c.scale[col];
    }
    let g_unit = quat_to_mat_backward(&c.q_unit, &g_rot);
    let s = splats.get(i);
    let g_raw = quat_normalize_backward(&[s.rot[0], s.rot[1], s.rot[2], s.rot[3]], &g_unit);
    for a in 0..4 {
        grads.rot[i * 4 + a] += g_raw[a];
    }
    grads.opacity[i] += g.opacity * p.opacity * (T::one() - p.opacity);
}
