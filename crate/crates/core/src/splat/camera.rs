use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cross3, dot3, mat_mul, mat_vec, norm3, orthonormality_error, sub3, transpose, Mat3, Vec3};

/// Pinhole camera. `rotation`/`translation` map world to camera space
/// (`x_cam = R x + t`), the camera looks down +z and image y grows downward.
/// Pixel `(row, col)` has its center at `(col + 0.5, row + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::Invalid(format!(
                "camera must be at least 8x8 pixels, got {}x{}",
                self.width, self.height
            )));
        }
        let err = orthonormality_error(&self.rotation);
        if err > 1e-6 {
            return Err(Error::Invalid(format!("camera rotation is not orthonormal (error {err:.2e})")));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Invalid("focal lengths must be positive".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(eye: Vec3<f64>, target: Vec3<f64>, up: Vec3<f64>, focal: f64, width: usize, height: usize) -> Self {
        let forward = {
            let d = sub3(&target, &eye);
            let n = norm3(&d);
            [d[0] / n, d[1] / n, d[2] / n]
        };
        let right = {
            let r = cross3(&forward, &up);
            let n = norm3(&r);
            [r[0] / n, r[1] / n, r[2] / n]
        };
        // image y points down
        let down = cross3(&forward, &right);
        let rotation = [right, down, forward];
        let t = mat_vec(&rotation, &eye);
        Camera {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation,
            translation: [-t[0], -t[1], -t[2]],
            width,
            height,
        }
    }

    /// Same viewpoint at a resolution divided by `factor`.
    pub fn downscaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Camera {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: self.cx / f,
            cy: self.cy / f,
            width: self.width / factor,
            height: self.height / factor,
            ..self.clone()
        }
    }

    pub fn to_camera_space(&self, p: &Vec3<f64>) -> Vec3<f64> {
        let r = mat_vec(&self.rotation, p);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    /// Pixel coordinates and depth of a world point.
    pub fn project(&self, p: &Vec3<f64>) -> ([f64; 2], f64) {
        let c = self.to_camera_space(p);
        ([self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy], c[2])
    }

    /// Camera that sees `R x + T` exactly as `self` sees `x`.
    pub fn after_rigid(&self, rotation: &Mat3<f64>, translation: &Vec3<f64>) -> Self {
        // x_cam = Rc (Rᵀ (y - T)) + tc
        let rt = transpose(rotation);
        let rot = mat_mul(&self.rotation, &rt);
        let shift = mat_vec(&rot, translation);
        Camera {
            rotation: rot,
            translation: [
                self.translation[0] - shift[0],
                self.translation[1] - shift[1],
                self.translation[2] - shift[2],
            ],
            ..self.clone()
        }
    }

    pub fn center(&self) -> Vec3<f64> {
        let rt = transpose(&self.rotation);
        let c = mat_vec(&rt, &self.translation);
        [-c[0], -c[1], -c[2]]
    }

    pub fn viewing_direction(&self) -> Vec3<f64> {
        let f = self.rotation[2];
        let n = dot3(&f, &f).sqrt();
        [f[0] / n, f[1] / n, f[2] / n]
    }
}
