use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    cast_mat, det3, identity3, mat_mul, mat_t_vec, mat_to_quat, mat_vec, orthonormality_error, quat_mul,
    quat_mul_backward_rhs, transpose, Mat3, Vec3,
};
use crate::real::Real;

/// Rigid head pose `x -> R x + T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
}

impl Default for HeadPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl HeadPose {
    pub fn identity() -> Self {
        HeadPose {
            rotation: identity3(),
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: Mat3<f64>, translation: Vec3<f64>) -> Result<Self> {
        let p = HeadPose { rotation, translation };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let err = orthonormality_error(&self.rotation);
        if !(err <= 1e-6) || !(det3(&self.rotation) > 0.0) {
            return Err(Error::Invalid(format!(
                "pose rotation is not a proper rotation (orthonormality error {err:.3e}, det {:.6})",
                det3(&self.rotation)
            )));
        }
        if self.translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("pose translation".into()));
        }
        Ok(())
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &HeadPose) -> HeadPose {
        let t = mat_vec(&self.rotation, &inner.translation);
        HeadPose {
            rotation: mat_mul(&self.rotation, &inner.rotation),
            translation: [0, 1, 2].map(|i| t[i] + self.translation[i]),
        }
    }

    pub fn inverse(&self) -> HeadPose {
        let t = mat_t_vec(&self.rotation, &self.translation);
        HeadPose {
            rotation: transpose(&self.rotation),
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    pub fn quaternion(&self) -> [f64; 4] {
        mat_to_quat(&self.rotation)
    }

    pub fn apply(&self, p: &Vec3<f64>) -> Vec3<f64> {
        let r = mat_vec(&self.rotation, p);
        [0, 1, 2].map(|i| r[i] + self.translation[i])
    }
}

/// Rigidly moves `n x 3` positions.
pub fn transform_points<T: Real>(pose: &HeadPose, x: &[T]) -> Vec<T> {
    let r: Mat3<T> = cast_mat(&pose.rotation);
    let t = pose.translation.map(T::lit);
    x.chunks_exact(3)
        .flat_map(|p| {
            let q = mat_vec(&r, &[p[0], p[1], p[2]]);
            [q[0] + t[0], q[1] + t[1], q[2] + t[2]]
        })
        .collect()
}

pub fn transform_points_backward<T: Real>(pose: &HeadPose, d_x: &[T]) -> Vec<T> {
    let r: Mat3<T> = cast_mat(&pose.rotation);
    d_x.chunks_exact(3).flat_map(|g| mat_t_vec(&r, &[g[0], g[1], g[2]])).collect()
}

/// Canonical to world: `X = R X_can + T`, `Q = q_R ⊗ Q_can`.
pub fn to_world<T: Real>(pose: &HeadPose, x_can: &[T], q_can: &[T]) -> (Vec<T>, Vec<T>) {
    let qr = pose.quaternion().map(T::lit);
    let q = q_can
        .chunks_exact(4)
        .flat_map(|q| quat_mul(&qr, &[q[0], q[1], q[2], q[3]]))
        .collect();
    (transform_points(pose, x_can), q)
}

/// Returns `(d_x_can, d_q_can)`.
pub fn to_world_backward<T: Real>(pose: &HeadPose, d_x: &[T], d_q: &[T]) -> (Vec<T>, Vec<T>) {
    let qr = pose.quaternion().map(T::lit);
    let dq = d_q
        .chunks_exact(4)
        .flat_map(|g| quat_mul_backward_rhs(&qr, &[g[0], g[1], g[2], g[3]]))
        .collect();
    (transform_points_backward(pose, d_x), dq)
}
