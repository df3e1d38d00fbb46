//! Fixed-size 3x3 / quaternion helpers shared by the renderer and the
//! deformation model. Quaternions are stored `[w, x, y, z]`.

use crate::real::Real;

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];
pub type Quat<T> = [T; 4];

pub fn identity3<T: Real>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

#[inline]
pub fn mat_vec<T: Real>(m: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
pub fn mat_t_vec<T: Real>(m: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn det3<T: Real>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn cast_mat<A: Real, B: Real>(m: &Mat3<A>) -> Mat3<B> {
    let mut out = [[B::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = B::lit(m[i][j].to_f64_lossy());
        }
    }
    out
}

/// Largest deviation of `RᵀR` from the identity.
pub fn orthonormality_error(m: &Mat3<f64>) -> f64 {
    let rtr = mat_mul(&transpose(m), m);
    let mut worst = 0.0f64;
    for (i, row) in rtr.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    worst
}

#[inline]
pub fn dot3<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn sub3<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn cross3<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3<T: Real>(a: &Vec3<T>) -> T {
    dot3(a, a).sqrt()
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_mat<T: Real>(q: &Quat<T>) -> Mat3<T> {
    let [w, x, y, z] = *q;
    let one = T::one();
    let two = T::lit(2.0);
    [
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ]
}

/// Pulls a gradient on the rotation matrix back onto the (unit) quaternion
/// components it was built from.
pub fn quat_to_mat_backward<T: Real>(q: &Quat<T>, g: &Mat3<T>) -> Quat<T> {
    let [w, x, y, z] = *q;
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let gw = two * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let gx = two * (y * g[0][1] + z * g[0][2] + y * g[1][0] - w * g[1][2] + z * g[2][0] + w * g[2][1])
        - four * x * (g[1][1] + g[2][2]);
    let gy = two * (x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1])
        - four * y * (g[0][0] + g[2][2]);
    let gz = two * (-w * g[0][1] + x * g[0][2] + w * g[1][0] + y * g[1][2] + x * g[2][0] + y * g[2][1])
        - four * z * (g[0][0] + g[1][1]);
    [gw, gx, gy, gz]
}

pub fn quat_norm<T: Real>(q: &Quat<T>) -> T {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn quat_normalize<T: Real>(q: &Quat<T>) -> Quat<T> {
    let n = quat_norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Backward of `q / |q|`: given the gradient on the normalized quaternion.
pub fn quat_normalize_backward<T: Real>(q: &Quat<T>, g_unit: &Quat<T>) -> Quat<T> {
    let n = quat_norm(q);
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let proj = u[0] * g_unit[0] + u[1] * g_unit[1] + u[2] * g_unit[2] + u[3] * g_unit[3];
    [
        (g_unit[0] - u[0] * proj) / n,
        (g_unit[1] - u[1] * proj) / n,
        (g_unit[2] - u[2] * proj) / n,
        (g_unit[3] - u[3] * proj) / n,
    ]
}

/// Hamilton product `a * b`.
pub fn quat_mul<T: Real>(a: &Quat<T>, b: &Quat<T>) -> Quat<T> {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Gradient of `a * b` with respect to `b`, for fixed `a`.
pub fn quat_mul_backward_rhs<T: Real>(a: &Quat<T>, g: &Quat<T>) -> Quat<T> {
    // a * b is linear in b with matrix L(a); the pullback is L(a)ᵀ g = conj(a) * g.
    let conj = [a[0], -a[1], -a[2], -a[3]];
    quat_mul(&conj, g)
}

/// Unit quaternion of a rotation matrix (Shepperd's method), sign chosen with w ≥ 0.
pub fn mat_to_quat(m: &Mat3<f64>) -> Quat<f64> {
    let trace = m[0][0] + m[1][1] + m[2][2];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        [(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
    } else if m[1][1] > m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s]
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s]
    };
    let q = quat_normalize(&q);
    if q[0] < 0.0 {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

/// Rotation `Rz(rz) * Ry(ry) * Rx(rx)`.
pub fn rotation_xyz(rx: f64, ry: f64, rz: f64) -> Mat3<f64> {
    let (sx, cx) = rx.sin_cos();
    let (sy, cy) = ry.sin_cos();
    let (sz, cz) = rz.sin_cos();
    let mx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let my = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let mz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&mz, &mat_mul(&my, &mx))
}
