use rand::Rng;

use crate::real::Real;
use crate::splat::camera::Camera;
use crate::splat::set::SplatSet;

/// Random splat cloud in front of [`test_camera`]: positions in a box around
/// the origin, small anisotropic scales, arbitrary rotations.
pub fn random_scene<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, channels: usize) -> SplatSet<T> {
    let mut s = SplatSet::empty(channels);
    for _ in 0..n {
        let color: Vec<T> = (0..channels).map(|_| T::lit(rng.random_range(0.0..1.0))).collect();
        s.push(
            [
                T::lit(rng.random_range(-0.6..0.6)),
                T::lit(rng.random_range(-0.6..0.6)),
                T::lit(rng.random_range(-0.6..0.6)),
            ],
            &color,
            [
                T::lit(rng.random_range(-3.2..-1.8)),
                T::lit(rng.random_range(-3.2..-1.8)),
                T::lit(rng.random_range(-3.2..-1.8)),
            ],
            [
                T::lit(rng.random_range(0.3..1.0)),
                T::lit(rng.random_range(-1.0..1.0)),
                T::lit(rng.random_range(-1.0..1.0)),
                T::lit(rng.random_range(-1.0..1.0)),
            ],
            T::lit(rng.random_range(-1.5..2.5)),
        );
    }
    s
}

/// A camera 2.5 units from the origin looking at it.
pub fn test_camera(size: usize) -> Camera {
    Camera::look_at([0.5, -0.4, 2.4], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], size as f64 * 1.4, size, size)
}
