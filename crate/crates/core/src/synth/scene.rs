//! Procedural blob heads. Canonical frame: y up, face toward +z, head
//! centred on the origin. Every rule that moves splats with an expression
//! factor is a closed-form function of the canonical position, so landmarks
//! and splats move together.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::morph::{to_world, HeadPose};
use crate::splat::SplatSet;

pub const SKULL_RANGE: (f64, f64) = (0.88, 1.12);
pub const NOSE_RANGE: (f64, f64) = (0.04, 0.16);
pub const EAR_RANGE: (f64, f64) = (0.6, 1.4);
pub const ALBEDO_RANGE: [(f64, f64); 3] = [(0.55, 0.95), (0.35, 0.75), (0.25, 0.6)];
/// Radians.
pub const JAW_RANGE: (f64, f64) = (0.0, 0.35);
pub const CORNER_RANGE: (f64, f64) = (-0.04, 0.04);
pub const BROW_RANGE: (f64, f64) = (0.0, 0.06);

/// Radii of the unscaled skull ellipsoid.
pub const BASE_RADII: [f64; 3] = [0.40, 0.50, 0.44];
const SKIN_POINTS: usize = 1800;
const OPACITY_LOGIT: f64 = 4.0;

pub const LANDMARK_NAMES: [&str; 12] = [
    "eye_outer_r",
    "eye_inner_r",
    "eye_inner_l",
    "eye_outer_l",
    "brow_r",
    "brow_l",
    "nose_tip",
    "mouth_corner_r",
    "mouth_corner_l",
    "lip_upper",
    "lip_lower",
    "chin",
];
pub const NUM_LANDMARKS: usize = LANDMARK_NAMES.len();
/// Index of the chin in [`LANDMARK_NAMES`]; it tracks the jaw.
pub const JAW_LANDMARK: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityFactors {
    /// Multipliers on [`BASE_RADII`].
    pub skull: [f64; 3],
    /// Forward extent of the nose tip past the face surface.
    pub nose: f64,
    pub ear: f64,
    pub albedo: [f64; 3],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpressionFactors {
    pub jaw_open: f64,
    /// Vertical mouth-corner shift; positive smiles.
    pub mouth_corner: f64,
    pub brow_raise: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFactors {
    pub identity: IdentityFactors,
    pub expression: ExpressionFactors,
}

fn check_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(Error::Invalid(format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl IdentityFactors {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut u = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        IdentityFactors {
            skull: [u(SKULL_RANGE), u(SKULL_RANGE), u(SKULL_RANGE)],
            nose: u(NOSE_RANGE),
            ear: u(EAR_RANGE),
            albedo: [u(ALBEDO_RANGE[0]), u(ALBEDO_RANGE[1]), u(ALBEDO_RANGE[2])],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, &s) in ["x", "y", "z"].iter().zip(&self.skull) {
            check_range(&format!("skull.{axis}"), s, SKULL_RANGE)?;
        }
        check_range("nose", self.nose, NOSE_RANGE)?;
        check_range("ear", self.ear, EAR_RANGE)?;
        for (c, (&a, &r)) in self.albedo.iter().zip(&ALBEDO_RANGE).enumerate() {
            check_range(&format!("albedo[{c}]"), a, r)?;
        }
        Ok(())
    }

    pub fn radii(&self) -> [f64; 3] {
        [0, 1, 2].map(|k| BASE_RADII[k] * self.skull[k])
    }
}

impl ExpressionFactors {
    pub fn neutral() -> Self {
        Self::default()
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        ExpressionFactors {
            jaw_open: rng.random_range(JAW_RANGE.0..=JAW_RANGE.1),
            mouth_corner: rng.random_range(CORNER_RANGE.0..=CORNER_RANGE.1),
            brow_raise: rng.random_range(BROW_RANGE.0..=BROW_RANGE.1),
        }
    }

    /// Expression `index` of a corpus: a fixed table of five, then samples.
    pub fn preset<R: Rng + ?Sized>(index: usize, rng: &mut R) -> Self {
        let e = |jaw_open, mouth_corner, brow_raise| ExpressionFactors { jaw_open, mouth_corner, brow_raise };
        match index {
            0 => Self::neutral(),
            1 => e(0.3, 0.0, 0.0),
            2 => e(0.05, 0.035, 0.0),
            3 => e(0.0, 0.0, 0.05),
            4 => e(0.2, -0.02, 0.05),
            _ => Self::sample(rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("jaw_open", self.jaw_open, JAW_RANGE)?;
        check_range("mouth_corner", self.mouth_corner, CORNER_RANGE)?;
        check_range("brow_raise", self.brow_raise, BROW_RANGE)
    }
}

impl SceneFactors {
    pub fn validate(&self) -> Result<()> {
        self.identity.validate()?;
        self.expression.validate()
    }
}

/// A canonical-space head: splats, `K x 3` landmarks, and for each landmark
/// the index of the small marker splat sitting exactly on it.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub splats: SplatSet<f64>,
    pub landmarks: Vec<f64>,
    pub landmark_splats: Vec<usize>,
}

impl SynthScene {
    /// The scene under a rigid head pose.
    pub fn posed(&self, pose: &HeadPose) -> SynthScene {
        let mut splats = self.splats.clone();
        let (pos, rot) = to_world(pose, &self.splats.pos, &self.splats.rot);
        splats.pos = pos;
        splats.rot = rot;
        SynthScene {
            splats,
            landmarks: pose_points(pose, &self.landmarks),
            landmark_splats: self.landmark_splats.clone(),
        }
    }
}

fn pose_points(pose: &HeadPose, x: &[f64]) -> Vec<f64> {
    x.chunks_exact(3).flat_map(|p| pose.apply(&[p[0], p[1], p[2]])).collect()
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

struct Builder {
    radii: [f64; 3],
    expr: ExpressionFactors,
    splats: SplatSet<f64>,
    landmarks: Vec<f64>,
    landmark_splats: Vec<usize>,
}

impl Builder {
    /// Point on the front of the skull at normalized face coordinates.
    fn face(&self, u: f64, v: f64) -> Vec3<f64> {
        let [rx, ry, rz] = self.radii;
        let r2 = (1.0 - u * u - v * v).max(0.0);
        [u * rx, v * ry, rz * r2.sqrt()]
    }

    fn mouth_y(&self) -> f64 {
        -0.35 * self.radii[1]
    }

    /// Jaw rotation about a pivot behind the mouth, weighted by how far
    /// below the mouth line and how far forward the point is.
    fn jaw(&self, p: Vec3<f64>) -> Vec3<f64> {
        let [_, ry, rz] = self.radii;
        let below = smoothstep((self.mouth_y() + 0.02 - p[1]) / 0.08);
        let front = smoothstep((p[2] + 0.1 * rz) / (0.4 * rz));
        let phi = self.expr.jaw_open * below * front;
        if phi == 0.0 {
            return p;
        }
        let pivot = [0.0, -0.1 * ry, -0.2 * rz];
        let (s, c) = phi.sin_cos();
        let (y, z) = (p[1] - pivot[1], p[2] - pivot[2]);
        [p[0], pivot[1] + y * c - z * s, pivot[2] + y * s + z * c]
    }

    fn push(&mut self, p: Vec3<f64>, color: [f64; 3], sigma: f64) {
        let ls = sigma.ln();
        self.splats.push(p, &color, [ls; 3], [1.0, 0.0, 0.0, 0.0], OPACITY_LOGIT);
    }

    fn landmark(&mut self, p: Vec3<f64>, color: [f64; 3]) {
        self.landmark_splats.push(self.splats.len());
        self.push(p, color, 0.012);
        self.landmarks.extend_from_slice(&p);
    }

    /// Offset a face point outward along the ellipsoid normal.
    fn lift(&self, p: Vec3<f64>, d: f64) -> Vec3<f64> {
        let n = [0, 1, 2].map(|k| p[k] / (self.radii[k] * self.radii[k]));
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        [0, 1, 2].map(|k| p[k] + d * n[k] / len)
    }
}

/// Deterministic head for `factors`.
pub fn build_scene(factors: &SceneFactors) -> Result<SynthScene> {
    factors.validate()?;
    let id = factors.identity;
    let radii = id.radii();
    let mut b = Builder {
        radii,
        expr: factors.expression,
        splats: SplatSet::empty(3),
        landmarks: Vec::with_capacity(NUM_LANDMARKS * 3),
        landmark_splats: Vec::with_capacity(NUM_LANDMARKS),
    };
    let skin = id.albedo;
    let hair = id.albedo.map(|a| 0.3 * a);
    let dark = [0.08, 0.06, 0.06];
    let lip = [0.75, 0.22, 0.25];
    let [rx, ry, rz] = radii;

    // mouth interior sits behind the lips and shows once the jaw drops
    let my = b.mouth_y();
    for i in 0..24 {
        let (u, v) = ((i % 8) as f64 / 7.0 - 0.5, (i / 8) as f64 / 2.0);
        let p = b.face(u * 0.4, (my - 0.02 - v * 0.08) / ry);
        b.push([p[0], p[1], p[2] - 0.04], dark, 0.025);
    }

    // skin: Fibonacci lattice on the ellipsoid
    let area = 4.0 * std::f64::consts::PI * ((rx * ry).powf(1.6) + (rx * rz).powf(1.6) + (ry * rz).powf(1.6)) / 3.0;
    let sigma = 0.6 * (area.powf(1.0 / 1.6) / SKIN_POINTS as f64).sqrt();
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for i in 0..SKIN_POINTS {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / SKIN_POINTS as f64;
        let r = (1.0 - y * y).sqrt();
        let th = golden * i as f64;
        let n = [r * th.cos(), y, r * th.sin()];
        let color = if n[1] > 0.4 - 0.5 * (-n[2]).max(0.0) { hair } else { skin };
        let p = b.jaw([n[0] * rx, n[1] * ry, n[2] * rz]);
        b.push(p, color, sigma);
    }

    // ears on the sides
    for side in [-1.0, 1.0] {
        for i in 0..30 {
            let a = i as f64 * golden;
            let rad = 0.08 * id.ear * ((i as f64 + 0.5) / 30.0).sqrt();
            let p = [side * (rx + 0.01), rad * a.sin() - 0.02, rad * a.cos() - 0.05 * rz];
            b.push(p, skin.map(|c| 0.85 * c), 0.018 * id.ear);
        }
    }

    // eyes: sclera, pupil, and corner markers
    let ey = 0.12;
    for side in [-1.0, 1.0] {
        let cx = side * 0.35;
        for i in 0..12 {
            let a = i as f64 / 12.0 * std::f64::consts::TAU;
            let p = b.face(cx + 0.09 / rx * 0.7 * a.cos(), ey + 0.035 / ry * a.sin());
            b.push(b.lift(p, 0.006), [0.92, 0.92, 0.9], 0.014);
        }
        let c = b.face(cx, ey);
        b.push(b.lift(c, 0.01), dark, 0.018);
    }
    let half = 0.09 / rx * 0.7;
    for u in [-0.35 - half, -0.35 + half, 0.35 - half, 0.35 + half] {
        let p = b.lift(b.face(u, ey), 0.008);
        b.landmark(p, [0.6, 0.5, 0.5]);
    }

    // brows
    let by = 0.26 + factors.expression.brow_raise / ry;
    for side in [-1.0, 1.0] {
        for i in 0..10 {
            let u = side * (0.2 + 0.3 * i as f64 / 9.0);
            let p = b.face(u, by);
            b.push(b.lift(p, 0.006), hair, 0.014);
        }
    }
    for side in [-1.0, 1.0] {
        let p = b.lift(b.face(side * 0.35, by), 0.01);
        b.landmark(p, hair);
    }

    // nose: a chain from the face surface out to the tip
    let base = b.face(0.0, -0.08);
    let tip = [base[0], base[1] - 0.02, base[2] + id.nose];
    for i in 0..16 {
        let t = i as f64 / 15.0;
        let w = 0.035 * (1.0 - 0.5 * t);
        for dx in [-1.0, 1.0] {
            let p = [dx * w * 0.5, base[1] + 0.08 * (1.0 - t) - 0.02 * t, base[2] + t * id.nose];
            b.push(p, skin.map(|c| (c * 1.05).min(1.0)), w);
        }
    }
    b.landmark(tip, skin.map(|c| (c * 1.1).min(1.0)));

    // lips: the upper lip bends at the corners, the lower lip rides the jaw
    let corner_u = 0.22 * 0.4 / rx;
    let corner = |b: &Builder, side: f64| {
        let p = b.face(side * corner_u, (my + factors.expression.mouth_corner) / ry);
        b.jaw(b.lift(p, 0.008))
    };
    for i in 0..13 {
        let t = i as f64 / 6.0 - 1.0;
        let lift = factors.expression.mouth_corner * t * t;
        let up = b.lift(b.face(t * corner_u, (my + 0.015 + lift) / ry), 0.008);
        let up = b.jaw(up);
        b.push(up, lip, 0.014);
        let low = b.lift(b.face(t * corner_u * 0.9, (my - 0.02 + lift * 0.5) / ry), 0.008);
        let low = b.jaw(low);
        b.push(low, lip, 0.014);
    }
    for side in [-1.0, 1.0] {
        let p = corner(&b, side);
        b.landmark(p, lip);
    }
    let upper = b.jaw(b.lift(b.face(0.0, (my + 0.015) / ry), 0.01));
    b.landmark(upper, lip);
    let lower = b.jaw(b.lift(b.face(0.0, (my - 0.025) / ry), 0.01));
    b.landmark(lower, lip);
    let chin = b.jaw(b.lift(b.face(0.0, -0.8), 0.005));
    b.landmark(chin, skin);

    debug_assert_eq!(b.landmark_splats.len(), NUM_LANDMARKS);
    Ok(SynthScene {
        splats: b.splats,
        landmarks: b.landmarks,
        landmark_splats: b.landmark_splats,
    })
}
