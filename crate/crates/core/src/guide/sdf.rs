use rand::Rng;

use super::grid::TetGrid;
use crate::diff::{Adam, Mlp, MlpInit, MlpSpec, MlpTape, ParamStore};
use crate::error::{Error, Result};
use crate::real::Real;

pub const PE_BANDS: usize = 4;
/// Raw coordinates plus a sine and cosine per band and axis.
pub const PE_WIDTH: usize = 3 + 3 * 2 * PE_BANDS;

/// Frequency encoding `[x, sin(2^k pi x), cos(2^k pi x)]` of one point.
pub fn encode<T: Real>(p: [T; 3], out: &mut [T]) {
    out[..3].copy_from_slice(&p);
    let mut o = 3;
    for k in 0..PE_BANDS {
        let f = T::lit(std::f64::consts::PI * (1u32 << k) as f64);
        for &c in &p {
            out[o] = (f * c).sin();
            out[o + 1] = (f * c).cos();
            o += 2;
        }
    }
}

/// The mean-shape network: position in, SDF value plus `channels` features out.
#[derive(Clone, Debug)]
pub struct SdfNet {
    pub mlp: Mlp,
    pub channels: usize,
}

pub struct SdfTape<T> {
    indices: Vec<u32>,
    mlp: MlpTape<T>,
}

impl SdfNet {
    pub const PREFIX: &'static str = "f_mean";

    pub fn spec(channels: usize) -> MlpSpec {
        MlpSpec::new(PE_WIDTH, &[64, 64, 64], 1 + channels)
    }

    pub fn register<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, channels: usize, rng: &mut R) -> Result<Self> {
        let mlp = Mlp::register(store, Self::PREFIX, Self::spec(channels), MlpInit::Random, rng)?;
        Ok(SdfNet { mlp, channels })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, channels: usize) -> Result<Self> {
        Ok(SdfNet {
            mlp: Mlp::bind(store, Self::PREFIX, Self::spec(channels))?,
            channels,
        })
    }

    /// Evaluates arbitrary points (`n x 3`); returns `n x (1 + channels)` rows.
    pub fn eval_points<T: Real>(&self, store: &ParamStore<T>, points: &[T]) -> Result<(Vec<T>, MlpTape<T>)> {
        let n = points.len() / 3;
        let mut enc = vec![T::zero(); n * PE_WIDTH];
        for (p, e) in points.chunks_exact(3).zip(enc.chunks_exact_mut(PE_WIDTH)) {
            encode([p[0], p[1], p[2]], e);
        }
        let (out, tape) = self.mlp.forward(store, &enc, n)?;
        if let Some(bad) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("f_mean output at point {}", bad / (1 + self.channels))));
        }
        Ok((out, tape))
    }
}

/// Writes `s` and `gamma` for the lattice vertices in `indices` (all of them
/// when `None`). Vertices outside the selection keep their previous values.
pub fn eval_sdf_field<T: Real>(
    net: &SdfNet,
    store: &ParamStore<T>,
    grid: &mut TetGrid<T>,
    indices: Option<&[u32]>,
) -> Result<SdfTape<T>> {
    if grid.channels != net.channels {
        return Err(Error::shape("lattice feature width", net.channels, grid.channels));
    }
    let indices: Vec<u32> = match indices {
        Some(ix) => ix.to_vec(),
        None => (0..grid.len() as u32).collect(),
    };
    let mut points = Vec::with_capacity(indices.len() * 3);
    for &v in &indices {
        points.extend_from_slice(&grid.position(v as usize));
    }
    let (out, mlp) = net.eval_points(store, &points)?;
    let (ch, w) = (grid.channels, 1 + grid.channels);
    for (row, &v) in out.chunks_exact(w).zip(&indices) {
        let v = v as usize;
        grid.sdf[v] = row[0];
        grid.features[v * ch..(v + 1) * ch].copy_from_slice(&row[1..]);
    }
    Ok(SdfTape { indices, mlp })
}

/// Pulls lattice-sized gradients on `s` and `gamma` back into `f_mean`.
pub fn eval_sdf_field_backward<T: Real>(
    net: &SdfNet,
    store: &mut ParamStore<T>,
    tape: &SdfTape<T>,
    d_sdf: &[T],
    d_features: &[T],
) -> Result<()> {
    let ch = net.channels;
    if d_features.len() != d_sdf.len() * ch {
        return Err(Error::shape("lattice feature gradient", d_sdf.len() * ch, d_features.len()));
    }
    let mut d_out = Vec::with_capacity(tape.indices.len() * (1 + ch));
    for &v in &tape.indices {
        let v = v as usize;
        d_out.push(d_sdf[v]);
        d_out.extend_from_slice(&d_features[v * ch..(v + 1) * ch]);
    }
    net.mlp.backward_params_only(store, &tape.mlp, &d_out)?;
    Ok(())
}

/// Lower bound style SDF of an axis-aligned ellipsoid; exact on the surface
/// and for spheres, signed everywhere.
pub fn ellipsoid_sdf(p: [f64; 3], radii: [f64; 3]) -> f64 {
    let k0 = (0..3).map(|i| (p[i] / radii[i]).powi(2)).sum::<f64>().sqrt();
    let k1 = (0..3).map(|i| (p[i] / (radii[i] * radii[i])).powi(2)).sum::<f64>().sqrt();
    if k1 == 0.0 {
        return -radii.iter().cloned().fold(f64::INFINITY, f64::min);
    }
    k0 * (k0 - 1.0) / k1
}

#[derive(Clone, Debug)]
pub struct PretrainConfig {
    pub radii: [f64; 3],
    pub center: [f64; 3],
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            radii: [0.45, 0.55, 0.5],
            center: [0.0, 0.05, 0.0],
            steps: 400,
            batch: 1024,
            lr: 3e-3,
        }
    }
}

/// Regresses `s` onto an ellipsoid SDF inside `[lo, hi]^3`. Half of each batch
/// is drawn near the surface. Features are unconstrained. Returns the final
/// batch's mean squared error.
pub fn pretrain_ellipsoid<T: Real, R: Rng + ?Sized>(
    net: &SdfNet,
    store: &mut ParamStore<T>,
    bounds: (f64, f64),
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<f64> {
    let mut adam = Adam::new(cfg.lr);
    let ids: Vec<_> = net.mlp.param_ids().collect();
    let w = 1 + net.channels;
    let mut last = f64::NAN;
    for _ in 0..cfg.steps {
        let mut points = Vec::with_capacity(cfg.batch * 3);
        let mut target = Vec::with_capacity(cfg.batch);
        for b in 0..cfg.batch {
            let p: [f64; 3] = if b % 2 == 0 {
                [0, 1, 2].map(|_| rng.random_range(bounds.0..bounds.1))
            } else {
                // random direction scaled onto the ellipsoid, then jittered
                let mut d = [0.0f64; 3];
                let mut n = 0.0;
                while n < 1e-6 {
                    d = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
                    n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                }
                let jitter = rng.random_range(-0.1..0.1);
                [0, 1, 2].map(|i| cfg.center[i] + d[i] / n * cfg.radii[i] * (1.0 + jitter))
            };
            let local = [0, 1, 2].map(|i| p[i] - cfg.center[i]);
            target.push(ellipsoid_sdf(local, cfg.radii));
            points.extend(p.map(T::lit));
        }
        let (out, tape) = net.eval_points(store, &points)?;
        let scale = 1.0 / cfg.batch as f64;
        let mut d_out = vec![T::zero(); out.len()];
        let mut loss = 0.0;
        for (b, &t) in target.iter().enumerate() {
            let r = out[b * w].to_f64_lossy() - t;
            loss += r * r * scale;
            d_out[b * w] = T::lit(2.0 * r * scale);
        }
        for &id in &ids {
            store.grad_mut(id).iter_mut().for_each(|g| *g = T::zero());
        }
        net.mlp.backward_params_only(store, &tape, &d_out)?;
        adam.step(store)?;
        last = loss;
    }
    Ok(last)
}
