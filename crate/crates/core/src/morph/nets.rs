use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Mlp, MlpInit, MlpSpec, MlpTape, ParamStore};
use crate::error::{Error, Result};
use crate::linalg::{quat_normalize, quat_normalize_backward};
use crate::real::Real;

/// Feature, identity-code and expression-code widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub channels: usize,
    pub id_dim: usize,
    pub exp_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            channels: 8,
            id_dim: 32,
            exp_dim: 16,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 3 || self.id_dim == 0 || self.exp_dim == 0 {
            return Err(Error::Invalid(format!(
                "model dims need channels >= 3 and non-zero code widths, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// The networks shared by both stages, stored under the same names so that
/// migration is a plain copy.
#[derive(Clone, Debug)]
pub struct Networks {
    pub dims: ModelDims,
    pub inj: Mlp,
    pub id: Mlp,
    pub exp: Mlp,
    pub col: Mlp,
}

impl Networks {
    pub fn specs(d: ModelDims) -> [(&'static str, MlpSpec, MlpInit); 4] {
        let f = d.channels;
        [
            ("f_inj", MlpSpec::new(f + d.id_dim, &[64], f), MlpInit::Random),
            ("f_id", MlpSpec::new(f, &[32], 3), MlpInit::ZeroFinal),
            ("f_exp", MlpSpec::new(f + d.exp_dim, &[64, 32], 3), MlpInit::ZeroFinal),
            ("f_col", MlpSpec::new(f + d.exp_dim, &[64], f), MlpInit::Random),
        ]
    }

    pub fn register<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let mut nets = Vec::with_capacity(4);
        for (name, spec, init) in Self::specs(dims) {
            nets.push(Mlp::register(store, name, spec, init, rng)?);
        }
        Ok(Self::from_vec(dims, nets))
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let nets = Self::specs(dims)
            .into_iter()
            .map(|(name, spec, _)| Mlp::bind(store, name, spec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_vec(dims, nets))
    }

    fn from_vec(dims: ModelDims, nets: Vec<Mlp>) -> Self {
        let mut it = nets.into_iter();
        let mut next = || it.next().expect("four networks");
        Networks {
            dims,
            inj: next(),
            id: next(),
            exp: next(),
            col: next(),
        }
    }

    fn check_rows<T>(&self, what: &str, x: &[T], width: usize) -> Result<usize> {
        if width == 0 || x.len() % width != 0 {
            return Err(Error::shape(format!("{what} rows of width {width}"), width, x.len()));
        }
        Ok(x.len() / width)
    }

    fn check_code<T>(&self, what: &str, z: &[T], width: usize) -> Result<()> {
        if z.len() != width {
            return Err(Error::shape(what, width, z.len()));
        }
        Ok(())
    }

    /// `H = f_inj(gamma, z_id)` per point.
    pub fn inject_identity<T: Real>(&self, store: &ParamStore<T>, gamma: &[T], z_id: &[T]) -> Result<(Vec<T>, MlpTape<T>)> {
        let n = self.check_rows("features", gamma, self.dims.channels)?;
        self.check_code("identity code", z_id, self.dims.id_dim)?;
        self.inj.forward_cond(store, gamma, n, z_id)
    }

    /// Returns `(d_gamma, d_z_id)`.
    pub fn inject_identity_backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        tape: &MlpTape<T>,
        d_h: &[T],
    ) -> Result<(Vec<T>, Vec<T>)> {
        let g = self.inj.backward(store, tape, d_h)?;
        Ok((g.rows, g.shared))
    }

    /// `X_can = X_0 + f_id(H) + f_exp(H, z_exp)`, with both offsets exposed.
    pub fn deform_canonical<T: Real>(
        &self,
        store: &ParamStore<T>,
        x0: &[T],
        h: &[T],
        z_exp: &[T],
    ) -> Result<(Deformation<T>, DeformTape<T>)> {
        let n = self.check_rows("features", h, self.dims.channels)?;
        self.check_code("expression code", z_exp, self.dims.exp_dim)?;
        if x0.len() != n * 3 {
            return Err(Error::shape("base positions", n * 3, x0.len()));
        }
        let (delta_id, id) = self.id.forward(store, h, n)?;
        let (delta_exp, exp) = self.exp.forward_cond(store, h, n, z_exp)?;
        let x_can = x0
            .iter()
            .zip(&delta_id)
            .zip(&delta_exp)
            .map(|((&x, &a), &b)| x + a + b)
            .collect();
        Ok((
            Deformation {
                x_can,
                delta_id,
                delta_exp,
            },
            DeformTape { id, exp },
        ))
    }

    /// Gradients on the two offsets in, `(d_h, d_z_exp)` out. The gradient on
    /// `X_0` is the caller's `d_x_can` unchanged.
    pub fn deform_canonical_backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        tape: &DeformTape<T>,
        d_delta_id: &[T],
        d_delta_exp: &[T],
    ) -> Result<(Vec<T>, Vec<T>)> {
        let gi = self.id.backward(store, &tape.id, d_delta_id)?;
        let ge = self.exp.backward(store, &tape.exp, d_delta_exp)?;
        let d_h = gi.rows.iter().zip(&ge.rows).map(|(&a, &b)| a + b).collect();
        Ok((d_h, ge.shared))
    }

    /// `C = f_col(H, z_exp)`.
    pub fn compute_color<T: Real>(&self, store: &ParamStore<T>, h: &[T], z_exp: &[T]) -> Result<(Vec<T>, MlpTape<T>)> {
        let n = self.check_rows("features", h, self.dims.channels)?;
        self.check_code("expression code", z_exp, self.dims.exp_dim)?;
        self.col.forward_cond(store, h, n, z_exp)
    }

    /// Returns `(d_h, d_z_exp)`.
    pub fn compute_color_backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        tape: &MlpTape<T>,
        d_c: &[T],
    ) -> Result<(Vec<T>, Vec<T>)> {
        let g = self.col.backward(store, tape, d_c)?;
        Ok((g.rows, g.shared))
    }
}

pub struct Deformation<T> {
    pub x_can: Vec<T>,
    pub delta_id: Vec<T>,
    pub delta_exp: Vec<T>,
}

pub struct DeformTape<T> {
    id: MlpTape<T>,
    exp: MlpTape<T>,
}

/// Mean Gaussian attributes in pre-activation space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttributeMeans<T> {
    pub log_scale: [T; 3],
    pub rot: [T; 4],
    pub opacity: T,
}

pub struct Attributes<T> {
    pub log_scale: Vec<T>,
    pub rot: Vec<T>,
    pub opacity: Vec<T>,
}

pub struct AttributeTape<T> {
    mlp: MlpTape<T>,
    raw_rot: Vec<T>,
}

/// `f_att`: offsets of log-scale (3), quaternion (4) and opacity logit (1)
/// around the global means.
#[derive(Clone, Debug)]
pub struct AttributeNet {
    pub dims: ModelDims,
    pub att: Mlp,
}

impl AttributeNet {
    pub const PREFIX: &'static str = "f_att";

    pub fn spec(d: ModelDims) -> MlpSpec {
        MlpSpec::new(d.channels + d.exp_dim, &[64], 8)
    }

    pub fn register<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, dims: ModelDims, rng: &mut R) -> Result<Self> {
        Ok(AttributeNet {
            dims,
            att: Mlp::register(store, Self::PREFIX, Self::spec(dims), MlpInit::ZeroFinal, rng)?,
        })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, dims: ModelDims) -> Result<Self> {
        Ok(AttributeNet {
            dims,
            att: Mlp::bind(store, Self::PREFIX, Self::spec(dims))?,
        })
    }

    pub fn compute_attributes<T: Real>(
        &self,
        store: &ParamStore<T>,
        h: &[T],
        z_exp: &[T],
        means: &AttributeMeans<T>,
    ) -> Result<(Attributes<T>, AttributeTape<T>)> {
        let f = self.dims.channels;
        if h.len() % f != 0 {
            return Err(Error::shape("attribute features", f, h.len()));
        }
        if z_exp.len() != self.dims.exp_dim {
            return Err(Error::shape("expression code", self.dims.exp_dim, z_exp.len()));
        }
        let n = h.len() / f;
        let (off, mlp) = self.att.forward_cond(store, h, n, z_exp)?;
        let mut out = Attributes {
            log_scale: Vec::with_capacity(n * 3),
            rot: Vec::with_capacity(n * 4),
            opacity: Vec::with_capacity(n),
        };
        let mut raw_rot = Vec::with_capacity(n * 4);
        for o in off.chunks_exact(8) {
            out.log_scale.extend((0..3).map(|i| means.log_scale[i] + o[i]));
            let q = [0, 1, 2, 3].map(|i| means.rot[i] + o[3 + i]);
            raw_rot.extend_from_slice(&q);
            out.rot.extend_from_slice(&quat_normalize(&q));
            out.opacity.push(means.opacity + o[7]);
        }
        Ok((out, AttributeTape { mlp, raw_rot }))
    }

    /// Returns `(d_h, d_z_exp, d_means)`.
    pub fn compute_attributes_backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        tape: &AttributeTape<T>,
        d_log_scale: &[T],
        d_rot: &[T],
        d_opacity: &[T],
    ) -> Result<(Vec<T>, Vec<T>, AttributeMeans<T>)> {
        let n = tape.raw_rot.len() / 4;
        if d_log_scale.len() != n * 3 || d_rot.len() != n * 4 || d_opacity.len() != n {
            return Err(Error::shape("attribute gradients", n * 8, d_log_scale.len() + d_rot.len() + d_opacity.len()));
        }
        let zero = T::zero();
        let mut d_means = AttributeMeans {
            log_scale: [zero; 3],
            rot: [zero; 4],
            opacity: zero,
        };
        let mut d_off = Vec::with_capacity(n * 8);
        for i in 0..n {
            let ds = &d_log_scale[i * 3..i * 3 + 3];
            let raw = [0, 1, 2, 3].map(|k| tape.raw_rot[i * 4 + k]);
            let g = [0, 1, 2, 3].map(|k| d_rot[i * 4 + k]);
            let dq = quat_normalize_backward(&raw, &g);
            d_off.extend_from_slice(ds);
            d_off.extend_from_slice(&dq);
            d_off.push(d_opacity[i]);
            (0..3).for_each(|k| d_means.log_scale[k] += ds[k]);
            (0..4).for_each(|k| d_means.rot[k] += dq[k]);
            d_means.opacity += d_opacity[i];
        }
        let g = self.att.backward(store, &tape.mlp, &d_off)?;
        Ok((g.rows, g.shared, d_means))
    }
}
