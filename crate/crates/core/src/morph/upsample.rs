use crate::diff::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::real::{silu, silu_grad, Real};
use crate::splat::FeatureImage;

/// `Psi`: nearest 2x upsample, 3x3 conv `F -> F` with SiLU, 3x3 conv `F -> 3`,
/// plus a bypass of the first three upsampled channels. The second conv starts
/// at zero, so an untrained `Psi` returns the upsampled leading channels.
#[derive(Clone, Debug)]
pub struct Upsampler {
    pub channels: usize,
    conv1: (ParamId, ParamId),
    conv2: (ParamId, ParamId),
}

pub struct UpsampleTape<T> {
    up: FeatureImage<T>,
    z1: Vec<T>,
    a1: Vec<T>,
    versions: Vec<(ParamId, u64)>,
}

impl Upsampler {
    pub const PREFIX: &'static str = "psi";

    pub fn register<T: Real>(store: &mut ParamStore<T>, channels: usize) -> Result<Self> {
        if channels < 3 {
            return Err(Error::Invalid(format!("upsampler needs at least 3 channels, got {channels}")));
        }
        let f = channels;
        let mut w1 = vec![T::zero(); f * f * 9];
        for c in 0..f {
            w1[(c * f + c) * 9 + 4] = T::one();
        }
        let conv1 = (
            store.insert("psi.conv1.w", &[f, f, 3, 3], w1)?,
            store.insert_zeros("psi.conv1.b", &[f])?,
        );
        let conv2 = (
            store.insert_zeros("psi.conv2.w", &[3, f, 3, 3])?,
            store.insert_zeros("psi.conv2.b", &[3])?,
        );
        Ok(Upsampler { channels, conv1, conv2 })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, channels: usize) -> Result<Self> {
        let f = channels;
        let get = |name: &str, shape: &[usize]| -> Result<ParamId> {
            let id = store.id(name)?;
            if store.shape(id) != shape {
                return Err(Error::shape(name, format!("{shape:?}"), format!("{:?}", store.shape(id))));
            }
            Ok(id)
        };
        Ok(Upsampler {
            channels,
            conv1: (get("psi.conv1.w", &[f, f, 3, 3])?, get("psi.conv1.b", &[f])?),
            conv2: (get("psi.conv2.w", &[3, f, 3, 3])?, get("psi.conv2.b", &[3])?),
        })
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.conv1.0, self.conv1.1, self.conv2.0, self.conv2.1]
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, input: &FeatureImage<T>) -> Result<(FeatureImage<T>, UpsampleTape<T>)> {
        let f = self.channels;
        if input.channels != f {
            return Err(Error::shape("upsampler input channels", f, input.channels));
        }
        let up = upsample_nearest(input);
        let (w, h) = (up.width, up.height);
        let z1 = conv3x3(&up.data, w, h, f, store.value(self.conv1.0), store.value(self.conv1.1), f);
        let a1: Vec<T> = z1.iter().map(|&v| silu(v)).collect();
        let mut out = conv3x3(&a1, w, h, f, store.value(self.conv2.0), store.value(self.conv2.1), 3);
        for (o, px) in out.chunks_exact_mut(3).zip(up.data.chunks_exact(f)) {
            (0..3).for_each(|c| o[c] += px[c]);
        }
        let image = FeatureImage {
            width: w,
            height: h,
            channels: 3,
            data: out,
            alpha: up.alpha.clone(),
        };
        let versions = self.param_ids().iter().map(|&id| (id, store.version(id))).collect();
        Ok((image, UpsampleTape { up, z1, a1, versions }))
    }

    /// Accumulates conv parameter gradients; returns the gradient on the
    /// low-resolution feature image (`h x w x F`).
    pub fn backward<T: Real>(&self, store: &mut ParamStore<T>, tape: &UpsampleTape<T>, d_out: &[T]) -> Result<Vec<T>> {
        store.check_versions(&tape.versions)?;
        let f = self.channels;
        let (w, h) = (tape.up.width, tape.up.height);
        if d_out.len() != w * h * 3 {
            return Err(Error::shape("upsampler output gradient", w * h * 3, d_out.len()));
        }
        let mut d_a1 = vec![T::zero(); w * h * f];
        let (dw2, db2) = conv3x3_backward(&tape.a1, w, h, f, store.value(self.conv2.0), d_out, 3, &mut d_a1);
        let d_z1: Vec<T> = d_a1.iter().zip(&tape.z1).map(|(&g, &z)| g * silu_grad(z)).collect();
        let mut d_up = vec![T::zero(); w * h * f];
        let (dw1, db1) = conv3x3_backward(&tape.up.data, w, h, f, store.value(self.conv1.0), &d_z1, f, &mut d_up);
        for (px, g) in d_up.chunks_exact_mut(f).zip(d_out.chunks_exact(3)) {
            (0..3).for_each(|c| px[c] += g[c]);
        }
        store.accumulate(self.conv1.0, &dw1)?;
        store.accumulate(self.conv1.1, &db1)?;
        store.accumulate(self.conv2.0, &dw2)?;
        store.accumulate(self.conv2.1, &db2)?;
        // nearest upsample backward: sum each 2x2 block
        let (lw, lh) = (w / 2, h / 2);
        let mut d_in = vec![T::zero(); lw * lh * f];
        for y in 0..h {
            for x in 0..w {
                let src = &d_up[(y * w + x) * f..(y * w + x + 1) * f];
                let dst = &mut d_in[((y / 2) * lw + x / 2) * f..((y / 2) * lw + x / 2 + 1) * f];
                dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b);
            }
        }
        Ok(d_in)
    }
}

pub fn upsample_nearest<T: Real>(img: &FeatureImage<T>) -> FeatureImage<T> {
    let (w, h, c) = (img.width * 2, img.height * 2, img.channels);
    let mut out = FeatureImage::zeros(w, h, c);
    for y in 0..h {
        for x in 0..w {
            let s = (y / 2) * img.width + x / 2;
            out.data[(y * w + x) * c..(y * w + x + 1) * c].copy_from_slice(&img.data[s * c..(s + 1) * c]);
            out.alpha[y * w + x] = img.alpha[s];
        }
    }
    out
}

/// Zero-padded 3x3 convolution, weights `[out][in][ky][kx]`, images channel-last.
fn conv3x3<T: Real>(x: &[T], w: usize, h: usize, cin: usize, weight: &[T], bias: &[T], cout: usize) -> Vec<T> {
    let mut out = vec![T::zero(); w * h * cout];
    for y in 0..h {
        for xx in 0..w {
            let o = &mut out[(y * w + xx) * cout..(y * w + xx + 1) * cout];
            o.copy_from_slice(bias);
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = &x[(sy as usize * w + sx as usize) * cin..][..cin];
                    for (oc, ov) in o.iter_mut().enumerate() {
                        let wrow = &weight[oc * cin * 9..];
                        for (ic, &v) in src.iter().enumerate() {
                            *ov += wrow[ic * 9 + ky * 3 + kx] * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d_weight, d_bias)` and accumulates the input gradient into `d_x`.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<T: Real>(
    x: &[T],
    w: usize,
    h: usize,
    cin: usize,
    weight: &[T],
    d_out: &[T],
    cout: usize,
    d_x: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); cout * cin * 9];
    let mut db = vec![T::zero(); cout];
    for y in 0..h {
        for xx in 0..w {
            let g = &d_out[(y * w + xx) * cout..(y * w + xx + 1) * cout];
            db.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let base = (sy as usize * w + sx as usize) * cin;
                    for (oc, &go) in g.iter().enumerate() {
                        if go == T::zero() {
                            continue;
                        }
                        for ic in 0..cin {
                            let k = (oc * cin + ic) * 9 + ky * 3 + kx;
                            dw[k] += go * x[base + ic];
                            d_x[base + ic] += go * weight[k];
                        }
                    }
                }
            }
        }
    }
    (dw, db)
}
