use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::real::{silu, silu_grad, Real};

const WIDTHS: [usize; 4] = [3, 8, 16, 16];

/// Stand-in for a pretrained perceptual network: three fixed, seeded 3x3
/// stride-2 convolutions with SiLU. Never trained.
#[derive(Clone, Debug)]
pub struct PerceptualBank {
    pub seed: u64,
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

struct Activations<T> {
    /// Per layer: input dims, pre-activations, post-activations.
    dims: Vec<(usize, usize)>,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
}

impl PerceptualBank {
    pub const DEFAULT_SEED: u64 = 0x5eed_babe;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = WIDTHS
            .windows(2)
            .map(|w| {
                let (cin, cout) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / (9 * cin) as f64).sqrt()).expect("std");
                let weight = (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect();
                let bias = (0..cout).map(|_| normal.sample(&mut rng) * 0.1).collect();
                (weight, bias)
            })
            .collect();
        PerceptualBank { seed, layers }
    }

    fn features<T: Real>(&self, img: &[T], w: usize, h: usize) -> Activations<T> {
        let mut act = Activations {
            dims: Vec::new(),
            pre: Vec::new(),
            post: Vec::new(),
        };
        let (mut cw, mut ch) = (w, h);
        let mut x: Vec<T> = img.to_vec();
        for (l, (wt, b)) in self.layers.iter().enumerate() {
            let (cin, cout) = (WIDTHS[l], WIDTHS[l + 1]);
            let (ow, oh) = (cw.div_ceil(2), ch.div_ceil(2));
            let mut z = vec![T::zero(); ow * oh * cout];
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = &mut z[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
                    o.iter_mut().zip(b).for_each(|(v, &bb)| *v = T::lit(bb));
                    for ky in 0..3 {
                        let sy = (oy * 2 + ky) as isize - 1;
                        if sy < 0 || sy >= ch as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = (ox * 2 + kx) as isize - 1;
                            if sx < 0 || sx >= cw as isize {
                                continue;
                            }
                            let src = &x[(sy as usize * cw + sx as usize) * cin..][..cin];
                            for (oc, ov) in o.iter_mut().enumerate() {
                                for (ic, &v) in src.iter().enumerate() {
                                    *ov += T::lit(wt[(oc * cin + ic) * 9 + ky * 3 + kx]) * v;
                                }
                            }
                        }
                    }
                }
            }
            let post: Vec<T> = z.iter().map(|&v| silu(v)).collect();
            act.dims.push((cw, ch));
            act.pre.push(z);
            x = post.clone();
            act.post.push(post);
            cw = ow;
            ch = oh;
        }
        act
    }

    /// Sum over layers of the mean absolute feature difference, and its
    /// gradient w.r.t. `pred` (RGB, `h x w x 3`).
    pub fn loss<T: Real>(&self, pred: &[T], gt: &[T], w: usize, h: usize) -> Result<(T, Vec<T>)> {
        if pred.len() != w * h * 3 || gt.len() != pred.len() {
            return Err(Error::shape("perceptual images", w * h * 3, pred.len().max(gt.len())));
        }
        let a = self.features(pred, w, h);
        let b = self.features(gt, w, h);
        let mut loss = T::zero();
        let n_layers = self.layers.len();
        let mut d_post: Vec<Vec<T>> = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let inv = T::lit(1.0 / a.post[l].len() as f64);
            loss += a.post[l].iter().zip(&b.post[l]).map(|(&x, &y)| (x - y).abs()).sum::<T>() * inv;
            d_post.push(
                a.post[l]
                    .iter()
                    .zip(&b.post[l])
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d > T::zero() {
                            inv
                        } else if d < T::zero() {
                            -inv
                        } else {
                            T::zero()
                        }
                    })
                    .collect(),
            );
        }
        // reverse through the layers; each layer's output gradient also
        // receives what flows back from the layer above
        let mut carry: Vec<T> = vec![T::zero(); a.post[n_layers - 1].len()];
        for l in (0..n_layers).rev() {
            let (cin, cout) = (WIDTHS[l], WIDTHS[l + 1]);
            let (cw, ch) = a.dims[l];
            let (ow, oh) = (cw.div_ceil(2), ch.div_ceil(2));
            let dz: Vec<T> = d_post[l]
                .iter()
                .zip(&carry)
                .zip(&a.pre[l])
                .map(|((&g, &c), &z)| (g + c) * silu_grad(z))
                .collect();
            let wt = &self.layers[l].0;
            let mut dx = vec![T::zero(); cw * ch * cin];
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = &dz[(oy * ow + ox) * cout..(oy * ow + ox + 1) * cout];
                    for ky in 0..3 {
                        let sy = (oy * 2 + ky) as isize - 1;
                        if sy < 0 || sy >= ch as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = (ox * 2 + kx) as isize - 1;
                            if sx < 0 || sx >= cw as isize {
                                continue;
                            }
                            let base = (sy as usize * cw + sx as usize) * cin;
                            for (oc, &go) in g.iter().enumerate() {
                                for ic in 0..cin {
                                    dx[base + ic] += go * T::lit(wt[(oc * cin + ic) * 9 + ky * 3 + kx]);
                                }
                            }
                        }
                    }
                }
            }
            carry = dx;
        }
        Ok((loss, carry))
    }
}

impl Default for PerceptualBank {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED)
    }
}
