use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::real::{silu, silu_grad, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// `x * sigmoid(x)`
    Silu,
    Tanh,
    None,
}

impl Activation {
    #[inline(always)]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Silu => silu(x),
            Activation::Tanh => x.tanh(),
            Activation::None => x,
        }
    }

    #[inline(always)]
    fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Silu => silu_grad(x),
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Activation::None => T::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    pub final_activation: Activation,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        MlpSpec {
            input,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::Silu,
            final_activation: Activation::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Invalid(format!("MLP widths must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input];
        widths.extend(&self.hidden);
        widths.push(self.output);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlpInit {
    /// He-uniform weights, zero biases.
    Random,
    /// He-uniform hidden layers, zero final layer: the network starts at output 0.
    ZeroFinal,
}

/// A fully connected network whose weights live in a [`ParamStore`] under
/// `{prefix}.l{k}.w` (`fan_in x fan_out`, row-major) and `{prefix}.l{k}.b`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub prefix: String,
    layers: Vec<(ParamId, ParamId)>,
}

pub struct MlpTape<T> {
    rows: usize,
    row_width: usize,
    input: Vec<T>,
    shared: Vec<T>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<T>>,
    /// Post-activations of every hidden layer.
    post: Vec<Vec<T>>,
    versions: Vec<(ParamId, u64)>,
}

pub struct MlpInputGrads<T> {
    pub rows: Vec<T>,
    pub shared: Vec<T>,
}

impl Mlp {
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: MlpSpec,
        init: MlpInit,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let mut layers = Vec::with_capacity(dims.len());
        for (k, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let last = k + 1 == dims.len();
            let bound = (6.0 / fan_in as f64).sqrt();
            let w: Vec<T> = if last && init == MlpInit::ZeroFinal {
                vec![T::zero(); fan_in * fan_out]
            } else {
                (0..fan_in * fan_out).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
            };
            let wid = store.insert(&format!("{prefix}.l{k}.w"), &[fan_in, fan_out], w)?;
            let bid = store.insert_zeros(&format!("{prefix}.l{k}.b"), &[fan_out])?;
            layers.push((wid, bid));
        }
        Ok(Mlp {
            spec,
            prefix: prefix.to_string(),
            layers,
        })
    }

    /// Binds to already-registered parameters (e.g. after loading a checkpoint).
    pub fn bind<T: Real>(store: &ParamStore<T>, prefix: &str, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        for (k, &(fan_in, fan_out)) in spec.layer_dims().iter().enumerate() {
            let wid = store.id(&format!("{prefix}.l{k}.w"))?;
            let bid = store.id(&format!("{prefix}.l{k}.b"))?;
            if store.shape(wid) != [fan_in, fan_out] || store.shape(bid) != [fan_out] {
                return Err(Error::shape(
                    format!("{prefix} layer {k}"),
                    format!("[{fan_in}, {fan_out}]"),
                    format!("{:?}", store.shape(wid)),
                ));
            }
            layers.push((wid, bid));
        }
        Ok(Mlp {
            spec,
            prefix: prefix.to_string(),
            layers,
        })
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn last_layer(&self) -> (ParamId, ParamId) {
        *self.layers.last().expect("validated spec has >= 1 layer")
    }

    /// Plain batched forward: `input` is `rows x spec.input`.
    pub fn forward<T: Real>(&self, store: &ParamStore<T>, input: &[T], rows: usize) -> Result<(Vec<T>, MlpTape<T>)> {
        self.forward_cond(store, input, rows, &[])
    }

    /// Forward where every row is the concatenation `[input_row, shared]`; the
    /// shared block is projected once instead of once per row.
    pub fn forward_cond<T: Real>(
        &self,
        store: &ParamStore<T>,
        input: &[T],
        rows: usize,
        shared: &[T],
    ) -> Result<(Vec<T>, MlpTape<T>)> {
        let row_width = self
            .spec
            .input
            .checked_sub(shared.len())
            .ok_or_else(|| Error::shape(format!("{} layer 0 shared input", self.prefix), self.spec.input, shared.len()))?;
        if input.len() != rows * row_width {
            return Err(Error::shape(
                format!("{} layer 0 input", self.prefix),
                format!("{rows} x {row_width}"),
                input.len(),
            ));
        }
        let n_layers = self.layers.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post: Vec<Vec<T>> = Vec::with_capacity(n_layers.saturating_sub(1));
        for (k, &(wid, bid)) in self.layers.iter().enumerate() {
            let w = store.value(wid);
            let b = store.value(bid);
            let (fan_in, fan_out) = (store.shape(wid)[0], store.shape(wid)[1]);
            let mut z = vec![T::zero(); rows * fan_out];
            if k == 0 {
                // Bias plus the projected shared block, identical for every row.
                let mut base = b.to_vec();
                for (s_idx, &s) in shared.iter().enumerate() {
                    let wrow = &w[(row_width + s_idx) * fan_out..(row_width + s_idx + 1) * fan_out];
                    for (o, &wv) in base.iter_mut().zip(wrow) {
                        *o += s * wv;
                    }
                }
                for zr in z.chunks_exact_mut(fan_out) {
                    zr.copy_from_slice(&base);
                }
                matmul_acc(input, rows, row_width, &w[..row_width * fan_out], fan_out, &mut z);
            } else {
                debug_assert_eq!(fan_in, post[k - 1].len() / rows.max(1));
                for zr in z.chunks_exact_mut(fan_out) {
                    zr.copy_from_slice(b);
                }
                matmul_acc(&post[k - 1], rows, fan_in, w, fan_out, &mut z);
            }
            let act = if k + 1 == n_layers {
                self.spec.final_activation
            } else {
                self.spec.activation
            };
            if k + 1 < n_layers {
                post.push(z.iter().map(|&v| act.apply(v)).collect());
            }
            pre.push(z);
        }
        let last = pre.last().expect("at least one layer");
        let out: Vec<T> = last.iter().map(|&v| self.spec.final_activation.apply(v)).collect();
        let versions = self.param_ids().map(|id| (id, store.version(id))).collect();
        Ok((
            out,
            MlpTape {
                rows,
                row_width,
                input: input.to_vec(),
                shared: shared.to_vec(),
                pre,
                post,
                versions,
            },
        ))
    }

    /// Reverse pass. Parameter gradients are accumulated into the store for
    /// trainable entries only; input gradients are returned.
    pub fn backward<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        tape: &MlpTape<T>,
        d_out: &[T],
    ) -> Result<MlpInputGrads<T>> {
        self.backward_impl(store, tape, d_out, true)
    }

    /// As [`Mlp::backward`] but skips the per-row input gradient.
    pub fn backward_params_only<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        tape: &MlpTape<T>,
        d_out: &[T],
    ) -> Result<MlpInputGrads<T>> {
        self.backward_impl(store, tape, d_out, false)
    }

    fn backward_impl<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        tape: &MlpTape<T>,
        d_out: &[T],
        need_rows: bool,
    ) -> Result<MlpInputGrads<T>> {
        store.check_versions(&tape.versions)?;
        let rows = tape.rows;
        if d_out.len() != rows * self.spec.output {
            return Err(Error::shape(
                format!("{} output gradient", self.prefix),
                rows * self.spec.output,
                d_out.len(),
            ));
        }
        let n_layers = self.layers.len();
        let mut d_h = d_out.to_vec();
        let mut d_rows = Vec::new();
        let mut d_shared = vec![T::zero(); tape.shared.len()];
        for k in (0..n_layers).rev() {
            let (wid, bid) = self.layers[k];
            let (fan_in, fan_out) = (store.shape(wid)[0], store.shape(wid)[1]);
            let act = if k + 1 == n_layers {
                self.spec.final_activation
            } else {
                self.spec.activation
            };
            // dZ = dH * act'(Z)
            let mut d_z = d_h;
            if act != Activation::None {
                for (g, &z) in d_z.iter_mut().zip(&tape.pre[k]) {
                    *g *= act.derivative(z);
                }
            }
            let (input, in_width): (&[T], usize) = if k == 0 {
                (&tape.input, tape.row_width)
            } else {
                (&tape.post[k - 1], fan_in)
            };
            let w = store.value(wid).to_vec();
            if store.is_trainable(wid) {
                let gw = store.grad_mut(wid);
                for (x_row, dz_row) in input.chunks_exact(in_width.max(1)).zip(d_z.chunks_exact(fan_out)) {
                    if in_width == 0 {
                        break;
                    }
                    for (kk, &x) in x_row.iter().enumerate() {
                        let g_row = &mut gw[kk * fan_out..(kk + 1) * fan_out];
                        for (g, &dz) in g_row.iter_mut().zip(dz_row) {
                            *g += x * dz;
                        }
                    }
                }
            }
            let needs_colsum = store.is_trainable(bid) || (k == 0 && !tape.shared.is_empty());
            if needs_colsum {
                let mut colsum = vec![T::zero(); fan_out];
                for dz_row in d_z.chunks_exact(fan_out) {
                    for (c, &dz) in colsum.iter_mut().zip(dz_row) {
                        *c += dz;
                    }
                }
                if store.is_trainable(bid) {
                    for (g, &c) in store.grad_mut(bid).iter_mut().zip(&colsum) {
                        *g += c;
                    }
                }
                if k == 0 {
                    for (s_idx, ds) in d_shared.iter_mut().enumerate() {
                        let wrow = &w[(tape.row_width + s_idx) * fan_out..(tape.row_width + s_idx + 1) * fan_out];
                        *ds = wrow.iter().zip(&colsum).map(|(&a, &b)| a * b).sum();
                    }
                    if store.is_trainable(wid) {
                        let gw = store.grad_mut(wid);
                        for (s_idx, &s) in tape.shared.iter().enumerate() {
                            let g_row = &mut gw[(tape.row_width + s_idx) * fan_out..(tape.row_width + s_idx + 1) * fan_out];
                            for (g, &c) in g_row.iter_mut().zip(&colsum) {
                                *g += s * c;
                            }
                        }
                    }
                }
            }
            if k == 0 && !need_rows {
                break;
            }
            // dX = dZ * Wᵀ restricted to the per-row block.
            let mut d_x = vec![T::zero(); rows * in_width];
            if in_width > 0 {
                for (dx_row, dz_row) in d_x.chunks_exact_mut(in_width).zip(d_z.chunks_exact(fan_out)) {
                    for (kk, dx) in dx_row.iter_mut().enumerate() {
                        let wrow = &w[kk * fan_out..(kk + 1) * fan_out];
                        *dx = wrow.iter().zip(dz_row).map(|(&a, &b)| a * b).sum();
                    }
                }
            }
            if k == 0 {
                d_rows = d_x;
                break;
            }
            d_h = d_x;
        }
        Ok(MlpInputGrads {
            rows: d_rows,
            shared: d_shared,
        })
    }
}

/// `out[n x m] += x[n x k] * w[k x m]`
fn matmul_acc<T: Real>(x: &[T], n: usize, k: usize, w: &[T], m: usize, out: &mut [T]) {
    if k == 0 || m == 0 {
        return;
    }
    for (x_row, o_row) in x.chunks_exact(k).zip(out.chunks_exact_mut(m)).take(n) {
        for (kk, &a) in x_row.iter().enumerate() {
            let w_row = &w[kk * m..(kk + 1) * m];
            for (o, &wv) in o_row.iter_mut().zip(w_row) {
                *o += a * wv;
            }
        }
    }
}
