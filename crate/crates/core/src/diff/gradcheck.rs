use std::fmt;

use crate::diff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::real::Real;

/// Settings for a central finite-difference check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub h: f64,
    pub tolerance: f64,
    /// Entries probed per block; larger blocks are sampled with a fixed stride.
    pub max_entries: usize,
    /// Blocks to probe; `None` means every trainable block.
    pub blocks: Option<Vec<String>>,
    /// Entries whose gradients are below `relative_floor * max|grad|` of their
    /// block are compared against that floor instead of their own magnitude.
    pub relative_floor: f64,
    /// Use the fourth-order five-point stencil instead of the plain central
    /// difference. Costs twice the evaluations.
    pub five_point: bool,
}

impl GradCheck {
    pub fn f64_default() -> Self {
        GradCheck {
            h: 1e-5,
            tolerance: 1e-6,
            max_entries: 64,
            blocks: None,
            relative_floor: 1e-3,
            five_point: false,
        }
    }

    /// For [`finite_diff_check_mixed`] with an `f32` analytic side and an
    /// `f64` reference.
    pub fn f32_default() -> Self {
        GradCheck {
            h: 1e-6,
            tolerance: 1e-3,
            max_entries: 32,
            blocks: None,
            relative_floor: 1e-3,
            five_point: false,
        }
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn five_point(mut self) -> Self {
        self.five_point = true;
        self
    }

    pub fn with_max_entries(mut self, n: usize) -> Self {
        self.max_entries = n;
        self
    }

    pub fn only(mut self, blocks: &[&str]) -> Self {
        self.blocks = Some(blocks.iter().map(|s| s.to_string()).collect());
        self
    }
}

#[derive(Clone, Debug)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub probed: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_err < self.tolerance)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradient check (tolerance {:e}):", self.tolerance)?;
        for b in &self.blocks {
            writeln!(
                f,
                "  {:<24} rel err {:.3e} at [{}] (analytic {:.6e}, numeric {:.6e}, {} probed)",
                b.name, b.max_rel_err, b.worst_entry, b.analytic, b.numeric, b.probed
            )?;
        }
        Ok(())
    }
}

fn probe_indices(len: usize, max_entries: usize) -> Vec<usize> {
    if len <= max_entries {
        return (0..len).collect();
    }
    let stride = len as f64 / max_entries as f64;
    (0..max_entries).map(|k| ((k as f64 + 0.5) * stride) as usize).collect()
}

/// Compares the gradients accumulated by `loss` against central differences.
///
/// `loss` must evaluate the objective at the store's current values and
/// accumulate its analytic gradient into the store. It is first run twice at
/// the base point; differing results are reported as non-determinism.
pub fn finite_diff_check<T, F>(store: &mut ParamStore<T>, cfg: &GradCheck, mut loss: F) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&mut ParamStore<T>) -> Result<T>,
{
    let (selected, analytic) = analytic_gradients(store, cfg, &mut loss)?;
    let mut numeric = Vec::with_capacity(selected.len());
    for (&id, grads) in selected.iter().zip(&analytic) {
        let indices = probe_indices(grads.len(), cfg.max_entries);
        numeric.push(central_differences(store, id, &indices, cfg, &mut loss)?);
    }
    store.zero_grads();
    Ok(compare(store, cfg, &selected, &analytic, &numeric))
}

/// Like [`finite_diff_check`], but the reference differences are taken with a
/// second, higher-precision instantiation of the same objective. This measures
/// the accuracy of a low-precision backward pass without drowning it in the
/// roundoff of low-precision differencing.
pub fn finite_diff_check_mixed<T, U, F, G>(
    store: &mut ParamStore<T>,
    cfg: &GradCheck,
    mut loss: F,
    mut reference: G,
) -> Result<GradCheckReport>
where
    T: Real,
    U: Real,
    F: FnMut(&mut ParamStore<T>) -> Result<T>,
    G: FnMut(&mut ParamStore<U>) -> Result<U>,
{
    let (selected, analytic) = analytic_gradients(store, cfg, &mut loss)?;
    let mut wide = store.cast::<U>();
    let mut numeric = Vec::with_capacity(selected.len());
    for (&id, grads) in selected.iter().zip(&analytic) {
        let indices = probe_indices(grads.len(), cfg.max_entries);
        numeric.push(central_differences(&mut wide, id, &indices, cfg, &mut reference)?);
    }
    store.zero_grads();
    Ok(compare(store, cfg, &selected, &analytic, &numeric))
}

type Analytic<T> = (Vec<ParamId>, Vec<Vec<T>>);

fn analytic_gradients<T, F>(store: &mut ParamStore<T>, cfg: &GradCheck, loss: &mut F) -> Result<Analytic<T>>
where
    T: Real,
    F: FnMut(&mut ParamStore<T>) -> Result<T>,
{
    let selected: Vec<ParamId> = match &cfg.blocks {
        Some(names) => names.iter().map(|n| store.id(n)).collect::<Result<_>>()?,
        None => store.ids().filter(|&id| store.is_trainable(id)).collect(),
    };
    store.zero_grads();
    let base = loss(store)?;
    let analytic: Vec<Vec<T>> = selected.iter().map(|&id| store.grad(id).to_vec()).collect();
    store.zero_grads();
    let again = loss(store)?;
    if base.bits() != again.bits() {
        return Err(Error::NonDeterministic {
            first: base.to_f64_lossy(),
            second: again.to_f64_lossy(),
        });
    }
    Ok((selected, analytic))
}

fn central_differences<U, G>(store: &mut ParamStore<U>, id: ParamId, indices: &[usize], cfg: &GradCheck, loss: &mut G) -> Result<Vec<f64>>
where
    U: Real,
    G: FnMut(&mut ParamStore<U>) -> Result<U>,
{
    let mut numeric = Vec::with_capacity(indices.len());
    for &i in indices {
        let d1 = difference(store, id, i, cfg.h, loss)?;
        numeric.push(if cfg.five_point {
            let d2 = difference(store, id, i, 2.0 * cfg.h, loss)?;
            (4.0 * d1 - d2) / 3.0
        } else {
            d1
        });
    }
    Ok(numeric)
}

fn difference<U, G>(store: &mut ParamStore<U>, id: ParamId, i: usize, h: f64, loss: &mut G) -> Result<f64>
where
    U: Real,
    G: FnMut(&mut ParamStore<U>) -> Result<U>,
{
    let h = U::lit(h);
    let orig = store.value(id)[i];
    store.value_mut(id)[i] = orig + h;
    store.zero_grads();
    let plus = loss(store)?;
    store.value_mut(id)[i] = orig - h;
    store.zero_grads();
    let minus = loss(store)?;
    store.value_mut(id)[i] = orig;
    // Divide by the realized step, not the nominal one, to cancel representation error.
    let step = ((orig + h) - (orig - h)).to_f64_lossy();
    Ok((plus.to_f64_lossy() - minus.to_f64_lossy()) / step)
}

fn compare<T: Real>(
    store: &ParamStore<T>,
    cfg: &GradCheck,
    selected: &[ParamId],
    analytic: &[Vec<T>],
    numeric: &[Vec<f64>],
) -> GradCheckReport {
    let mut blocks = Vec::with_capacity(selected.len());
    for ((&id, grads), numeric) in selected.iter().zip(analytic).zip(numeric) {
        let indices = probe_indices(grads.len(), cfg.max_entries);
        let scale = indices
            .iter()
            .zip(numeric)
            .map(|(&i, &n)| n.abs().max(grads[i].to_f64_lossy().abs()))
            .fold(0.0f64, f64::max);
        let floor = (cfg.relative_floor * scale).max(1e-12);
        let mut report = BlockReport {
            name: store.name(id).to_string(),
            max_rel_err: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
            probed: indices.len(),
        };
        for (&i, &n) in indices.iter().zip(numeric) {
            let a = grads[i].to_f64_lossy();
            let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            if err > report.max_rel_err || !err.is_finite() {
                report.max_rel_err = if err.is_finite() { err } else { f64::INFINITY };
                report.worst_entry = i;
                report.analytic = a;
                report.numeric = n;
            }
        }
        blocks.push(report);
    }
    GradCheckReport {
        tolerance: cfg.tolerance,
        blocks,
    }
}
