use crate::error::{Error, Result};
use crate::real::Real;
use crate::splat::FeatureImage;

fn same_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(what, b, a));
    }
    Ok(())
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Mean absolute difference and its gradient w.r.t. `pred`.
pub fn photometric_l1<T: Real>(pred: &[T], gt: &[T]) -> Result<(T, Vec<T>)> {
    same_len("photometric image", pred.len(), gt.len())?;
    if pred.is_empty() {
        return Ok((T::zero(), Vec::new()));
    }
    let inv = T::lit(1.0 / pred.len() as f64);
    let loss = pred.iter().zip(gt).map(|(&a, &b)| (a - b).abs()).sum::<T>() * inv;
    let grad = pred.iter().zip(gt).map(|(&a, &b)| sign(a - b) * inv).collect();
    Ok((loss, grad))
}

pub const IOU_EPS: f64 = 1e-6;

/// `1 - soft IoU` of a soft mask against a binary one.
pub fn silhouette_loss<T: Real>(mask: &[T], gt: &[T]) -> Result<(T, Vec<T>)> {
    same_len("silhouette mask", mask.len(), gt.len())?;
    let inter: T = mask.iter().zip(gt).map(|(&m, &g)| m * g).sum();
    let (sm, sg) = (mask.iter().copied().sum::<T>(), gt.iter().copied().sum::<T>());
    if sm == T::zero() && sg == T::zero() {
        return Ok((T::zero(), vec![T::zero(); mask.len()]));
    }
    let union = sm + sg - inter + T::lit(IOU_EPS);
    let loss = T::one() - inter / union;
    let u2 = union * union;
    let grad = gt.iter().map(|&g| -(g * union - inter * (T::one() - g)) / u2).collect();
    Ok((loss, grad))
}

/// Box-filter downsampling by an integer factor; alpha is averaged too.
pub fn area_downsample<T: Real>(img: &FeatureImage<T>, factor: usize) -> Result<FeatureImage<T>> {
    if factor == 0 || img.width % factor != 0 || img.height % factor != 0 {
        return Err(Error::Invalid(format!(
            "cannot downsample {}x{} by {factor}",
            img.width, img.height
        )));
    }
    let (w, h, c) = (img.width / factor, img.height / factor, img.channels);
    let mut out = FeatureImage::zeros(w, h, c);
    let inv = T::lit(1.0 / (factor * factor) as f64);
    for y in 0..img.height {
        for x in 0..img.width {
            let (o, s) = ((y / factor) * w + x / factor, y * img.width + x);
            for k in 0..c {
                out.data[o * c + k] += img.data[s * c + k] * inv;
            }
            out.alpha[o] += img.alpha[s] * inv;
        }
    }
    Ok(out)
}

/// L1 between the first three channels of a feature image and an RGB target
/// of the same size. The gradient covers every feature channel (zero beyond 3).
pub fn lowres_rgb_loss<T: Real>(feat: &FeatureImage<T>, gt: &FeatureImage<T>) -> Result<(T, Vec<T>)> {
    if feat.channels < 3 || gt.channels != 3 || feat.width != gt.width || feat.height != gt.height {
        return Err(Error::shape(
            "low-res rgb",
            format!("{}x{}x3", feat.width, feat.height),
            format!("{}x{}x{}", gt.width, gt.height, gt.channels),
        ));
    }
    let pred = feat.leading_channels(3);
    let (loss, g3) = photometric_l1(&pred, &gt.data)?;
    let c = feat.channels;
    let mut grad = vec![T::zero(); feat.data.len()];
    for (px, g) in grad.chunks_exact_mut(c).zip(g3.chunks_exact(3)) {
        px[..3].copy_from_slice(g);
    }
    Ok((loss, grad))
}

/// Mean Euclidean distance between matching landmarks (`K x 3`).
pub fn landmark_loss<T: Real>(p: &[T], gt: &[T]) -> Result<(T, Vec<T>)> {
    same_len("landmarks", p.len(), gt.len())?;
    let k = p.len() / 3;
    if k == 0 {
        return Ok((T::zero(), Vec::new()));
    }
    let inv = T::lit(1.0 / k as f64);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); p.len()];
    for i in 0..k {
        let d = [0, 1, 2].map(|a| p[i * 3 + a] - gt[i * 3 + a]);
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        loss += n * inv;
        if n > T::zero() {
            (0..3).for_each(|a| grad[i * 3 + a] = d[a] / n * inv);
        }
    }
    Ok((loss, grad))
}

pub const REG_EPS: f64 = 1e-8;

/// `mean |delta_id| + mean |delta_exp|` over points, with gradients for both.
/// Norms below `REG_EPS` get a damped gradient so the term is smooth at zero.
pub fn displacement_reg<T: Real>(delta_id: &[T], delta_exp: &[T]) -> Result<(T, Vec<T>, Vec<T>)> {
    same_len("displacement fields", delta_exp.len(), delta_id.len())?;
    let (a, ga) = mean_norm(delta_id);
    let (b, gb) = mean_norm(delta_exp);
    Ok((a + b, ga, gb))
}

fn mean_norm<T: Real>(d: &[T]) -> (T, Vec<T>) {
    let n = d.len() / 3;
    if n == 0 {
        return (T::zero(), Vec::new());
    }
    let inv = T::lit(1.0 / n as f64);
    let eps = T::lit(REG_EPS);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); d.len()];
    for (v, g) in d.chunks_exact(3).zip(grad.chunks_exact_mut(3)) {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        loss += norm * inv;
        let den = norm.max(eps);
        (0..3).for_each(|a| g[a] = v[a] / den * inv);
    }
    (loss, grad)
}
