use crate::diff::ParamStore;
use crate::error::Result;
use crate::losses::{
    area_downsample, displacement_reg, landmark_loss, lowres_rgb_loss, photometric_l1, psnr, silhouette_loss,
    LossWeights, PerceptualBank, Term,
};
use crate::morph::{UpsampleTape, Upsampler};
use crate::real::Real;
use crate::splat::{Camera, FeatureImage};
use crate::synth::ViewSample;

/// Ground truth of one view at both resolutions.
#[derive(Clone, Debug)]
pub struct ViewTarget<T> {
    pub hr: FeatureImage<T>,
    pub lr: FeatureImage<T>,
    pub mask_lr: Vec<T>,
    pub landmarks: Vec<T>,
    pub camera_lr: Camera,
}

impl<T: Real> ViewTarget<T> {
    pub fn new(sample: &ViewSample, factor: usize) -> Result<Self> {
        Self::from_parts(&sample.image, Some(&sample.mask), &sample.landmarks, &sample.camera, factor)
    }

    /// Target from a bare RGB image; a missing mask is taken as all zeros.
    pub fn from_parts(image: &[f64], mask: Option<&[f64]>, landmarks: &[f64], camera: &Camera, factor: usize) -> Result<Self> {
        let (w, h) = (camera.width, camera.height);
        crate::error::ensure_len("target image", w * h * 3, image.len())?;
        let mut hr = FeatureImage::zeros(w, h, 3);
        hr.data = image.iter().map(|&v| T::lit(v)).collect();
        if let Some(m) = mask {
            crate::error::ensure_len("target mask", w * h, m.len())?;
            hr.alpha = m.iter().map(|&v| T::lit(v)).collect();
        }
        let lr = area_downsample(&hr, factor)?;
        let mut mask = FeatureImage::zeros(w, h, 1);
        mask.data = hr.alpha.clone();
        let mask_lr = area_downsample(&mask, factor)?.data;
        Ok(ViewTarget {
            hr,
            lr,
            mask_lr,
            landmarks: landmarks.iter().map(|&v| T::lit(v)).collect(),
            camera_lr: camera.downscaled(factor),
        })
    }
}

/// Which image terms enter the objective.
#[derive(Clone, Copy, Debug)]
pub struct ImageTermSet<'a> {
    pub silhouette: bool,
    pub lowres: bool,
    pub perceptual: Option<&'a PerceptualBank>,
}

pub struct ImageEval<T> {
    pub hr: FeatureImage<T>,
    pub tape: UpsampleTape<T>,
    pub terms: Vec<(Term, f64)>,
    pub psnr: f64,
}

/// `Psi` and the image terms, forward only.
pub fn image_forward<T: Real>(
    psi: &Upsampler,
    store: &ParamStore<T>,
    feat: &FeatureImage<T>,
    target: &ViewTarget<T>,
    set: ImageTermSet<'_>,
) -> Result<ImageEval<T>> {
    let (hr, tape) = psi.forward(store, feat)?;
    let mut terms = vec![(Term::Hr, photometric_l1(&hr.data, &target.hr.data)?.0.to_f64_lossy())];
    if set.silhouette {
        terms.push((Term::Sil, silhouette_loss(&feat.alpha, &target.mask_lr)?.0.to_f64_lossy()));
    }
    if set.lowres {
        terms.push((Term::Lr, lowres_rgb_loss(feat, &target.lr)?.0.to_f64_lossy()));
    }
    if let Some(bank) = set.perceptual {
        terms.push((Term::Vgg, bank.loss(&hr.data, &target.hr.data, hr.width, hr.height)?.0.to_f64_lossy()));
    }
    let psnr = psnr(&hr.data, &target.hr.data)?;
    Ok(ImageEval { hr, tape, terms, psnr })
}

/// Gradients of `scale * sum(weight * term)` on the rendered feature image and
/// its alpha. `Psi` parameter gradients are accumulated into `store`.
pub fn image_backward<T: Real>(
    psi: &Upsampler,
    store: &mut ParamStore<T>,
    feat: &FeatureImage<T>,
    eval: &ImageEval<T>,
    target: &ViewTarget<T>,
    set: ImageTermSet<'_>,
    weights: &LossWeights,
    scale: f64,
) -> Result<(Vec<T>, Option<Vec<T>>)> {
    let s = T::lit(scale);
    let mut d_hr = photometric_l1(&eval.hr.data, &target.hr.data)?.1;
    d_hr.iter_mut().for_each(|g| *g *= s);
    if let Some(bank) = set.perceptual {
        let w = T::lit(scale * weights.vgg);
        let g = bank.loss(&eval.hr.data, &target.hr.data, eval.hr.width, eval.hr.height)?.1;
        d_hr.iter_mut().zip(&g).for_each(|(a, &b)| *a += w * b);
    }
    let mut d_feat = psi.backward(store, &eval.tape, &d_hr)?;
    if set.lowres {
        let w = T::lit(scale * weights.lr);
        let g = lowres_rgb_loss(feat, &target.lr)?.1;
        d_feat.iter_mut().zip(&g).for_each(|(a, &b)| *a += w * b);
    }
    let d_alpha = if set.silhouette {
        let w = T::lit(scale * weights.sil);
        let g = silhouette_loss(&feat.alpha, &target.mask_lr)?.1;
        Some(g.into_iter().map(|v| v * w).collect())
    } else {
        None
    };
    Ok((d_feat, d_alpha))
}

/// Landmark term and its gradient scaled by `scale * weight`.
pub fn landmark_term<T: Real>(pred: &[T], gt: &[T], weights: &LossWeights, scale: f64) -> Result<(f64, Vec<T>)> {
    let (l, g) = landmark_loss(pred, gt)?;
    let w = T::lit(scale * weights.lmk);
    Ok((l.to_f64_lossy(), g.into_iter().map(|v| v * w).collect()))
}

/// Displacement regularizer and its scaled gradients.
pub fn reg_term<T: Real>(
    delta_id: &[T],
    delta_exp: &[T],
    weights: &LossWeights,
    scale: f64,
) -> Result<(f64, Vec<T>, Vec<T>)> {
    let (l, gi, ge) = displacement_reg(delta_id, delta_exp)?;
    let w = T::lit(scale * weights.reg);
    let sc = |g: Vec<T>| g.into_iter().map(|v| v * w).collect::<Vec<T>>();
    Ok((l.to_f64_lossy(), sc(gi), sc(ge)))
}
