use super::mtet::GuideMesh;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::splat::{rasterize, rasterize_backward, Camera, FeatureImage, RasterTape, SplatSet};

/// Fixed look of the vertex splats used to render a guide mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuideSplatStyle {
    pub log_scale: f64,
    pub opacity_logit: f64,
}

impl GuideSplatStyle {
    pub const OPACITY_LOGIT: f64 = 6.0;

    /// Isotropic splats of half the mean edge length. The style is held
    /// fixed while rendering; it is not differentiated.
    pub fn for_mesh<T: Real>(mesh: &GuideMesh<T>) -> Self {
        let half = 0.5 * mesh.mean_edge_length();
        GuideSplatStyle {
            log_scale: if half > 0.0 { half.ln() } else { -5.0 },
            opacity_logit: Self::OPACITY_LOGIT,
        }
    }
}

pub fn guide_splats<T: Real>(vertices: &[T], colors: &[T], channels: usize, style: GuideSplatStyle) -> Result<SplatSet<T>> {
    let n = vertices.len() / 3;
    if vertices.len() != n * 3 || colors.len() != n * channels {
        return Err(Error::shape("guide colors", n * channels, colors.len()));
    }
    let one = [T::one(), T::zero(), T::zero(), T::zero()];
    Ok(SplatSet {
        channels,
        pos: vertices.to_vec(),
        color: colors.to_vec(),
        log_scale: vec![T::lit(style.log_scale); n * 3],
        rot: (0..n).flat_map(|_| one).collect(),
        opacity: vec![T::lit(style.opacity_logit); n],
    })
}

pub struct GuideRender<T> {
    pub image: FeatureImage<T>,
    splats: SplatSet<T>,
    tape: RasterTape<T>,
}

/// Renders mesh vertices (`n x 3`) with per-vertex colors (`n x channels`).
pub fn render_guide<T: Real>(
    vertices: &[T],
    colors: &[T],
    channels: usize,
    style: GuideSplatStyle,
    camera: &Camera,
) -> Result<GuideRender<T>> {
    let splats = guide_splats(vertices, colors, channels, style)?;
    let (image, tape) = rasterize(&splats, camera)?;
    Ok(GuideRender { image, splats, tape })
}

/// Gradients on vertex positions and colors.
pub fn render_guide_backward<T: Real>(
    render: &GuideRender<T>,
    d_image: &[T],
    d_alpha: Option<&[T]>,
) -> Result<(Vec<T>, Vec<T>)> {
    let g = rasterize_backward(&render.splats, &render.tape, d_image, d_alpha)?;
    Ok((g.pos, g.color))
}
