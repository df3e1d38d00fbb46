use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;

/// `10 log10(1 / MSE)` for images in `[0, 1]`; infinite for identical inputs.
pub fn psnr<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("psnr images", a.len(), b.len()));
    }
    let mse = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Mean SSIM over valid 11x11 windows and over channels, for channel-last
/// images with values in `[0, 1]`.
pub fn ssim<T: Real>(a: &[T], b: &[T], width: usize, height: usize, channels: usize) -> Result<f64> {
    if a.len() != width * height * channels || b.len() != a.len() {
        return Err(Error::shape("ssim images", width * height * channels, a.len().max(b.len())));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::Invalid(format!("ssim needs images of at least {SSIM_WINDOW}px, got {width}x{height}")));
    }
    let win = gaussian_window();
    let (ow, oh) = (width - SSIM_WINDOW + 1, height - SSIM_WINDOW + 1);
    // separable filtering of x, y, x^2, y^2, xy
    let blur = |f: &dyn Fn(usize) -> f64, c: usize| -> Vec<f64> {
        let mut rows = vec![0.0; ow * height];
        for y in 0..height {
            for x in 0..ow {
                rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * f((y * width + x + k) * channels + c)).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(y + k) * ow + x]).sum();
            }
        }
        out
    };
    let fa = |i: usize| a[i].to_f64_lossy();
    let fb = |i: usize| b[i].to_f64_lossy();
    let mut total = 0.0;
    for c in 0..channels {
        let mx = blur(&fa, c);
        let my = blur(&fb, c);
        let sxx = blur(&|i| fa(i) * fa(i), c);
        let syy = blur(&|i| fb(i) * fb(i), c);
        let sxy = blur(&|i| fa(i) * fb(i), c);
        for i in 0..ow * oh {
            let (mu_x, mu_y) = (mx[i], my[i]);
            let vx = sxx[i] - mu_x * mu_x;
            let vy = syy[i] - mu_y * mu_y;
            let cov = sxy[i] - mu_x * mu_y;
            total += ((2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (vx + vy + SSIM_C2));
        }
    }
    Ok(total / (ow * oh * channels) as f64)
}

/// Appends `step,split,term,value` rows.
pub struct MetricsCsv {
    out: Box<dyn Write + Send>,
    path: String,
}

impl MetricsCsv {
    pub fn create(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "step,split,term,value").map_err(|e| Error::io(path, e))?;
        Ok(MetricsCsv {
            out: Box::new(std::io::BufWriter::new(f)),
            path: path.display().to_string(),
        })
    }

    pub fn row(&mut self, step: usize, split: &str, term: &str, value: f64) -> Result<()> {
        writeln!(self.out, "{step},{split},{term},{value}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
