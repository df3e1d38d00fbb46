use crate::error::{Error, Result};
use crate::real::{sigmoid, Real};

/// Structure-of-arrays splat cloud. Per splat: position (3), feature color
/// (`channels`), log-scale (3), rotation quaternion `[w, x, y, z]` (4, normalized
/// inside the renderer) and opacity logit (1).
#[derive(Clone, Debug, PartialEq)]
pub struct SplatSet<T> {
    pub channels: usize,
    pub pos: Vec<T>,
    pub color: Vec<T>,
    pub log_scale: Vec<T>,
    pub rot: Vec<T>,
    pub opacity: Vec<T>,
}

/// Borrowed view of one splat.
#[derive(Clone, Copy, Debug)]
pub struct Splat<'a, T> {
    pub pos: &'a [T],
    pub color: &'a [T],
    pub log_scale: &'a [T],
    pub rot: &'a [T],
    pub opacity_logit: T,
}

impl<T: Real> Splat<'_, T> {
    pub fn scale(&self) -> [T; 3] {
        [self.log_scale[0].exp(), self.log_scale[1].exp(), self.log_scale[2].exp()]
    }

    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }
}

impl<T: Real> SplatSet<T> {
    pub fn empty(channels: usize) -> Self {
        SplatSet {
            channels,
            pos: Vec::new(),
            color: Vec::new(),
            log_scale: Vec::new(),
            rot: Vec::new(),
            opacity: Vec::new(),
        }
    }

    pub fn zeros(n: usize, channels: usize) -> Self {
        SplatSet {
            channels,
            pos: vec![T::zero(); n * 3],
            color: vec![T::zero(); n * channels],
            log_scale: vec![T::zero(); n * 3],
            rot: vec![T::zero(); n * 4],
            opacity: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity.is_empty()
    }

    pub fn push(&mut self, pos: [T; 3], color: &[T], log_scale: [T; 3], rot: [T; 4], opacity_logit: T) {
        assert_eq!(color.len(), self.channels, "color width");
        self.pos.extend_from_slice(&pos);
        self.color.extend_from_slice(color);
        self.log_scale.extend_from_slice(&log_scale);
        self.rot.extend_from_slice(&rot);
        self.opacity.push(opacity_logit);
    }

    pub fn get(&self, i: usize) -> Splat<'_, T> {
        let c = self.channels;
        Splat {
            pos: &self.pos[i * 3..i * 3 + 3],
            color: &self.color[i * c..(i + 1) * c],
            log_scale: &self.log_scale[i * 3..i * 3 + 3],
            rot: &self.rot[i * 4..i * 4 + 4],
            opacity_logit: self.opacity[i],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let check = |what: &str, len: usize, per: usize| {
            if len != n * per {
                Err(Error::shape(format!("splat {what}"), n * per, len))
            } else {
                Ok(())
            }
        };
        check("positions", self.pos.len(), 3)?;
        check("colors", self.color.len(), self.channels)?;
        check("log-scales", self.log_scale.len(), 3)?;
        check("rotations", self.rot.len(), 4)?;
        for i in 0..n {
            let s = self.get(i);
            let finite = s.pos.iter().chain(s.color).chain(s.log_scale).chain(s.rot).all(|v| v.is_finite())
                && !s.opacity_logit.is_nan();
            if !finite {
                return Err(Error::NonFinite(format!("splat {i}")));
            }
            if s.rot.iter().all(|v| *v == T::zero()) {
                return Err(Error::Invalid(format!("splat {i} has a zero quaternion")));
            }
        }
        Ok(())
    }

    /// Reorders splats by `order[k]` = source index of the k-th output splat.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = SplatSet::empty(self.channels);
        for &i in order {
            let s = self.get(i);
            out.push(
                [s.pos[0], s.pos[1], s.pos[2]],
                s.color,
                [s.log_scale[0], s.log_scale[1], s.log_scale[2]],
                [s.rot[0], s.rot[1], s.rot[2], s.rot[3]],
                s.opacity_logit,
            );
        }
        out
    }

    /// FNV-1a over every field's bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self
            .pos
            .iter()
            .chain(&self.color)
            .chain(&self.log_scale)
            .chain(&self.rot)
            .chain(&self.opacity)
        {
            h ^= v.bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^ (self.channels as u64)
    }
}

/// Gradients with the same layout as a [`SplatSet`]; `rot` is with respect to
/// the raw (unnormalized) quaternion and `opacity` to the logit.
pub type SplatGrads<T> = SplatSet<T>;
