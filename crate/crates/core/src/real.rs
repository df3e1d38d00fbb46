//! Scalar abstraction so every differentiable kernel runs in both `f32`
//! (training) and `f64` (gradient checks).

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn lit(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Bit pattern widened to 64 bits, for fingerprints and determinism checks.
    fn bits(self) -> u64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn lit(x: f64) -> Self {
        x as f32
    }

    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn lit(x: f64) -> Self {
        x
    }

    fn bits(self) -> u64 {
        self.to_bits()
    }
}

#[inline(always)]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// SiLU, `x * sigmoid(x)`: the smooth relu-like activation used by every network.
#[inline(always)]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline(always)]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

pub fn cast_slice<A: Real, B: Real>(xs: &[A]) -> Vec<B> {
    xs.iter().map(|&x| B::lit(x.to_f64_lossy())).collect()
}
